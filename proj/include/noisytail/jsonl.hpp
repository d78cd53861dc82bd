#pragma once

// Small JSON / JSON Lines file helpers shared by the persistence code.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include <nlohmann/json.hpp>

namespace noisytail {

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);
  void write(const nlohmann::ordered_json& j);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

// Calls `fn(value, line_number)` for every non-blank line. Malformed JSON
// raises ParseError naming the line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const nlohmann::json&, std::size_t)>& fn);

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// FNV-1a of the file contents, hex encoded.
std::string file_hash(const std::filesystem::path& path);

}  // namespace noisytail
