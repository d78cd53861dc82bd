#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "noisytail/errors.hpp"
#include "noisytail/pipeline.hpp"

namespace fs = std::filesystem;
using namespace noisytail;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Pipeline config (JSON); defaults are used when omitted");
  cmd->add_option("--out", c.out, "Run directory; overrides output_dir from the config");
  cmd->add_option("--seed", c.seed, "Global seed; overrides seed from the config");
}

PipelineConfig resolve(const Common& c, fs::path& out) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_pipeline_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (cfg.output_dir.empty()) throw InvalidSpec("no output directory: pass --out or set output_dir");
  cfg.validate();
  out = cfg.output_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage learning from long-tailed, label-noisy data: contrastive pre-screening,\n"
               "soft-label refurbishment and a three-expert ensemble."};
  app.require_subcommand(1);

  Common common;
  bool no_relabel = false;
  std::string sweep_param;
  std::vector<double> sweep_values;
  bool sweep_svg = false;
  std::optional<double> sigma;

  auto* simulate = app.add_subcommand("simulate", "Generate train/test splits and inject label noise");
  auto* stage1 = app.add_subcommand("stage1", "Contrastive + pre-screening classifier training");
  auto* refurbish = app.add_subcommand("refurbish", "Build soft labels from stage-1 predictions");
  auto* stage2 = app.add_subcommand("stage2", "Train the three experts on a frozen backbone");
  auto* evaluate = app.add_subcommand("evaluate", "Per-subgroup accuracy of every trained ensemble");
  auto* pipeline = app.add_subcommand("pipeline", "All of the above, both stage-2 variants and a baseline");
  auto* sweep = app.add_subcommand("sweep", "Run the pipeline over a grid of one hyperparameter");
  auto* rarity = app.add_subcommand("rarity-curve", "Tabulate the rarity score over h in [0, 1]");
  for (auto* cmd : {simulate, stage1, refurbish, stage2, evaluate, pipeline, sweep, rarity}) {
    add_common(cmd, common);
  }
  stage2->add_flag("--no-relabel", no_relabel, "Train on one-hot observed labels instead of soft labels");
  sweep->add_option("--param", sweep_param, "One of c, alpha, sigma, tau")->required();
  sweep->add_option("--values", sweep_values, "Grid values, comma separated")
      ->required()
      ->delimiter(',');
  sweep->add_flag("--svg", sweep_svg, "Also write an SVG line chart");
  rarity->add_option("--sigma", sigma, "Scale of the rarity score; defaults to refurbish.sigma");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kValidation);
  }

  try {
    fs::path out;
    CommandResult r;
    if (*rarity) {
      PipelineConfig cfg = resolve(common, out);
      r = cmd_rarity_curve(sigma.value_or(cfg.refurbish.sigma), out);
    } else {
      const PipelineConfig cfg = resolve(common, out);
      if (*simulate) r = cmd_simulate(cfg, out);
      if (*stage1) r = cmd_stage1(cfg, out);
      if (*refurbish) r = cmd_refurbish(cfg, out);
      if (*stage2) r = cmd_stage2(cfg, out, no_relabel);
      if (*evaluate) r = cmd_evaluate(cfg, out);
      if (*pipeline) r = cmd_pipeline(cfg, out);
      if (*sweep) r = cmd_sweep(cfg, SweepSpec{sweep_param, sweep_values}, out, sweep_svg);
    }
    std::cout << r.summary;
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kIo);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed artifact: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kIo);
  }
}
