#include "noisytail/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "noisytail/config_json.hpp"
#include "noisytail/errors.hpp"
#include "noisytail/jsonl.hpp"

namespace noisytail {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using json = nlohmann::json;

void PipelineConfig::validate() const {
  long_tail.validate();
  mixture.validate();
  noise.validate(long_tail.num_classes);
  stage1.validate();
  refurbish.validate();
  stage2.validate();
  thresholds.validate();
  if (test_per_class == 0) throw InvalidSpec("test_per_class must be positive");
}

ojson to_json(const PipelineConfig& cfg) {
  return {{"long_tail", to_json(cfg.long_tail)},
          {"mixture", to_json(cfg.mixture)},
          {"noise", to_json(cfg.noise)},
          {"stage1", to_json(cfg.stage1)},
          {"refurbish", to_json(cfg.refurbish)},
          {"stage2", to_json(cfg.stage2)},
          {"thresholds", to_json(cfg.thresholds)},
          {"test_per_class", cfg.test_per_class},
          {"output_dir", cfg.output_dir},
          {"seed", cfg.seed}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  if (!j.is_object()) throw InvalidSpec("config must be a JSON object");
  PipelineConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "long_tail") {
      cfg.long_tail = long_tail_from_json(value);
    } else if (key == "mixture") {
      cfg.mixture = mixture_from_json(value);
    } else if (key == "noise") {
      cfg.noise = noise_from_json(value);
    } else if (key == "stage1") {
      cfg.stage1 = stage1_config_from_json(value);
    } else if (key == "refurbish") {
      cfg.refurbish = refurbish_config_from_json(value);
    } else if (key == "stage2") {
      cfg.stage2 = stage2_config_from_json(value);
    } else if (key == "thresholds") {
      cfg.thresholds = thresholds_from_json(value);
    } else if (key == "test_per_class") {
      if (!value.is_number_integer() || value.get<std::int64_t>() < 0) {
        throw InvalidSpec("test_per_class must be a non-negative integer");
      }
      cfg.test_per_class = value.get<std::size_t>();
    } else if (key == "output_dir") {
      if (!value.is_string()) throw InvalidSpec("output_dir must be a string");
      cfg.output_dir = value.get<std::string>();
    } else if (key == "seed") {
      if (!value.is_number_unsigned()) throw InvalidSpec("seed must be a non-negative integer");
      cfg.seed = value.get<std::uint64_t>();
    } else {
      throw InvalidSpec("unknown key '" + key + "' in config");
    }
  }
  cfg.validate();
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("config file " + path.string() + " does not exist");
  json j;
  try {
    j = read_json(path);
  } catch (const ParseError& e) {
    throw InvalidSpec(e.what());
  }
  return pipeline_config_from_json(j);
}

PipelineConfig with_derived_seeds(PipelineConfig cfg) {
  cfg.stage1.seed = derive_seed(cfg.seed, "stage1");
  cfg.stage2.seed = derive_seed(cfg.seed, "stage2");
  return cfg;
}

std::string config_hash(const PipelineConfig& cfg) {
  ojson j = to_json(cfg);
  j.erase("output_dir");
  return hex64(fnv1a64(j.dump()));
}

namespace {

using Clock = std::chrono::steady_clock;

fs::path require(const fs::path& out, const char* name, const char* producer) {
  const fs::path p = out / name;
  if (!fs::exists(p)) {
    throw IoError("missing " + p.string() + " (produced by the '" + producer + "' command)");
  }
  return p;
}

void ensure_dir(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory " + out.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed on " + path.string());
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

// Builds and writes `<command>_manifest.json`.
class Manifest {
 public:
  Manifest(std::string command, const PipelineConfig& cfg, fs::path out)
      : command_(std::move(command)), cfg_(cfg), out_(std::move(out)), start_(Clock::now()) {}

  void input(const char* name) { inputs_[name] = file_hash(out_ / name); }
  void output(const char* name) { outputs_[name] = file_hash(out_ / name); }
  ojson& metrics() { return metrics_; }

  ojson finish() {
    ojson m;
    m["command"] = command_;
    m["config_hash"] = config_hash(cfg_);
    m["seed"] = cfg_.seed;
    m["profile"] = "desk-scale defaults: see config for epochs and batch sizes";
    m["config"] = to_json(cfg_);
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["metrics"] = metrics_.is_null() ? ojson::object() : metrics_;
    m["wall_time_s"] = std::chrono::duration<double>(Clock::now() - start_).count();
    write_json(out_ / (command_ + "_manifest.json"), m);
    return m;
  }

 private:
  std::string command_;
  PipelineConfig cfg_;
  fs::path out_;
  Clock::time_point start_;
  ojson inputs_ = ojson::object();
  ojson outputs_ = ojson::object();
  ojson metrics_ = ojson::object();
};

Dataset load_train(const fs::path& out, std::size_t k) {
  return load_dataset(require(out, files::kTrain, "simulate"), k);
}

// Training class sizes used for subgroup membership: true labels when the
// data carries them, observed labels otherwise.
ClassStats subgroup_counts(const Dataset& train) {
  if (train.has_true_labels()) {
    const auto tc = true_class_counts(train);
    return ClassStats::from_counts(Vec(tc.begin(), tc.end()));
  }
  return class_proportions(train);
}

}  // namespace

CommandResult cmd_simulate(const PipelineConfig& cfg_in, const fs::path& out) {
  const PipelineConfig cfg = with_derived_seeds(cfg_in);
  cfg.validate();
  ensure_dir(out);
  Manifest man("simulate", cfg, out);
  Rng rng(derive_seed(cfg.seed, "simulate"));
  TrainTestSplit split = synth_train_test(cfg.long_tail, cfg.mixture, cfg.test_per_class, rng);
  NoisyDataset noisy = inject_noise(split.train, cfg.noise, rng);

  save_dataset(noisy.dataset, out / files::kTrain);
  save_dataset(split.test, out / files::kTest);
  save_noise_mask(noisy.mask, out / files::kNoiseMask);

  const std::size_t k = cfg.long_tail.num_classes;
  std::vector<std::size_t> observed(k, 0), flipped_in(k, 0);
  const auto truth = true_class_counts(noisy.dataset);
  for (std::size_t i = 0; i < noisy.dataset.size(); ++i) {
    const Sample& s = noisy.dataset.samples[i];
    ++observed[s.observed_label];
    if (noisy.mask.noisy[i]) ++flipped_in[s.observed_label];
  }
  std::ostringstream table;
  table << "class,true_count,observed_count,noisy_observed\n";
  for (std::size_t c = 0; c < k; ++c) {
    table << c << ',' << truth[c] << ',' << observed[c] << ',' << flipped_in[c] << '\n';
  }
  write_text(out / files::kClassCounts, table.str());

  for (const char* f : {files::kTrain, files::kTest, files::kNoiseMask, files::kClassCounts}) {
    man.output(f);
  }
  const double rate = static_cast<double>(noisy.mask.noisy_count()) /
                      static_cast<double>(noisy.dataset.size());
  man.metrics() = {{"train_samples", noisy.dataset.size()},
                   {"test_samples", split.test.size()},
                   {"noisy_samples", noisy.mask.noisy_count()},
                   {"realised_noise_rate", rate}};
  CommandResult r{table.str() + "train " + std::to_string(noisy.dataset.size()) + ", test " +
                      std::to_string(split.test.size()) + ", noisy " +
                      std::to_string(noisy.mask.noisy_count()) + " (" + fmt(rate) + ")\n",
                  {}};
  r.manifest = man.finish();
  return r;
}

CommandResult cmd_stage1(const PipelineConfig& cfg_in, const fs::path& out) {
  const PipelineConfig cfg = with_derived_seeds(cfg_in);
  cfg.validate();
  Manifest man("stage1", cfg, out);
  const Dataset train = load_train(out, cfg.long_tail.num_classes);
  man.input(files::kTrain);

  const Stage1Result res = train_stage1(train, cfg.stage1);
  save_stage1_checkpoint(res.model, cfg.stage1, out / files::kStage1Checkpoint);
  save_predictions(res.predictions, train, out / files::kStage1Predictions);
  std::ostringstream log;
  log << "epoch,contrastive,classifier,total\n";
  for (const Stage1EpochLog& l : res.log) {
    log << l.epoch << ',' << fmt(l.contrastive_loss, 6) << ',' << fmt(l.classifier_loss, 6) << ','
        << fmt(l.total_loss, 6) << '\n';
  }
  write_text(out / files::kStage1Log, log.str());
  for (const char* f : {files::kStage1Checkpoint, files::kStage1Predictions, files::kStage1Log}) {
    man.output(f);
  }

  ojson& m = man.metrics();
  m["accuracy_vs_observed"] = prediction_accuracy(res.predictions, train, false);
  std::string summary = "stage1: agreement with observed labels " + fmt(m["accuracy_vs_observed"]);
  if (train.has_true_labels()) {
    m["accuracy_vs_true"] = prediction_accuracy(res.predictions, train, true);
    summary += ", accuracy vs true labels " + fmt(m["accuracy_vs_true"]);
  }
  if (!res.log.empty()) {
    m["final_contrastive_loss"] = res.log.back().contrastive_loss;
    m["final_classifier_loss"] = res.log.back().classifier_loss;
  }
  CommandResult r{summary + "\n", {}};
  r.manifest = man.finish();
  return r;
}

CommandResult cmd_refurbish(const PipelineConfig& cfg_in, const fs::path& out) {
  const PipelineConfig cfg = with_derived_seeds(cfg_in);
  cfg.validate();
  Manifest man("refurbish", cfg, out);
  const Dataset train = load_train(out, cfg.long_tail.num_classes);
  const auto preds = load_predictions(require(out, files::kStage1Predictions, "stage1"));
  man.input(files::kTrain);
  man.input(files::kStage1Predictions);

  const RefurbishResult res = refurbish_dataset(train, preds, cfg.refurbish);
  save_refurbished(res, out / files::kRefurbished);
  man.output(files::kRefurbished);

  const RefurbishSummary& s = res.summary;
  ojson& m = man.metrics();
  m["samples"] = s.samples;
  m["changed"] = s.changed;
  m["fraction_changed"] = s.fraction_changed;
  m["mean_weight_changed"] = s.mean_weight_changed;
  std::string summary = "refurbish: " + std::to_string(s.changed) + " of " +
                        std::to_string(s.samples) + " labels softened";
  if (s.soft_argmax_accuracy) {
    m["soft_argmax_accuracy"] = *s.soft_argmax_accuracy;
    m["observed_accuracy"] = *s.observed_accuracy;
    summary += ", argmax accuracy " + fmt(*s.soft_argmax_accuracy) + " vs observed " +
               fmt(*s.observed_accuracy);
  }
  CommandResult r{summary + "\n", {}};
  r.manifest = man.finish();
  return r;
}

CommandResult cmd_stage2(const PipelineConfig& cfg_in, const fs::path& out, bool no_relabel) {
  const PipelineConfig cfg = with_derived_seeds(cfg_in);
  cfg.validate();
  Manifest man(no_relabel ? "stage2_no_relabel" : "stage2", cfg, out);
  const Dataset train = load_train(out, cfg.long_tail.num_classes);
  const Stage1Checkpoint ck = load_stage1_checkpoint(require(out, files::kStage1Checkpoint, "stage1"));
  man.input(files::kTrain);
  man.input(files::kStage1Checkpoint);

  std::vector<SoftLabel> labels;
  if (no_relabel) {
    labels = observed_one_hot_labels(train);
  } else {
    const auto recs = load_refurbished(require(out, files::kRefurbished, "refurbish"), train.num_classes);
    man.input(files::kRefurbished);
    if (recs.size() != train.size()) {
      throw InvalidInput(std::string(files::kRefurbished) + " has " + std::to_string(recs.size()) +
                         " records for " + std::to_string(train.size()) + " samples");
    }
    labels.reserve(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (recs[i].id != train.samples[i].id) {
        throw InvalidInput("refurbished record " + std::to_string(i) + " has id " +
                           std::to_string(recs[i].id) + ", expected " +
                           std::to_string(train.samples[i].id));
      }
      labels.push_back(recs[i].soft_label);
    }
  }

  const Stage2Result res = train_stage2(train, labels, ck.model.encoder, cfg.stage2);
  const char* ckpt = no_relabel ? files::kEnsembleNoRelabel : files::kEnsemble;
  const char* logf = no_relabel ? files::kStage2LogNoRelabel : files::kStage2Log;
  save_ensemble_checkpoint(res.model, !no_relabel, out / ckpt);
  std::ostringstream log;
  log << "epoch,E1,E2,E3\n";
  for (const Stage2EpochLog& l : res.log) {
    log << l.epoch;
    for (double v : l.expert_loss) log << ',' << fmt(v, 6);
    log << '\n';
  }
  write_text(out / logf, log.str());
  man.output(ckpt);
  man.output(logf);

  ojson& m = man.metrics();
  m["variant"] = no_relabel ? kVariantNoRelabel : kVariantFull;
  m["soft_class_counts"] = res.counts.counts;
  if (!res.log.empty()) {
    ojson last = ojson::object();
    for (std::size_t e = 0; e < kNumExperts; ++e) last[kExpertNames[e]] = res.log.back().expert_loss[e];
    m["final_expert_loss"] = last;
  }
  CommandResult r{std::string("stage2 (") + (no_relabel ? kVariantNoRelabel : kVariantFull) +
                      "): experts trained, checkpoint " + ckpt + "\n",
                  {}};
  r.manifest = man.finish();
  return r;
}

CommandResult cmd_baseline(const PipelineConfig& cfg_in, const fs::path& out) {
  PipelineConfig cfg = with_derived_seeds(cfg_in);
  cfg.validate();
  Manifest man("baseline", cfg, out);
  const Dataset train = load_train(out, cfg.long_tail.num_classes);
  man.input(files::kTrain);
  Stage1Config bcfg = cfg.stage1;
  bcfg.seed = derive_seed(cfg.seed, "baseline");
  const Stage1Result res = train_supervised_baseline(train, bcfg);
  save_stage1_checkpoint(res.model, bcfg, out / files::kBaseline);
  man.output(files::kBaseline);
  man.metrics()["accuracy_vs_observed"] = prediction_accuracy(res.predictions, train, false);
  CommandResult r{"baseline: cross-entropy reference trained\n", {}};
  r.manifest = man.finish();
  return r;
}

CommandResult cmd_evaluate(const PipelineConfig& cfg_in, const fs::path& out) {
  const PipelineConfig cfg = with_derived_seeds(cfg_in);
  cfg.validate();
  Manifest man("evaluate", cfg, out);
  const Dataset train = load_train(out, cfg.long_tail.num_classes);
  const Dataset test = load_dataset(require(out, files::kTest, "simulate"), cfg.long_tail.num_classes);
  if (!test.has_true_labels()) throw InvalidInput("test split needs true labels");
  const Stage1Checkpoint s1 = load_stage1_checkpoint(require(out, files::kStage1Checkpoint, "stage1"));
  man.input(files::kTrain);
  man.input(files::kTest);
  man.input(files::kStage1Checkpoint);

  const bool have_full = fs::exists(out / files::kEnsemble);
  const bool have_plain = fs::exists(out / files::kEnsembleNoRelabel);
  if (!have_full && !have_plain) {
    throw IoError("missing " + (out / files::kEnsemble).string() + " (produced by the 'stage2' command)");
  }
  const ClassStats counts = subgroup_counts(train);
  const std::vector<Prediction> s1_test = predict_all(s1.model, test);
  std::optional<std::vector<Prediction>> base_test;
  if (fs::exists(out / files::kBaseline)) {
    base_test = predict_all(load_stage1_checkpoint(out / files::kBaseline).model, test);
    man.input(files::kBaseline);
  }

  std::string summary;
  ojson& m = man.metrics();
  auto run = [&](const char* ckpt, const char* json_name, const char* csv_name, const char* variant) {
    const EnsembleCheckpoint ec = load_ensemble_checkpoint(out / ckpt, s1.model.encoder);
    man.input(ckpt);
    EvalReport rep = evaluate(ec.model, test, counts, cfg.thresholds);
    rep.variant = variant;
    rep.rows.push_back(accuracy_by_subgroup("Stage1", s1_test, test, rep.class_subgroups));
    if (base_test) rep.rows.push_back(accuracy_by_subgroup("Baseline CE", *base_test, test, rep.class_subgroups));
    write_json(out / json_name, eval_report_to_json(rep));
    const std::string csv = eval_report_csv(rep);
    write_text(out / csv_name, csv);
    man.output(json_name);
    man.output(csv_name);
    m[variant] = {{"overall_accuracy", rep.overall_accuracy}};
    summary += std::string("variant ") + variant + "\n" + csv;
  };
  if (have_full) run(files::kEnsemble, files::kEvalJson, files::kEvalCsv, kVariantFull);
  if (have_plain) {
    run(files::kEnsembleNoRelabel, files::kEvalJsonNoRelabel, files::kEvalCsvNoRelabel, kVariantNoRelabel);
  }
  CommandResult r{summary, {}};
  r.manifest = man.finish();
  return r;
}

AblationSummary read_ablation(const fs::path& out) {
  AblationSummary a;
  auto report = [&](const char* name, const char* producer) {
    const json j = read_json(require(out, name, producer));
    EvalReport rep;
    rep.variant = j.at("variant").get<std::string>();
    rep.overall_accuracy = j.at("overall_accuracy").get<double>();
    for (const auto& row : j.at("rows")) {
      GroupAccuracy g;
      g.model = row.at("model").get<std::string>();
      for (std::size_t s = 0; s < 3; ++s) {
        const auto& v = row.at(kSubgroupNames[s]);
        g.subgroup[s] = v.is_null() ? std::nan("") : v.get<double>();
      }
      g.all = row.at("all").get<double>();
      rep.rows.push_back(g);
    }
    return rep;
  };
  a.full = report(files::kEvalJson, "evaluate");
  a.no_relabel = report(files::kEvalJsonNoRelabel, "evaluate");
  const json s1 = read_json(require(out, "stage1_manifest.json", "stage1"));
  a.stage1_train_accuracy = s1.at("metrics").value("accuracy_vs_true", std::nan(""));
  const json rf = read_json(require(out, "refurbish_manifest.json", "refurbish"));
  a.observed_label_accuracy = rf.at("metrics").value("observed_accuracy", std::nan(""));
  a.baseline_accuracy = a.full.row("Baseline CE").all;
  return a;
}

CommandResult cmd_pipeline(const PipelineConfig& cfg_in, const fs::path& out) {
  const PipelineConfig cfg = with_derived_seeds(cfg_in);
  cfg.validate();
  const auto start = Clock::now();
  std::string summary;
  summary += cmd_simulate(cfg, out).summary;
  summary += cmd_stage1(cfg, out).summary;
  summary += cmd_refurbish(cfg, out).summary;
  summary += cmd_stage2(cfg, out, false).summary;
  summary += cmd_stage2(cfg, out, true).summary;
  summary += cmd_baseline(cfg, out).summary;
  summary += cmd_evaluate(cfg, out).summary;

  const AblationSummary a = read_ablation(out);
  std::ostringstream csv;
  csv << "quantity,value\n"
      << "stage1_train_accuracy_vs_true," << fmt(a.stage1_train_accuracy) << '\n'
      << "observed_label_accuracy," << fmt(a.observed_label_accuracy) << '\n'
      << "stage2_full_all," << fmt(a.full.overall_accuracy) << '\n'
      << "stage2_no_relabel_all," << fmt(a.no_relabel.overall_accuracy) << '\n'
      << "baseline_ce_all," << fmt(a.baseline_accuracy) << '\n';
  write_text(out / files::kAblation, csv.str());

  ojson m;
  m["command"] = "pipeline";
  m["config_hash"] = config_hash(cfg);
  m["seed"] = cfg.seed;
  m["config"] = to_json(cfg);
  m["outputs"] = {{files::kAblation, file_hash(out / files::kAblation)}};
  m["metrics"] = {{"stage1_train_accuracy_vs_true", a.stage1_train_accuracy},
                  {"observed_label_accuracy", a.observed_label_accuracy},
                  {"stage2_full_all", a.full.overall_accuracy},
                  {"stage2_no_relabel_all", a.no_relabel.overall_accuracy},
                  {"baseline_ce_all", a.baseline_accuracy}};
  m["wall_time_s"] = std::chrono::duration<double>(Clock::now() - start).count();
  write_json(out / "pipeline_manifest.json", m);
  return {summary + "ablation\n" + csv.str(), m};
}

void SweepSpec::validate() const {
  if (parameter != "c" && parameter != "alpha" && parameter != "sigma" && parameter != "tau") {
    throw InvalidSpec("sweep parameter must be one of c, alpha, sigma, tau (got '" + parameter + "')");
  }
  if (values.empty()) throw InvalidSpec("sweep grid is empty");
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidSpec("sweep values must be finite");
    if (parameter == "c" && v < 0.0) throw InvalidSpec("c must be >= 0");
    if (parameter == "alpha" && (v < 0.0 || v > 1.0)) throw InvalidSpec("alpha must lie in [0, 1]");
    if ((parameter == "sigma" || parameter == "tau") && !(v > 0.0)) {
      throw InvalidSpec(parameter + " must be positive");
    }
  }
}

CommandResult cmd_sweep(const PipelineConfig& cfg_in, const SweepSpec& sweep, const fs::path& out,
                        bool svg) {
  sweep.validate();
  const PipelineConfig base = with_derived_seeds(cfg_in);
  base.validate();
  ensure_dir(out);
  const auto start = Clock::now();

  std::vector<SweepRow> rows;
  for (double v : sweep.values) {
    PipelineConfig cfg = base;
    if (sweep.parameter == "c") cfg.stage1.c = v;
    if (sweep.parameter == "alpha") cfg.stage1.alpha = v;
    if (sweep.parameter == "sigma") cfg.refurbish.sigma = v;
    if (sweep.parameter == "tau") cfg.stage1.tau = v;
    const std::string h = config_hash(cfg);
    const fs::path run = out / "runs" / h;
    cmd_pipeline(cfg, run);
    rows.push_back({v, read_ablation(run).full.overall_accuracy, h});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SweepRow& a, const SweepRow& b) { return a.value < b.value; });

  std::ostringstream csv;
  csv << sweep.parameter << ",accuracy,config_hash\n";
  for (const SweepRow& r : rows) csv << fmt(r.value, 6) << ',' << fmt(r.accuracy, 6) << ',' << r.config_hash << '\n';
  const std::string csv_name = "sweep_" + sweep.parameter + ".csv";
  write_text(out / csv_name, csv.str());

  const SweepRow best = *std::max_element(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.accuracy < b.accuracy;
  });
  const std::string best_line =
      "best " + sweep.parameter + "=" + fmt(best.value, 6) + " accuracy=" + fmt(best.accuracy, 6);

  ojson m;
  m["command"] = "sweep";
  m["config_hash"] = config_hash(base);
  m["seed"] = base.seed;
  m["config"] = to_json(base);
  m["sweep"] = {{"parameter", sweep.parameter}, {"values", sweep.values}};
  m["outputs"] = {{csv_name, file_hash(out / csv_name)}};
  if (svg) {
    std::vector<double> xs, ys;
    for (const SweepRow& r : rows) {
      xs.push_back(r.value);
      ys.push_back(r.accuracy);
    }
    const std::string svg_name = "sweep_" + sweep.parameter + ".svg";
    write_text(out / svg_name, svg_line_chart(xs, ys, sweep.parameter, "accuracy"));
    m["outputs"][svg_name] = file_hash(out / svg_name);
  }
  m["metrics"] = {{"best_value", best.value}, {"best_accuracy", best.accuracy}};
  m["wall_time_s"] = std::chrono::duration<double>(Clock::now() - start).count();
  write_json(out / "sweep_manifest.json", m);
  return {csv.str() + best_line + "\n", m};
}

std::vector<SweepRow> read_sweep_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<SweepRow> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (++n == 1 || line.empty()) continue;
    std::istringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c)) {
      throw ParseError(path.string(), n, "expected three columns");
    }
    try {
      rows.push_back({std::stod(a), std::stod(b), c});
    } catch (const std::exception&) {
      throw ParseError(path.string(), n, "non-numeric value");
    }
  }
  return rows;
}

CommandResult cmd_rarity_curve(double sigma, const fs::path& out) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidSpec("sigma must be positive");
  ensure_dir(out);
  std::vector<double> hs, gs;
  std::ostringstream csv;
  csv << "h,gamma\n" << std::setprecision(17);
  for (int i = 0; i <= 100; ++i) {
    const double h = i / 100.0;
    const double g = rarity(h, sigma);
    hs.push_back(h);
    gs.push_back(g);
    csv << h << ',' << g << '\n';
  }
  write_text(out / files::kRarityCsv, csv.str());
  write_text(out / files::kRaritySvg, svg_line_chart(hs, gs, "h", "gamma"));
  ojson m;
  m["command"] = "rarity-curve";
  m["sigma"] = sigma;
  m["outputs"] = {{files::kRarityCsv, file_hash(out / files::kRarityCsv)},
                  {files::kRaritySvg, file_hash(out / files::kRaritySvg)}};
  write_json(out / "rarity-curve_manifest.json", m);
  return {"rarity curve: 101 rows written to " + (out / files::kRarityCsv).string() + "\n", m};
}

std::string svg_line_chart(const std::vector<double>& xs, const std::vector<double>& ys,
                           const std::string& x_label, const std::string& y_label) {
  if (xs.size() != ys.size() || xs.empty()) throw InvalidInput("chart needs matching, non-empty series");
  constexpr double w = 480, h = 320, pad = 48;
  auto [xlo, xhi] = std::minmax_element(xs.begin(), xs.end());
  auto [ylo, yhi] = std::minmax_element(ys.begin(), ys.end());
  const double x0 = *xlo, xs_span = std::max(*xhi - *xlo, 1e-12);
  const double y0 = *ylo, ys_span = std::max(*yhi - *ylo, 1e-12);
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
    << "\" stroke=\"black\"/>\n";
  s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double px = pad + (xs[i] - x0) / xs_span * (w - 2 * pad);
    const double py = h - pad - (ys[i] - y0) / ys_span * (h - 2 * pad);
    s << (i ? " " : "") << px << ',' << py;
  }
  s << "\"/>\n";
  s << std::setprecision(4);
  s << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">" << x_label << " ["
    << x0 << ", " << *xhi << "]</text>\n";
  s << "<text x=\"14\" y=\"" << h / 2 << "\" transform=\"rotate(-90 14," << h / 2
    << ")\" text-anchor=\"middle\">" << y_label << " [" << y0 << ", " << *yhi << "]</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace noisytail
