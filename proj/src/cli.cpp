#include "actionset/cli.hpp"

#include <fcntl.h>
#include <fmt/format.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "actionset/config.hpp"
#include "actionset/errors.hpp"
#include "actionset/evaluation.hpp"
#include "actionset/synthdata.hpp"
#include "actionset/training.hpp"

namespace actionset {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PrerequisiteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exclusive marker file guarding an output directory for one invocation.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".actionset.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw LockError(fmt::format("output directory '{}' is in use (remove '{}' if no run is active)",
                                  dir.string(), path_.string()));
    }
  }
  ~DirLock() {
    ::close(fd_);
    ::unlink(path_.c_str());
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

struct Configs {
  TrainConfig train;
  GeneratorConfig data;
  std::string digest;
};

Configs load_configs(const CommonOptions& common) {
  KeyValues kv = common.config_path.empty() ? KeyValues::parse(std::string{})
                                            : KeyValues::load(common.config_path);
  Configs c;
  c.train = train_config_from(kv);
  c.data = generator_config_from(kv);
  kv.require_all_consumed();
  if (common.seed) c.train.seed = *common.seed;
  c.train.validate();
  c.data.validate();
  c.digest = config_digest(to_key_values(c.train) + to_key_values(c.data));
  return c;
}

using Manifest = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const fs::path& dir, const std::string& name, const std::string& command,
                    const CommonOptions& common, const Configs& configs, Manifest entries) {
  std::string text;
  text += "command = " + command + "\n";
  text += "config = " + (common.config_path.empty() ? std::string("(defaults)") : common.config_path) + "\n";
  text += "config_digest = " + configs.digest + "\n";
  text += fmt::format("seed = {}\n", configs.train.seed);
  for (const auto& [key, value] : entries) text += key + " = " + value + "\n";
  text += fmt::format("tool_version = {}\n", kToolVersion);
  const fs::path path = dir / ("manifest-" + name + ".txt");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
}

fs::path or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

Dataset load_data(const fs::path& path) {
  if (!fs::exists(path)) {
    throw PrerequisiteError(fmt::format("missing prerequisite: dataset '{}' (run `generate-data` first)",
                                        path.string()));
  }
  return read_dataset(path);
}

Checkpoint load_stage_input(const fs::path& path, const TrainConfig& config,
                            const std::vector<StageMarker>& accepted, const std::string& producer) {
  if (!fs::exists(path)) {
    throw PrerequisiteError(fmt::format("missing prerequisite: checkpoint '{}' (run `{}` first)",
                                        path.string(), producer));
  }
  Checkpoint c = load_checkpoint(path, &config);
  if (c.config.seed != config.seed) {
    throw PrerequisiteError(fmt::format(
        "checkpoint '{}' was produced with seed {} but seed {} was requested (rerun earlier stages)",
        path.string(), c.config.seed, config.seed));
  }
  if (std::find(accepted.begin(), accepted.end(), c.stage) == accepted.end()) {
    std::string names;
    for (StageMarker m : accepted) names += (names.empty() ? "" : " or ") + to_string(m);
    throw PrerequisiteError(fmt::format("checkpoint '{}' is at stage '{}' but {} is required (run `{}` first)",
                                        path.string(), to_string(c.stage), names, producer));
  }
  return c;
}

/// Most advanced trained checkpoint in `dir` unless one is given.
fs::path trained_checkpoint(const std::string& given, const fs::path& dir) {
  if (!given.empty()) return given;
  for (const char* name : {"unified.ckpt", "dual.ckpt", "base.ckpt"}) {
    if (fs::exists(dir / name)) return dir / name;
  }
  throw PrerequisiteError(fmt::format(
      "missing prerequisite: no trained checkpoint in '{}' (run `train --stage base` first)", dir.string()));
}

void write_log(const fs::path& path, const std::vector<EpochLog>& rows) {
  std::error_code ec;
  fs::remove(path, ec);
  append_training_log(path, rows);
}

void save_stage(const fs::path& path, const TrainConfig& config, const ModelState& model,
                StageMarker marker, const Rng& rng) {
  Checkpoint c;
  c.config = config;
  c.model = model;
  c.stage = marker;
  c.rng_state = rng_state(rng);
  save_checkpoint(c, path);
}

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_generate(const CommonOptions& common, std::ostream& out) {
  const Configs configs = load_configs(common);
  const fs::path dir = common.out_dir;
  DirLock lock(dir);
  GeneratorConfig gen = configs.data;
  gen.horizon = configs.train.horizon;
  const Dataset data = generate_dataset(gen, configs.train.seed);
  const fs::path path = dir / "dataset.jsonl";
  write_dataset(data, path);
  write_manifest(dir, "generate-data", "generate-data", common, configs,
                 {{"output.dataset", path.generic_string()}, {"samples", std::to_string(data.size())}});
  out << fmt::format("generate-data: wrote {} samples to {}\n", data.size(), path.generic_string());
  return kExitOk;
}

int cmd_pretrain(const CommonOptions& common, const std::string& data_arg, std::ostream& out,
                 std::ostream& err) {
  const Configs configs = load_configs(common);
  const fs::path dir = common.out_dir;
  const fs::path data_path = or_default(data_arg, dir / "dataset.jsonl");
  DirLock lock(dir);
  const Dataset data = load_data(data_path);
  const DataSplit split = split_holdout(data, configs.train.holdout_fraction);
  const auto train = training_view(split.train);
  const auto holdout = training_view(split.holdout);

  Rng rng(training_seed(configs.train.seed));
  ModelState model = initialize_model(configs.train, rng);
  PretrainResult result = pretrain_vae(std::move(model), train, holdout, configs.train, rng);
  const fs::path ckpt = dir / "pretrained.ckpt";
  const fs::path log = dir / "log-pretrain.csv";
  save_stage(ckpt, configs.train, result.stage.model, StageMarker::pretrained, rng);
  write_log(log, result.stage.history);
  write_manifest(dir, "pretrain", "pretrain", common, configs,
                 {{"input.dataset", data_path.generic_string()},
                  {"output.checkpoint", ckpt.generic_string()},
                  {"output.log", log.generic_string()},
                  {"holdout_reconstruction_ade", fmt::format("{:.17g}", result.holdout_ade)}});
  out << fmt::format("pretrain: {} epochs, held-out reconstruction ADE {:.4f} m\n",
                     result.stage.history.size(), result.holdout_ade);
  if (!(result.holdout_ade < configs.train.recon_gate)) {
    err << fmt::format("actionset-warning: gate: held-out reconstruction ADE {:.4f} m is not below {:.4f} m\n",
                       result.holdout_ade, configs.train.recon_gate);
  }
  return kExitOk;
}

int cmd_init_clusters(const CommonOptions& common, const std::string& data_arg,
                      const std::string& ckpt_arg, std::ostream& out) {
  const Configs configs = load_configs(common);
  const fs::path dir = common.out_dir;
  const fs::path data_path = or_default(data_arg, dir / "dataset.jsonl");
  const fs::path in_path = or_default(ckpt_arg, dir / "pretrained.ckpt");
  DirLock lock(dir);
  Checkpoint input = load_stage_input(in_path, configs.train, {StageMarker::pretrained}, "pretrain");
  const Dataset data = load_data(data_path);
  const auto train = training_view(split_holdout(data, configs.train.holdout_fraction).train);

  Rng rng = rng_from_state(input.rng_state);
  ModelState model = init_mixture(std::move(input.model), train, configs.train, rng);
  const fs::path ckpt = dir / "clusters.ckpt";
  save_stage(ckpt, configs.train, model, StageMarker::clusters, rng);
  write_manifest(dir, "init-clusters", "init-clusters", common, configs,
                 {{"input.dataset", data_path.generic_string()},
                  {"input.checkpoint", in_path.generic_string()},
                  {"output.checkpoint", ckpt.generic_string()}});
  out << fmt::format("init-clusters: {} components placed\n", model.dims.actions);
  return kExitOk;
}

int cmd_train(const CommonOptions& common, const std::string& stage_arg, const std::string& data_arg,
              const std::string& ckpt_arg, std::ostream& out) {
  Configs configs = load_configs(common);
  Stage stage = configs.train.stage;
  if (!stage_arg.empty()) {
    try {
      stage = stage_from_string(stage_arg);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  configs.train.stage = stage;
  const fs::path dir = common.out_dir;
  const fs::path data_path = or_default(data_arg, dir / "dataset.jsonl");

  fs::path default_input;
  std::vector<StageMarker> accepted = {StageMarker::clusters};
  std::string producer = "init-clusters";
  StageMarker marker = StageMarker::base;
  switch (stage) {
    case Stage::base:
      default_input = dir / "clusters.ckpt";
      break;
    case Stage::dual:
      default_input = dir / "base.ckpt";
      accepted = {StageMarker::base};
      producer = "train --stage base";
      marker = StageMarker::dual;
      break;
    case Stage::unified:
      default_input = dir / "clusters.ckpt";
      accepted = {StageMarker::clusters, StageMarker::base, StageMarker::dual};
      marker = StageMarker::unified;
      break;
  }
  const fs::path in_path = or_default(ckpt_arg, default_input);
  DirLock lock(dir);
  Checkpoint input = load_stage_input(in_path, configs.train, accepted, producer);
  const Dataset data = load_data(data_path);
  const auto train = training_view(split_holdout(data, configs.train.holdout_fraction).train);

  Rng rng = rng_from_state(input.rng_state);
  StageResult result;
  switch (stage) {
    case Stage::base: result = train_base(std::move(input.model), train, configs.train, rng); break;
    case Stage::dual: result = train_dual(std::move(input.model), train, configs.train, rng); break;
    case Stage::unified: result = train_unified(std::move(input.model), train, configs.train, rng); break;
  }
  const std::string name = to_string(stage);
  const fs::path ckpt = dir / (name + ".ckpt");
  const fs::path log = dir / ("log-" + name + ".csv");
  save_stage(ckpt, configs.train, result.model, marker, rng);
  write_log(log, result.history);
  write_manifest(dir, "train-" + name, "train --stage " + name, common, configs,
                 {{"input.dataset", data_path.generic_string()},
                  {"input.checkpoint", in_path.generic_string()},
                  {"output.checkpoint", ckpt.generic_string()},
                  {"output.log", log.generic_string()},
                  {"early_stopped", result.early_stopped ? "true" : "false"}});
  out << fmt::format("train {}: {} epochs{}, final objective {:.4f}\n", name, result.history.size(),
                     result.early_stopped ? " (early stop)" : "",
                     result.history.empty() ? 0.0 : result.history.back().total);
  return kExitOk;
}

int cmd_predict(const CommonOptions& common, const std::string& mode_arg, double threshold,
                std::size_t index, const std::string& data_arg, const std::string& ckpt_arg,
                std::ostream& out) {
  const Configs configs = load_configs(common);
  if (!(threshold >= 0.0 && threshold < 1.0)) {
    throw UsageError(fmt::format("--threshold {} outside [0, 1)", threshold));
  }
  PredictMode mode;
  try {
    mode = predict_mode_from_string(mode_arg);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const fs::path dir = common.out_dir;
  const fs::path data_path = or_default(data_arg, dir / "dataset.jsonl");
  const fs::path in_path = trained_checkpoint(ckpt_arg, dir);
  DirLock lock(dir);
  const Checkpoint input = load_stage_input(in_path, configs.train,
                                            {StageMarker::base, StageMarker::dual, StageMarker::unified},
                                            "train --stage base");
  const auto samples = training_view(load_data(data_path).samples);
  if (index >= samples.size()) {
    throw UsageError(fmt::format("--sample {} out of range (dataset has {} samples)", index, samples.size()));
  }
  const TrainingSample& sample = samples[index];
  const Prediction pred = predict(input.model, sample.scenario, mode, threshold);
  const std::string stem = fmt::format("prediction-{}-{}", index, to_string(mode));
  export_plots(pred, sample.trajectory, dir, stem);
  write_manifest(dir, stem, fmt::format("predict --mode {} --threshold {:.17g} --sample {}",
                                        to_string(mode), threshold, index),
                 common, configs,
                 {{"input.dataset", data_path.generic_string()},
                  {"input.checkpoint", in_path.generic_string()},
                  {"output.csv", (dir / (stem + ".csv")).generic_string()},
                  {"output.svg", (dir / (stem + ".svg")).generic_string()}});
  for (const auto& a : pred.actions) {
    out << fmt::format("action {} probability {:.6f} ade {:.4f}\n", a.action, a.probability,
                       average_displacement(a.mean(), sample.trajectory));
  }
  return kExitOk;
}

int cmd_eval(const CommonOptions& common, double threshold, int noise_draws,
             const std::string& data_arg, const std::string& ckpt_arg, std::ostream& out) {
  const Configs configs = load_configs(common);
  if (noise_draws < 1) throw UsageError("--noise-draws must be positive");
  const double shown = threshold < 0 ? configs.train.effective_threshold : threshold;
  if (!(shown >= 0.0 && shown < 1.0)) throw UsageError(fmt::format("--threshold {} outside [0, 1)", shown));
  const fs::path dir = common.out_dir;
  const fs::path data_path = or_default(data_arg, dir / "dataset.jsonl");
  const fs::path in_path = trained_checkpoint(ckpt_arg, dir);
  DirLock lock(dir);
  const Checkpoint input = load_stage_input(in_path, configs.train,
                                            {StageMarker::base, StageMarker::dual, StageMarker::unified},
                                            "train --stage base");
  const Dataset data = load_data(data_path);
  const auto holdout = split_holdout(data, configs.train.holdout_fraction).holdout;
  Rng rng(training_seed(configs.train.seed));
  const MetricsReport report = evaluate_model(input.model, holdout, shown, noise_draws, rng);
  const std::string text = "checkpoint_stage = " + to_string(input.stage) + "\n" + to_key_values(report);
  const fs::path path = dir / "metrics.txt";
  {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    file << text;
    if (!file) throw IoError("cannot write metrics '" + path.string() + "'");
  }
  write_manifest(dir, "eval", "eval", common, configs,
                 {{"input.dataset", data_path.generic_string()},
                  {"input.checkpoint", in_path.generic_string()},
                  {"output.metrics", path.generic_string()}});
  out << text;
  return kExitOk;
}

int cmd_export(const CommonOptions& common, double threshold, const std::string& data_arg,
               const std::string& ckpt_arg, std::ostream& out) {
  const Configs configs = load_configs(common);
  const double shown = threshold < 0 ? configs.train.effective_threshold : threshold;
  if (!(shown >= 0.0 && shown < 1.0)) throw UsageError(fmt::format("--threshold {} outside [0, 1)", shown));
  const fs::path dir = common.out_dir;
  const fs::path data_path = or_default(data_arg, dir / "dataset.jsonl");
  const fs::path in_path = trained_checkpoint(ckpt_arg, dir);
  DirLock lock(dir);
  const Checkpoint input = load_stage_input(in_path, configs.train,
                                            {StageMarker::base, StageMarker::dual, StageMarker::unified},
                                            "train --stage base");
  const auto samples = training_view(load_data(data_path).samples);
  const Prediction set = action_set(input.model, samples, shown);
  export_plots(set, std::nullopt, dir, "actions", true);
  write_manifest(dir, "export-actions", "export-actions", common, configs,
                 {{"input.dataset", data_path.generic_string()},
                  {"input.checkpoint", in_path.generic_string()},
                  {"output.csv", (dir / "actions.csv").generic_string()},
                  {"output.svg", (dir / "actions.svg").generic_string()}});
  out << fmt::format("export-actions: {} effective actions\n", set.actions.size());
  return kExitOk;
}

int report(std::ostream& err, int code, const std::string& category, const std::string& message) {
  err << "actionset-error: " << category << ": " << one_line(message) << '\n';
  return code;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learn and inspect discrete driving actions from trajectory data", "actionset"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  CommonOptions common;
  std::string data_arg, ckpt_arg, stage_arg, mode_arg = "posterior";
  double threshold = kDefaultThreshold;
  double eval_threshold = -1.0;
  std::size_t sample_index = 0;
  int noise_draws = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Key-value config file (defaults when omitted)");
    sub->add_option("--seed", common.seed, "Override the configured seed");
    sub->add_option("--out", common.out_dir, "Working directory for inputs and outputs")
        ->capture_default_str();
  };
  auto add_inputs = [&](CLI::App* sub) {
    sub->add_option("--data", data_arg, "Dataset file (default: <out>/dataset.jsonl)");
    sub->add_option("--checkpoint", ckpt_arg, "Input checkpoint (default: stage-specific file in <out>)");
  };

  auto* generate = app.add_subcommand("generate-data", "Write a synthetic dataset");
  add_common(generate);
  auto* pretrain = app.add_subcommand("pretrain", "Fit standardizers and pretrain encoder/decoder");
  add_common(pretrain);
  pretrain->add_option("--data", data_arg, "Dataset file (default: <out>/dataset.jsonl)");
  auto* init = app.add_subcommand("init-clusters", "Place mixture components with k-means");
  add_common(init);
  add_inputs(init);
  auto* train = app.add_subcommand("train", "Run one training stage");
  add_common(train);
  add_inputs(train);
  train->add_option("--stage", stage_arg, "base, dual or unified (default: config 'stage')")
      ->check(CLI::IsMember({"base", "dual", "unified"}));
  auto* predict_cmd = app.add_subcommand("predict", "Decode per-action trajectory fans for one sample");
  add_common(predict_cmd);
  add_inputs(predict_cmd);
  predict_cmd->add_option("--mode", mode_arg, "prior or posterior")
      ->check(CLI::IsMember({"prior", "posterior"}))
      ->capture_default_str();
  predict_cmd->add_option("--threshold", threshold, "Minimum p(y|s) for an action to be shown")
      ->capture_default_str();
  predict_cmd->add_option("--sample", sample_index, "Index of the sample in the dataset")
      ->capture_default_str();
  auto* eval = app.add_subcommand("eval", "Metrics on the held-out split");
  add_common(eval);
  add_inputs(eval);
  eval->add_option("--threshold", eval_threshold, "Effective-action threshold (default: config)");
  eval->add_option("--noise-draws", noise_draws, "Noise draws per sample for objective estimates")
      ->capture_default_str();
  auto* export_cmd = app.add_subcommand("export-actions", "Grid of prior action fans (CSV + SVG)");
  add_common(export_cmd);
  add_inputs(export_cmd);
  export_cmd->add_option("--threshold", eval_threshold, "Effective-action threshold (default: config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return report(err, kExitUsage, "usage", e.what());
  }

  try {
    if (generate->parsed()) return cmd_generate(common, out);
    if (pretrain->parsed()) return cmd_pretrain(common, data_arg, out, err);
    if (init->parsed()) return cmd_init_clusters(common, data_arg, ckpt_arg, out);
    if (train->parsed()) return cmd_train(common, stage_arg, data_arg, ckpt_arg, out);
    if (predict_cmd->parsed()) {
      return cmd_predict(common, mode_arg, threshold, sample_index, data_arg, ckpt_arg, out);
    }
    if (eval->parsed()) return cmd_eval(common, eval_threshold, noise_draws, data_arg, ckpt_arg, out);
    if (export_cmd->parsed()) return cmd_export(common, eval_threshold, data_arg, ckpt_arg, out);
    return report(err, kExitUsage, "usage", "no subcommand given");
  } catch (const UsageError& e) {
    return report(err, kExitUsage, "usage", e.what());
  } catch (const ConfigError& e) {
    return report(err, kExitUsage, "config", e.what());
  } catch (const TrainingDivergence& e) {
    return report(err, kExitDivergence, "divergence", e.what());
  } catch (const ObjectiveError& e) {
    return report(err, kExitDivergence, "divergence", e.what());
  } catch (const PrerequisiteError& e) {
    return report(err, kExitData, "prerequisite", e.what());
  } catch (const LockError& e) {
    return report(err, kExitData, "lock", e.what());
  } catch (const CheckpointError& e) {
    return report(err, kExitData, "checkpoint", e.what());
  } catch (const ParseError& e) {
    return report(err, kExitData, "data", e.what());
  } catch (const SchemaError& e) {
    return report(err, kExitData, "data", e.what());
  } catch (const ModelStateError& e) {
    return report(err, kExitData, "model", e.what());
  } catch (const InitializationError& e) {
    return report(err, kExitData, "model", e.what());
  } catch (const DegeneratePosterior& e) {
    return report(err, kExitData, "model", e.what());
  } catch (const std::exception& e) {
    return report(err, kExitData, "io", e.what());
  }
}

}  // namespace actionset
