#include "actionset/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <bit>
#include <boost/crc.hpp>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "actionset/errors.hpp"

namespace actionset {

namespace {

// ---------------------------------------------------------------------------
// Little-endian byte I/O

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::string& s) { bytes_ += s; }
  void str(const std::string& s) {
    u64(s.size());
    raw(s);
  }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return raw(u64()); }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CheckpointError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[] = "ACTSETCK";
constexpr std::size_t kMagicLen = 8;

std::uint32_t crc32(const std::string& bytes, std::size_t len) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), len);
  return crc.checksum();
}

/// Parameter blocks plus the fixed standardizers, in serialization order.
std::vector<ParamRef> checkpoint_blocks(ModelState& m) {
  auto blocks = m.all_params();
  auto add = [&](const std::string& name, Eigen::VectorXd& v) {
    blocks.push_back({name, {v.data(), static_cast<std::size_t>(v.size())}});
  };
  add("norm.trajectory.offset", m.trajectory_norm.offset);
  add("norm.trajectory.scale", m.trajectory_norm.scale);
  add("norm.scenario.offset", m.scenario_norm.offset);
  add("norm.scenario.scale", m.scenario_norm.scale);
  return blocks;
}

// ---------------------------------------------------------------------------
// Training helpers

EpochLog accumulate(const std::vector<ObjectiveReport>& reports, EpochLog log) {
  for (const auto& r : reports) {
    log.total += r.total;
    log.recon_x += r.recon_x;
    log.recon_x_prime += r.recon_x_prime;
    log.kl_y += r.monitored_kl_y.value_or(r.kl_y);
    log.expected_kl_z += r.expected_kl_z;
    log.expected_kl_z_prime += r.expected_kl_z_prime;
  }
  return log;
}

void zero_frozen(ModelState& gradient, const std::vector<BlockGroup>& frozen) {
  for (BlockGroup g : frozen) {
    for (auto& block : gradient.params({g})) std::fill(block.values.begin(), block.values.end(), 0.0);
  }
}

double smoothed(const std::vector<EpochLog>& history, std::size_t end, int window) {
  const std::size_t begin = end > static_cast<std::size_t>(window) ? end - window : 0;
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) sum += history[i].total;
  return sum / static_cast<double>(end - begin);
}

}  // namespace

std::uint64_t training_seed(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x7a11u};
  std::uint64_t out = 0;
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out;
}

std::string training_log_header() {
  return "epoch,stage,total,recon_x,recon_x_prime,kl_y,kl_z,kl_z_prime";
}

std::string training_log_row(const EpochLog& r) {
  return fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", r.epoch, r.stage,
                     r.total, r.recon_x, r.recon_x_prime, r.kl_y, r.expected_kl_z,
                     r.expected_kl_z_prime);
}

void append_training_log(const std::filesystem::path& path, std::span<const EpochLog> rows) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot open training log " + path.string());
  if (fresh) out << training_log_header() << '\n';
  for (const auto& row : rows) out << training_log_row(row) << '\n';
}

ModelState initialize_model(const TrainConfig& config, Rng& rng) {
  config.validate();
  return ModelState::initialize(config.dims(), rng);
}

StageResult run_stage(Objective objective, const std::string& stage_name, ModelState model,
                      std::span<const TrainingSample> data, const TrainConfig& config, int epochs,
                      Rng& rng, const StageOptions& options) {
  if (data.empty()) throw ContractViolation(stage_name + ": empty training set");
  StageResult result;
  AdamState adam;
  adam.options.learning_rate = config.learning_rate;

  ModelState gradient = model.zeros_like();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<TrainingSample> batch;
  batch.reserve(config.batch_size);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    log.stage = stage_name;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(data[order[i]]);
      const int n = static_cast<int>(batch.size());
      const BatchNoise noise = draw_noise(objective, model.dims, n, config.objective.dual_samples, rng);

      for (auto& block : gradient.all_params()) std::fill(block.values.begin(), block.values.end(), 0.0);
      BatchResult evaluated;
      try {
        evaluated = evaluate_batch(objective, model, batch, noise, &gradient, config.objective);
      } catch (const ObjectiveError& e) {
        const std::string last = result.history.empty()
                                     ? std::string("none")
                                     : fmt::format("{} (total {:.6g})", result.history.back().epoch,
                                                   result.history.back().total);
        throw TrainingDivergence(fmt::format("{} diverged in epoch {}: {}; last finite epoch: {}",
                                             stage_name, epoch, e.what(), last));
      }
      zero_frozen(gradient, options.frozen);
      // Ascent on the mean objective == descent on its negation.
      const double scale = -1.0 / n;
      for (auto& block : gradient.all_params()) {
        for (double& g : block.values) g *= scale;
      }
      auto params = trainable_params(objective, model);
      auto grads = trainable_params(objective, std::as_const(gradient));
      try {
        adam_step(params, grads, adam);
      } catch (const TrainingDivergence& e) {
        throw TrainingDivergence(fmt::format("{} diverged in epoch {}: {}", stage_name, epoch, e.what()));
      }
      log = accumulate(evaluated.reports, log);
    }
    const double n = static_cast<double>(data.size());
    log.total /= n;
    log.recon_x /= n;
    log.recon_x_prime /= n;
    log.kl_y /= n;
    log.expected_kl_z /= n;
    log.expected_kl_z_prime /= n;
    result.history.push_back(log);

    const std::size_t done = result.history.size();
    const auto window = static_cast<std::size_t>(config.early_stop_window);
    if (done > window) {
      const double now = smoothed(result.history, done, config.smoothing_window);
      const double before = smoothed(result.history, done - window, config.smoothing_window);
      if (now - before < config.early_stop_tolerance) {
        result.early_stopped = true;
        break;
      }
    }
  }
  result.model = std::move(model);
  return result;
}

PretrainResult pretrain_vae(ModelState model, std::span<const TrainingSample> train,
                            std::span<const TrainingSample> holdout, const TrainConfig& config,
                            Rng& rng) {
  if (train.empty()) throw ContractViolation("pretrain_vae: empty dataset");
  Eigen::MatrixXd x(model.dims.trajectory_dim(), static_cast<Eigen::Index>(train.size()));
  Eigen::MatrixXd s(model.dims.scenario_dim, static_cast<Eigen::Index>(train.size()));
  for (std::size_t i = 0; i < train.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = train[i].trajectory.flat;
    s.col(static_cast<Eigen::Index>(i)) = train[i].scenario.values;
  }
  model.trajectory_norm = Standardizer::fit(x);
  model.scenario_norm = Standardizer::fit(s);

  PretrainResult result;
  result.stage = run_stage(Objective::vae, "pretrain", std::move(model), train, config,
                           config.pretrain_epochs, rng);
  result.holdout_ade = reconstruction_ade(result.stage.model, holdout.empty() ? train : holdout);
  return result;
}

double reconstruction_ade(const ModelState& model, std::span<const TrainingSample> data) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& sample : data) {
    const DiagGaussian q = encode_x(model, sample.trajectory);
    total += average_displacement(decode_z(model, {q.mean()}), sample.trajectory);
  }
  return total / static_cast<double>(data.size());
}

KMeansResult kmeans(const Eigen::MatrixXd& points, int clusters, int iterations, Rng& rng) {
  const auto n = points.cols();
  if (clusters < 1) throw ContractViolation("kmeans: need at least one cluster");
  if (n < clusters) {
    throw InitializationError(fmt::format("kmeans: {} points cannot fill {} clusters", n, clusters));
  }
  KMeansResult r;
  r.centroids.resize(points.rows(), clusters);
  r.assignment.assign(static_cast<std::size_t>(n), 0);

  // Farthest-point seeding.
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  r.centroids.col(0) = points.col(first(rng));
  Eigen::VectorXd nearest = (points.colwise() - r.centroids.col(0)).colwise().squaredNorm().transpose();
  for (int c = 1; c < clusters; ++c) {
    Eigen::Index far = 0;
    nearest.maxCoeff(&far);
    r.centroids.col(c) = points.col(far);
    nearest = nearest.cwiseMin((points.colwise() - r.centroids.col(c)).colwise().squaredNorm().transpose());
  }

  auto lloyd = [&](int max_iter) {
    for (int it = 0; it < max_iter; ++it) {
      bool changed = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index best = 0;
        (r.centroids.colwise() - points.col(i)).colwise().squaredNorm().minCoeff(&best);
        if (r.assignment[i] != static_cast<int>(best) || it == 0) {
          changed = changed || r.assignment[i] != static_cast<int>(best);
          r.assignment[i] = static_cast<int>(best);
        }
      }
      r.counts.assign(clusters, 0);
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(points.rows(), clusters);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.col(r.assignment[i]) += points.col(i);
        ++r.counts[r.assignment[i]];
      }
      for (int c = 0; c < clusters; ++c) {
        if (r.counts[c] > 0) r.centroids.col(c) = sums.col(c) / r.counts[c];
      }
      ++r.iterations;
      if (!changed && it > 0) break;
    }
  };
  auto first_empty = [&]() {
    for (int c = 0; c < clusters; ++c) {
      if (r.counts[c] == 0) return c;
    }
    return -1;
  };

  lloyd(iterations);
  if (int empty = first_empty(); empty >= 0) {
    double worst = -1.0;
    Eigen::Index far = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = (points.col(i) - r.centroids.col(r.assignment[i])).squaredNorm();
      if (d > worst) {
        worst = d;
        far = i;
      }
    }
    r.centroids.col(empty) = points.col(far);
    lloyd(iterations);
    if (first_empty() >= 0) {
      throw InitializationError("kmeans: a cluster stayed empty after re-seeding");
    }
  }
  return r;
}

ModelState init_mixture(ModelState model, std::span<const TrainingSample> data,
                        const TrainConfig& config, Rng& rng) {
  if (data.empty()) throw ContractViolation("init_mixture: empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t count = std::min<std::size_t>(order.size(), static_cast<std::size_t>(config.init_samples));

  const int dim = model.dims.latent_dim;
  Eigen::MatrixXd encoded(dim, static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    encoded.col(static_cast<Eigen::Index>(i)) = encode_x(model, data[order[i]].trajectory).mean();
  }
  const KMeansResult km = kmeans(encoded, model.dims.actions, config.kmeans_iterations, rng);

  for (int c = 0; c < model.dims.actions; ++c) {
    Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
    for (std::size_t i = 0; i < count; ++i) {
      if (km.assignment[i] != c) continue;
      var += (encoded.col(static_cast<Eigen::Index>(i)) - km.centroids.col(c)).cwiseAbs2();
    }
    var /= static_cast<double>(km.counts[c]);
    model.mixture.set_component(c, km.centroids.col(c), var.cwiseMax(1e-2).array().log().matrix());
  }
  return model;
}

StageResult train_base(ModelState model, std::span<const TrainingSample> data,
                       const TrainConfig& config, Rng& rng) {
  return run_stage(Objective::base, "base", std::move(model), data, config, config.base_epochs, rng);
}

StageResult train_dual(ModelState model, std::span<const TrainingSample> data,
                       const TrainConfig& config, Rng& rng) {
  return run_stage(Objective::dual, "dual", std::move(model), data, config, config.dual_epochs, rng);
}

StageResult train_unified(ModelState model, std::span<const TrainingSample> data,
                          const TrainConfig& config, Rng& rng, const StageOptions& options) {
  return run_stage(Objective::unified, "unified", std::move(model), data, config,
                   config.unified_epochs, rng, options);
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string to_string(StageMarker marker) {
  switch (marker) {
    case StageMarker::initialized: return "initialized";
    case StageMarker::pretrained: return "pretrained";
    case StageMarker::clusters: return "clusters";
    case StageMarker::base: return "base";
    case StageMarker::dual: return "dual";
    case StageMarker::unified: return "unified";
  }
  return "unknown";
}

std::string rng_state(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng rng_from_state(const std::string& state) {
  Rng rng;
  std::istringstream in(state);
  in >> rng;
  if (!in) throw CheckpointError("invalid RNG state");
  return rng;
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  const std::string config_text = to_key_values(checkpoint.config);
  ByteWriter w;
  w.raw(std::string(kMagic, kMagicLen));
  w.u32(kCheckpointVersion);
  w.raw(config_digest(config_text));
  w.u32(static_cast<std::uint32_t>(checkpoint.stage));
  w.str(config_text);
  w.str(checkpoint.rng_state);
  ModelState copy = checkpoint.model;
  const auto blocks = checkpoint_blocks(copy);
  w.u32(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& block : blocks) {
    w.u32(static_cast<std::uint32_t>(block.name.size()));
    w.raw(block.name);
    w.u64(block.values.size());
    for (double v : block.values) w.f64(v);
  }
  w.u32(crc32(w.bytes(), w.bytes().size()));
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const TrainConfig* expected) {
  constexpr std::size_t kMinSize = kMagicLen + 4 + 8 + 4 + 4;
  if (bytes.size() < kMinSize) throw CheckpointError("checkpoint truncated");
  if (bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::size_t body = bytes.size() - 4;
  {
    ByteReader tail(bytes.substr(body), 4);
    if (tail.u32() != crc32(bytes, body)) throw CheckpointError("checkpoint checksum mismatch");
  }
  ByteReader r(bytes, body);
  r.raw(kMagicLen);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(fmt::format("checkpoint version {} is not supported (expected {})", version,
                                      kCheckpointVersion));
  }
  const std::string digest = r.raw(8);
  const std::uint32_t stage = r.u32();
  if (stage > static_cast<std::uint32_t>(StageMarker::unified)) {
    throw CheckpointError("checkpoint has unknown stage marker");
  }
  const std::string config_text = r.str();
  if (config_digest(config_text) != digest) throw CheckpointError("checkpoint config digest mismatch");

  Checkpoint c;
  try {
    KeyValues kv = KeyValues::parse(config_text);
    c.config = train_config_from(kv);
    kv.require_all_consumed();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (expected && !(expected->dims() == c.config.dims())) {
    throw CheckpointError(fmt::format(
        "checkpoint shape (K={}, D={}, T={}) does not match config (K={}, D={}, T={}) or widths differ",
        c.config.actions, c.config.latent_dim, c.config.horizon, expected->actions,
        expected->latent_dim, expected->horizon));
  }
  c.stage = static_cast<StageMarker>(stage);
  c.rng_state = r.str();

  c.model = ModelState::zeros(c.config.dims());
  auto blocks = checkpoint_blocks(c.model);
  if (r.u32() != blocks.size()) throw CheckpointError("checkpoint block count does not match config");
  for (auto& block : blocks) {
    const std::string name = r.raw(r.u32());
    if (name != block.name) {
      throw CheckpointError("checkpoint block '" + name + "' where '" + block.name + "' was expected");
    }
    if (r.u64() != block.values.size()) throw CheckpointError("checkpoint block '" + name + "' has wrong size");
    for (double& v : block.values) v = r.f64();
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const TrainConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str(), expected);
}

ModelState checkpoint_roundtrip(const ModelState& model, const TrainConfig& config,
                                const std::filesystem::path& path) {
  Checkpoint c;
  c.config = config;
  c.model = model;
  save_checkpoint(c, path);
  return load_checkpoint(path, &config).model;
}

}  // namespace actionset
