#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "actionset/config.hpp"
#include "actionset/model.hpp"
#include "actionset/objectives.hpp"
#include "actionset/types.hpp"

namespace actionset {

/// Mean objective terms over one epoch.
struct EpochLog {
  int epoch = 0;
  std::string stage;
  double total = 0.0;
  double recon_x = 0.0;
  double recon_x_prime = 0.0;
  double kl_y = 0.0;
  double expected_kl_z = 0.0;
  double expected_kl_z_prime = 0.0;
};

std::string training_log_header();
std::string training_log_row(const EpochLog& row);
/// Appends rows to a CSV file, writing the header when the file is new.
void append_training_log(const std::filesystem::path& path, std::span<const EpochLog> rows);

struct StageResult {
  ModelState model;
  std::vector<EpochLog> history;
  bool early_stopped = false;
};

struct PretrainResult {
  StageResult stage;
  double holdout_ade = 0.0;  // reconstruction ADE through encoder means, m
};

/// Groups to hold fixed on top of what an objective already freezes.
struct StageOptions {
  std::vector<BlockGroup> frozen;
};

/// Fresh model with He-initialized networks, drawn from `rng`.
ModelState initialize_model(const TrainConfig& config, Rng& rng);

/// Fits the standardizers on `train`, then trains encoder and decoder as a
/// standard VAE (N(0, I) latent prior). Other blocks are left untouched.
PretrainResult pretrain_vae(ModelState model, std::span<const TrainingSample> train,
                            std::span<const TrainingSample> holdout, const TrainConfig& config,
                            Rng& rng);

/// Mean ADE between x and decode(mean of q(z|x)).
double reconstruction_ade(const ModelState& model, std::span<const TrainingSample> data);

struct KMeansResult {
  Eigen::MatrixXd centroids;        // D x K
  std::vector<int> assignment;      // per point
  std::vector<int> counts;          // per cluster
  int iterations = 0;
};

/// Lloyd's algorithm with farthest-point seeding (first seed drawn from `rng`).
/// An empty cluster is re-seeded at the point farthest from its centroid and
/// Lloyd re-run once; a second empty cluster throws InitializationError.
KMeansResult kmeans(const Eigen::MatrixXd& points, int clusters, int iterations, Rng& rng);

/// Places mixture components at k-means centroids of encoded means, with
/// log-variances from within-cluster variances floored at 1e-2.
ModelState init_mixture(ModelState model, std::span<const TrainingSample> data,
                        const TrainConfig& config, Rng& rng);

StageResult train_base(ModelState model, std::span<const TrainingSample> data,
                       const TrainConfig& config, Rng& rng);
/// Only dual trunk(s) and heads move; every other block stays bitwise fixed.
StageResult train_dual(ModelState model, std::span<const TrainingSample> data,
                       const TrainConfig& config, Rng& rng);
StageResult train_unified(ModelState model, std::span<const TrainingSample> data,
                          const TrainConfig& config, Rng& rng, const StageOptions& options = {});

/// Generic Adam loop shared by every stage.
StageResult run_stage(Objective objective, const std::string& stage_name, ModelState model,
                      std::span<const TrainingSample> data, const TrainConfig& config, int epochs,
                      Rng& rng, const StageOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoints

enum class StageMarker : std::uint32_t {
  initialized = 0,
  pretrained = 1,
  clusters = 2,
  base = 3,
  dual = 4,
  unified = 5,
};
std::string to_string(StageMarker marker);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  ModelState model;
  StageMarker stage = StageMarker::initialized;
  std::string rng_state;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
/// `expected`, when given, must describe the same network shapes.
Checkpoint deserialize_checkpoint(const std::string& bytes, const TrainConfig* expected = nullptr);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const TrainConfig* expected = nullptr);

/// Saves then reloads `model`.
ModelState checkpoint_roundtrip(const ModelState& model, const TrainConfig& config,
                                const std::filesystem::path& path);

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

/// Seeds for the data generator and the training RNG, both derived from one seed.
std::uint64_t training_seed(std::uint64_t seed);

}  // namespace actionset
