#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "actionset/model.hpp"
#include "actionset/types.hpp"

namespace actionset {

/// One evaluation of an objective, in ELBO sign convention (larger is better).
///
/// total = w_recon (recon_x + recon_x_prime) - w_y kl_y - w_z expected_kl_z
///         - w_z' expected_kl_z_prime
struct ObjectiveReport {
  double total = 0.0;
  double recon_x = 0.0;
  double recon_x_prime = 0.0;
  double kl_y = 0.0;
  double expected_kl_z = 0.0;
  double expected_kl_z_prime = 0.0;
  /// The dual objective drops KL(q_y || p_y); it is still computed for monitoring.
  std::optional<double> monitored_kl_y;
  ActionPosterior qy_used = ActionPosterior::uniform(1);
};

enum class Objective {
  vae,      // pretraining: standard-normal prior, no discrete variable
  base,     // single-sample ELBO with the mixture prior
  dual,     // scenario-conditioned encoder, base model frozen
  unified,  // both encoders jointly
};

/// Multiplicative weights on the objective terms. All 1 reproduces the bound.
struct ObjectiveWeights {
  double recon = 1.0;
  double kl_y = 1.0;
  double kl_z = 1.0;
  double kl_z_prime = 1.0;
};

struct ObjectiveOptions {
  ObjectiveWeights weights;
  int dual_samples = 1;  // noise draws per action for the dual branch
};

/// Standard-normal noise for a batch.
///   z:       D x B, one column per sample
///   z_prime: D x (B K S), column (b K + k) S + s is draw s of action k for sample b
struct BatchNoise {
  Eigen::MatrixXd z;
  Eigen::MatrixXd z_prime;
};

/// Draws the noise an objective needs for `batch_size` samples.
BatchNoise draw_noise(Objective objective, const ModelDims& dims, int batch_size,
                      int dual_samples, Rng& rng);

struct BatchResult {
  std::vector<ObjectiveReport> reports;
  double total = 0.0;  // sum of report totals
};

/// Evaluates `objective` on each sample. When `gradient` is non-null, adds
/// d(sum of totals)/d(parameters) into it for every block the objective trains;
/// frozen blocks receive nothing. q_y is recomputed from `m` unless `fixed_qy`
/// supplies one posterior per sample; either way it is a constant for the gradient.
BatchResult evaluate_batch(Objective objective, const ModelState& m,
                           std::span<const TrainingSample> samples, const BatchNoise& noise,
                           ModelState* gradient, const ObjectiveOptions& options = {},
                           const std::vector<ActionPosterior>* fixed_qy = nullptr);

/// Blocks each objective updates.
std::vector<ParamRef> trainable_params(Objective objective, ModelState& m);
std::vector<ConstParamRef> trainable_params(Objective objective, const ModelState& m);

ObjectiveReport elbo_base(const ModelState& m, const Trajectory& x, const ScenarioFeatures& s,
                          const Eigen::VectorXd& noise_z, std::optional<int> label = std::nullopt);

/// `noise_per_k` holds K * S vectors, action-major (all draws for action 0 first).
ObjectiveReport loss_dual(const ModelState& m, const Trajectory& x, const ScenarioFeatures& s,
                          std::span<const Eigen::VectorXd> noise_per_k,
                          std::optional<int> label = std::nullopt);

ObjectiveReport loss_unified(const ModelState& m, const Trajectory& x, const ScenarioFeatures& s,
                             const Eigen::VectorXd& noise_z,
                             std::span<const Eigen::VectorXd> noise_per_k,
                             std::optional<int> label = std::nullopt);

}  // namespace actionset
