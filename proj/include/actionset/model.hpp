#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "actionset/gaussmath.hpp"
#include "actionset/neuralnet.hpp"
#include "actionset/types.hpp"

namespace actionset {

/// K diagonal Gaussians over R^D stored as a linear map from one-of-K codes.
/// Column k of the (2D x K) weight is [mean_k ; log_var_k].
class LatentMixture {
 public:
  LatentMixture() = default;
  LatentMixture(int components, int latent_dim);

  int components() const { return static_cast<int>(weight_.cols()); }
  int latent_dim() const { return static_cast<int>(weight_.rows() / 2); }

  Eigen::MatrixXd& weight() { return weight_; }
  const Eigen::MatrixXd& weight() const { return weight_; }

  /// Evaluates the linear map on an arbitrary code vector.
  DiagGaussian apply(const Eigen::VectorXd& code) const;
  DiagGaussian component(int k) const;
  void set_component(int k, const Eigen::VectorXd& mean, const Eigen::VectorXd& log_var);

  bool operator==(const LatentMixture&) const = default;

 private:
  Eigen::MatrixXd weight_;
};

/// Probability vector over the K actions.
class ActionPosterior {
 public:
  explicit ActionPosterior(Eigen::VectorXd probs);
  static ActionPosterior one_hot(int k, int size);
  static ActionPosterior uniform(int size);

  const Eigen::VectorXd& probs() const { return probs_; }
  int size() const { return static_cast<int>(probs_.size()); }
  double operator[](int k) const { return probs_[k]; }
  int argmax() const;

 private:
  Eigen::VectorXd probs_;
};

/// Fixed affine standardization applied in front of / behind a network.
struct Standardizer {
  Eigen::VectorXd offset;
  Eigen::VectorXd scale;

  static Standardizer identity(int dim);
  static Standardizer fit(const Eigen::MatrixXd& columns);
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& raw) const;
  Eigen::MatrixXd denormalize(const Eigen::MatrixXd& normalized) const;

  bool operator==(const Standardizer& other) const {
    return offset == other.offset && scale == other.scale;
  }
};

struct ModelDims {
  int actions = 12;      // K
  int latent_dim = 3;    // D
  int horizon = 30;      // T waypoints
  int scenario_dim = kScenarioDim;
  std::vector<int> hidden = {64, 64};
  bool disjoint_dual = false;           // K separate trunks instead of one shared trunk
  bool classifier_shares_trunk = false; // p(y|s) reads dual trunk features

  int trajectory_dim() const { return 2 * horizon; }
  int trunk_dim() const { return hidden.back(); }
  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

/// Parameter groups used to select what a training stage updates.
enum class BlockGroup { encoder, decoder, classifier, dual, mixture };

/// Every learnable distribution plus fixed input/output standardizers.
struct ModelState {
  ModelDims dims;
  Standardizer trajectory_norm;
  Standardizer scenario_norm;
  Mlp encoder;                   // q(z|x), gaussian head
  Mlp decoder;                   // p(x|z) mean, linear head
  Mlp classifier;                // p(y|s) logits
  std::vector<Mlp> dual_trunks;  // 1 (shared) or K (disjoint)
  std::vector<Mlp> dual_heads;   // K gaussian heads, q(z'|y,s)
  LatentMixture mixture;         // p(z|y) = p(z'|y)

  static ModelState initialize(const ModelDims& dims, Rng& rng);
  static ModelState zeros(const ModelDims& dims);
  ModelState zeros_like() const { return zeros(dims); }

  const Mlp& trunk_for(int k) const { return dual_trunks[dims.disjoint_dual ? k : 0]; }

  std::vector<ParamRef> params(std::initializer_list<BlockGroup> groups);
  std::vector<ConstParamRef> params(std::initializer_list<BlockGroup> groups) const;
  std::vector<ParamRef> all_params();
  std::vector<ConstParamRef> all_params() const;

  bool all_finite() const;
  bool operator==(const ModelState&) const = default;
};

// Inference primitives.
DiagGaussian encode_x(const ModelState& m, const Trajectory& x);
Trajectory decode_z(const ModelState& m, const LatentPoint& z);
Eigen::VectorXd classifier_logits(const ModelState& m, const ScenarioFeatures& s);
ActionPosterior prior_y(const ModelState& m, const ScenarioFeatures& s);
DiagGaussian mixture_component(const ModelState& m, int k);
DiagGaussian dual_encode(const ModelState& m, const ScenarioFeatures& s, int k);

/// Log-space normalization of log_prior - penalty. Throws DegeneratePosterior
/// when no action has finite score.
ActionPosterior normalize_scores(const Eigen::VectorXd& log_prior, const Eigen::VectorXd& penalty);

/// q(y|x,s) ∝ p(y|s) exp(-H(q(z|x), p(z|y))).
ActionPosterior qy_base(const Eigen::VectorXd& log_prior, const DiagGaussian& qz,
                        const LatentMixture& mixture);

/// q(y|x,s) ∝ p(y|s) exp(-H(q(z|x), p(z|y)) - KL(q(z'|y,s) || p(z'|y))).
ActionPosterior qy_unified(const Eigen::VectorXd& log_prior, const DiagGaussian& qz,
                           const std::vector<DiagGaussian>& dual, const LatentMixture& mixture);

ActionPosterior compute_qy_base(const ModelState& m, const Trajectory& x, const ScenarioFeatures& s);
ActionPosterior compute_qy_unified(const ModelState& m, const Trajectory& x,
                                   const ScenarioFeatures& s);

/// One-hot at `label` when present, otherwise `qy` unchanged.
ActionPosterior apply_label_override(const ActionPosterior& qy, std::optional<int> label);

/// log(softmax(logits)) computed stably.
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);

}  // namespace actionset
