#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "actionset/gaussmath.hpp"

namespace actionset {

using Rng = std::mt19937_64;

/// How the last layer of an Mlp is interpreted.
///   linear:    affine output
///   gaussian:  affine output split into [mean | log_var], log_var clamped
///   rectified: affine output followed by ReLU (feature trunks)
enum class OutputHead { linear, gaussian, rectified };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Activations recorded by a forward pass, consumed by Mlp::backward.
struct MlpTape {
  std::vector<Eigen::MatrixXd> activations;  // activations[0] is the input batch
};

/// Named view of one contiguous parameter array.
struct ParamRef {
  std::string name;
  std::span<double> values;
};

struct ConstParamRef {
  std::string name;
  std::span<const double> values;
};

/// Feed-forward ReLU network. Batches are column-major: one sample per column.
class Mlp {
 public:
  Mlp() = default;

  /// He-initialized weights (normal, std sqrt(2 / fan_in)), zero biases.
  Mlp(std::vector<int> layer_dims, OutputHead head, Rng& rng);

  /// All weights and biases zero.
  static Mlp zeros(std::vector<int> layer_dims, OutputHead head);

  int input_dim() const { return layer_dims_.front(); }
  int output_dim() const { return layer_dims_.back(); }
  const std::vector<int>& layer_dims() const { return layer_dims_; }
  OutputHead head() const { return head_; }
  std::size_t parameter_count() const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Raw output (log_var halves are not clamped here; see to_gaussian).
  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
  /// Batched pass, one sample per column; records activations into `tape` when given.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs, MlpTape* tape = nullptr) const;

  /// Forward pass through a gaussian head, with the log_var clamp applied.
  DiagGaussian forward_gaussian(const Eigen::VectorXd& input) const;

  /// Reverse pass of <upstream, output>. Returns d/d input; adds parameter
  /// gradients into `param_grads` (same shape as *this) when non-null.
  Eigen::MatrixXd backward(const MlpTape& tape, const Eigen::MatrixXd& upstream,
                           Mlp* param_grads) const;

  void set_zero();
  void append_params(const std::string& prefix, std::vector<ParamRef>& out);
  void append_params(const std::string& prefix, std::vector<ConstParamRef>& out) const;

  bool operator==(const Mlp& other) const;

 private:
  std::vector<int> layer_dims_;
  OutputHead head_ = OutputHead::linear;
  std::vector<DenseLayer> layers_;
};

/// Splits a raw gaussian-head output vector into a (clamped) DiagGaussian.
DiagGaussian to_gaussian(const Eigen::VectorXd& raw);

/// Maps gradients w.r.t. (mean, clamped log_var) back onto the raw head
/// output. The clamp passes gradient inside [-10, 10] and blocks it outside.
Eigen::VectorXd gaussian_head_upstream(const Eigen::VectorXd& raw, const Eigen::VectorXd& d_mean,
                                       const Eigen::VectorXd& d_log_var);

struct MlpGradients {
  Mlp params;  // gradient, shaped like the network
  Eigen::VectorXd input;
};

/// Exact reverse-mode gradient of <upstream, forward(input)>.
MlpGradients mlp_gradients(const Mlp& net, const Eigen::VectorXd& input,
                           const Eigen::VectorXd& upstream);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::int64_t step_count = 0;
  std::vector<Eigen::VectorXd> first_moment;
  std::vector<Eigen::VectorXd> second_moment;
};

/// Bias-corrected Adam descent step on `params` using `grads` (minimization).
/// Throws TrainingDivergence naming the first block holding a non-finite gradient;
/// in that case nothing is updated.
void adam_step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads,
               AdamState& state);

}  // namespace actionset
