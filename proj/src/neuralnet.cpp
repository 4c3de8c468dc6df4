#include "actionset/neuralnet.hpp"

#include <cmath>
#include <string>

#include "actionset/errors.hpp"

namespace actionset {

namespace {

void validate_dims(const std::vector<int>& dims, OutputHead head) {
  if (dims.size() < 2) throw ContractViolation("Mlp: need at least input and output dims");
  for (int d : dims) {
    if (d <= 0) throw ContractViolation("Mlp: layer dims must be positive");
  }
  if (head == OutputHead::gaussian && dims.back() % 2 != 0) {
    throw ContractViolation("Mlp: gaussian head needs an even output dimension");
  }
}

bool rectified_layer(std::size_t layer, std::size_t count, OutputHead head) {
  return layer + 1 < count || head == OutputHead::rectified;
}

}  // namespace

Mlp::Mlp(std::vector<int> layer_dims, OutputHead head, Rng& rng)
    : layer_dims_(std::move(layer_dims)), head_(head) {
  validate_dims(layer_dims_, head_);
  layers_.reserve(layer_dims_.size() - 1);
  for (std::size_t l = 0; l + 1 < layer_dims_.size(); ++l) {
    const int in = layer_dims_[l];
    const int out = layer_dims_[l + 1];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / in));
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    // Column-major fill order keeps initialization independent of Eigen internals.
    for (int c = 0; c < in; ++c) {
      for (int r = 0; r < out; ++r) layer.weight(r, c) = normal(rng);
    }
    layers_.push_back(std::move(layer));
  }
}

Mlp Mlp::zeros(std::vector<int> layer_dims, OutputHead head) {
  validate_dims(layer_dims, head);
  Mlp net;
  net.layer_dims_ = std::move(layer_dims);
  net.head_ = head;
  for (std::size_t l = 0; l + 1 < net.layer_dims_.size(); ++l) {
    net.layers_.push_back({Eigen::MatrixXd::Zero(net.layer_dims_[l + 1], net.layer_dims_[l]),
                           Eigen::VectorXd::Zero(net.layer_dims_[l + 1])});
  }
  return net;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
  return forward_batch(input).col(0);
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& inputs, MlpTape* tape) const {
  if (inputs.rows() != input_dim()) {
    throw ContractViolation("Mlp::forward: input dim " + std::to_string(inputs.rows()) +
                            ", expected " + std::to_string(input_dim()));
  }
  if (tape) {
    tape->activations.clear();
    tape->activations.reserve(layers_.size() + 1);
    tape->activations.push_back(inputs);
  }
  Eigen::MatrixXd act = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd next = layers_[l].weight * act;
    next.colwise() += layers_[l].bias;
    if (rectified_layer(l, layers_.size(), head_)) next = next.cwiseMax(0.0);
    act = std::move(next);
    if (tape) tape->activations.push_back(act);
  }
  return act;
}

DiagGaussian Mlp::forward_gaussian(const Eigen::VectorXd& input) const {
  if (head_ != OutputHead::gaussian) throw ContractViolation("Mlp: not a gaussian head");
  return to_gaussian(forward(input));
}

Eigen::MatrixXd Mlp::backward(const MlpTape& tape, const Eigen::MatrixXd& upstream,
                              Mlp* param_grads) const {
  if (tape.activations.size() != layers_.size() + 1) {
    throw ContractViolation("Mlp::backward: tape does not match network depth");
  }
  const Eigen::MatrixXd& output = tape.activations.back();
  if (upstream.rows() != output.rows() || upstream.cols() != output.cols()) {
    throw ContractViolation("Mlp::backward: upstream shape does not match output");
  }
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (rectified_layer(l, layers_.size(), head_)) {
      delta = (tape.activations[l + 1].array() > 0.0).select(delta, 0.0);
    }
    if (param_grads) {
      param_grads->layers_[l].weight.noalias() += delta * tape.activations[l].transpose();
      param_grads->layers_[l].bias += delta.rowwise().sum();
    }
    delta = layers_[l].weight.transpose() * delta;
  }
  return delta;
}

void Mlp::set_zero() {
  for (auto& layer : layers_) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
}

void Mlp::append_params(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& layer = layers_[l];
    out.push_back({prefix + "." + std::to_string(l) + ".weight",
                   {layer.weight.data(), static_cast<std::size_t>(layer.weight.size())}});
    out.push_back({prefix + "." + std::to_string(l) + ".bias",
                   {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}});
  }
}

void Mlp::append_params(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    out.push_back({prefix + "." + std::to_string(l) + ".weight",
                   {layer.weight.data(), static_cast<std::size_t>(layer.weight.size())}});
    out.push_back({prefix + "." + std::to_string(l) + ".bias",
                   {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}});
  }
}

bool Mlp::operator==(const Mlp& other) const {
  if (layer_dims_ != other.layer_dims_ || head_ != other.head_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight != other.layers_[l].weight) return false;
    if (layers_[l].bias != other.layers_[l].bias) return false;
  }
  return true;
}

DiagGaussian to_gaussian(const Eigen::VectorXd& raw) {
  if (raw.size() % 2 != 0 || raw.size() == 0) {
    throw ContractViolation("to_gaussian: raw output must have positive even length");
  }
  const Eigen::Index d = raw.size() / 2;
  return {raw.head(d), raw.tail(d)};
}

Eigen::VectorXd gaussian_head_upstream(const Eigen::VectorXd& raw, const Eigen::VectorXd& d_mean,
                                       const Eigen::VectorXd& d_log_var) {
  const Eigen::Index d = raw.size() / 2;
  if (d_mean.size() != d || d_log_var.size() != d) {
    throw ContractViolation("gaussian_head_upstream: dimension mismatch");
  }
  Eigen::VectorXd up(raw.size());
  up.head(d) = d_mean;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double v = raw[d + i];
    up[d + i] = (v >= kLogVarMin && v <= kLogVarMax) ? d_log_var[i] : 0.0;
  }
  return up;
}

MlpGradients mlp_gradients(const Mlp& net, const Eigen::VectorXd& input,
                           const Eigen::VectorXd& upstream) {
  if (upstream.size() != net.output_dim()) {
    throw ContractViolation("mlp_gradients: upstream dim does not match output dim");
  }
  MlpTape tape;
  net.forward_batch(input, &tape);
  MlpGradients g{Mlp::zeros(net.layer_dims(), net.head()), {}};
  g.input = net.backward(tape, Eigen::MatrixXd(upstream), &g.params).col(0);
  return g;
}

void adam_step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads,
               AdamState& state) {
  if (params.size() != grads.size()) {
    throw ContractViolation("adam_step: parameter and gradient block counts differ");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].values.size() != grads[b].values.size()) {
      throw ContractViolation("adam_step: shape mismatch in block " + params[b].name);
    }
    for (double g : grads[b].values) {
      if (!std::isfinite(g)) {
        throw TrainingDivergence("non-finite gradient in parameter block " + params[b].name);
      }
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.values.size())));
      state.second_moment.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.values.size())));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractViolation("adam_step: optimizer state does not match parameter blocks");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (static_cast<std::size_t>(state.first_moment[b].size()) != params[b].values.size()) {
      throw ContractViolation("adam_step: moment shape mismatch in block " + params[b].name);
    }
  }

  ++state.step_count;
  const auto& opt = state.options;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(opt.beta1, t);
  const double correction2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    Eigen::Map<Eigen::VectorXd> p(params[b].values.data(), static_cast<Eigen::Index>(params[b].values.size()));
    Eigen::Map<const Eigen::VectorXd> g(grads[b].values.data(), static_cast<Eigen::Index>(grads[b].values.size()));
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseAbs2();
    p.array() -= opt.learning_rate * (m.array() / correction1) /
                 ((v.array() / correction2).sqrt() + opt.epsilon);
  }
}

}  // namespace actionset
