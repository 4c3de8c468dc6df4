#include "actionset/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "actionset/errors.hpp"

namespace actionset {

namespace {

bool contains(std::initializer_list<BlockGroup> groups, BlockGroup g) {
  return std::find(groups.begin(), groups.end(), g) != groups.end();
}

template <typename State, typename Out>
void collect_params(State& m, std::initializer_list<BlockGroup> groups, Out& out) {
  const BlockGroup trunk_group =
      m.dims.classifier_shares_trunk ? BlockGroup::classifier : BlockGroup::dual;
  if (contains(groups, BlockGroup::encoder)) m.encoder.append_params("encoder", out);
  if (contains(groups, BlockGroup::decoder)) m.decoder.append_params("decoder", out);
  if (contains(groups, BlockGroup::classifier)) m.classifier.append_params("classifier", out);
  if (contains(groups, trunk_group)) {
    for (std::size_t k = 0; k < m.dual_trunks.size(); ++k) {
      m.dual_trunks[k].append_params("dual_trunk." + std::to_string(k), out);
    }
  }
  if (contains(groups, BlockGroup::dual)) {
    for (std::size_t k = 0; k < m.dual_heads.size(); ++k) {
      m.dual_heads[k].append_params("dual_head." + std::to_string(k), out);
    }
  }
  if (contains(groups, BlockGroup::mixture)) {
    auto& w = m.mixture.weight();
    out.push_back({"mixture.weight", {w.data(), static_cast<std::size_t>(w.size())}});
  }
}

constexpr auto kAllGroups = {BlockGroup::encoder, BlockGroup::decoder, BlockGroup::classifier,
                             BlockGroup::dual, BlockGroup::mixture};

void check_action(const ModelState& m, int k, const char* what) {
  if (k < 0 || k >= m.dims.actions) {
    throw ContractViolation(std::string(what) + ": action index " + std::to_string(k) +
                            " outside [0, " + std::to_string(m.dims.actions) + ")");
  }
}

void check_scenario(const ModelState& m, const ScenarioFeatures& s, const char* what) {
  if (s.dim() != m.dims.scenario_dim) {
    throw ContractViolation(std::string(what) + ": scenario dim " + std::to_string(s.dim()) +
                            ", expected " + std::to_string(m.dims.scenario_dim));
  }
}

Eigen::VectorXd trunk_features(const ModelState& m, const ScenarioFeatures& s, int k) {
  return m.trunk_for(k).forward(Eigen::VectorXd(m.scenario_norm.normalize(s.values).col(0)));
}

}  // namespace

// ---------------------------------------------------------------------------
// LatentMixture

LatentMixture::LatentMixture(int components, int latent_dim)
    : weight_(Eigen::MatrixXd::Zero(2 * latent_dim, components)) {
  if (components < 1 || latent_dim < 1) {
    throw ContractViolation("LatentMixture: need K >= 1 and D >= 1");
  }
}

DiagGaussian LatentMixture::apply(const Eigen::VectorXd& code) const {
  if (code.size() != weight_.cols()) throw ContractViolation("LatentMixture: code length != K");
  const Eigen::VectorXd out = weight_ * code;
  return to_gaussian(out);
}

DiagGaussian LatentMixture::component(int k) const {
  if (k < 0 || k >= components()) {
    throw ContractViolation("LatentMixture: component " + std::to_string(k) + " out of range");
  }
  return to_gaussian(weight_.col(k));
}

void LatentMixture::set_component(int k, const Eigen::VectorXd& mean,
                                  const Eigen::VectorXd& log_var) {
  if (k < 0 || k >= components()) throw ContractViolation("LatentMixture: component out of range");
  if (mean.size() != latent_dim() || log_var.size() != latent_dim()) {
    throw ContractViolation("LatentMixture: component dimension mismatch");
  }
  weight_.col(k).head(latent_dim()) = mean;
  weight_.col(k).tail(latent_dim()) = log_var;
}

// ---------------------------------------------------------------------------
// ActionPosterior

ActionPosterior::ActionPosterior(Eigen::VectorXd probs) : probs_(std::move(probs)) {
  if (probs_.size() < 1) throw ContractViolation("ActionPosterior: empty");
  for (double p : probs_) {
    if (!std::isfinite(p) || p < 0.0) {
      throw ContractViolation("ActionPosterior: entries must be finite and nonnegative");
    }
  }
  if (std::abs(probs_.sum() - 1.0) > 1e-9) {
    throw ContractViolation("ActionPosterior: probabilities do not sum to 1");
  }
}

ActionPosterior ActionPosterior::one_hot(int k, int size) {
  if (k < 0 || k >= size) throw ContractViolation("one_hot: index out of range");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(size);
  p[k] = 1.0;
  return ActionPosterior(std::move(p));
}

ActionPosterior ActionPosterior::uniform(int size) {
  return ActionPosterior(Eigen::VectorXd::Constant(size, 1.0 / size));
}

int ActionPosterior::argmax() const {
  Eigen::Index i = 0;
  probs_.maxCoeff(&i);
  return static_cast<int>(i);
}

// ---------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::identity(int dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& columns) {
  if (columns.cols() == 0) throw ContractViolation("Standardizer::fit: no data");
  Standardizer s;
  s.offset = columns.rowwise().mean();
  const Eigen::MatrixXd centered = columns.colwise() - s.offset;
  s.scale = (centered.rowwise().squaredNorm() / static_cast<double>(columns.cols()))
                .cwiseSqrt()
                .cwiseMax(1e-3);
  return s;
}

Eigen::MatrixXd Standardizer::normalize(const Eigen::MatrixXd& raw) const {
  return (raw.colwise() - offset).array().colwise() / scale.array();
}

Eigen::MatrixXd Standardizer::denormalize(const Eigen::MatrixXd& normalized) const {
  return (normalized.array().colwise() * scale.array()).matrix().colwise() + offset;
}

// ---------------------------------------------------------------------------
// ModelState

void ModelDims::validate() const {
  if (actions < 1) throw ContractViolation("ModelDims: K must be >= 1");
  if (latent_dim < 1) throw ContractViolation("ModelDims: D must be >= 1");
  if (horizon < 1) throw ContractViolation("ModelDims: T must be >= 1");
  if (scenario_dim < 1) throw ContractViolation("ModelDims: scenario dim must be >= 1");
  if (hidden.empty()) throw ContractViolation("ModelDims: need at least one hidden layer");
  for (int h : hidden) {
    if (h < 1) throw ContractViolation("ModelDims: hidden widths must be positive");
  }
}

namespace {

struct Layouts {
  std::vector<int> encoder, decoder, classifier, trunk, head;
};

Layouts layouts(const ModelDims& d) {
  Layouts l;
  l.encoder = {d.trajectory_dim()};
  l.decoder = {d.latent_dim};
  l.classifier = {d.classifier_shares_trunk ? d.trunk_dim() : d.scenario_dim};
  l.trunk = {d.scenario_dim};
  for (int h : d.hidden) {
    l.encoder.push_back(h);
    l.decoder.push_back(h);
    l.trunk.push_back(h);
  }
  if (d.classifier_shares_trunk) {
    l.classifier.push_back(d.trunk_dim());
  } else {
    l.classifier.insert(l.classifier.end(), d.hidden.begin(), d.hidden.end());
  }
  l.encoder.push_back(2 * d.latent_dim);
  l.decoder.push_back(d.trajectory_dim());
  l.classifier.push_back(d.actions);
  l.head = {d.trunk_dim(), d.trunk_dim(), 2 * d.latent_dim};
  return l;
}

}  // namespace

ModelState ModelState::initialize(const ModelDims& dims, Rng& rng) {
  dims.validate();
  const Layouts l = layouts(dims);
  ModelState m;
  m.dims = dims;
  m.trajectory_norm = Standardizer::identity(dims.trajectory_dim());
  m.scenario_norm = Standardizer::identity(dims.scenario_dim);
  m.encoder = Mlp(l.encoder, OutputHead::gaussian, rng);
  m.decoder = Mlp(l.decoder, OutputHead::linear, rng);
  m.classifier = Mlp(l.classifier, OutputHead::linear, rng);
  const int trunks = dims.disjoint_dual ? dims.actions : 1;
  for (int k = 0; k < trunks; ++k) m.dual_trunks.emplace_back(l.trunk, OutputHead::rectified, rng);
  for (int k = 0; k < dims.actions; ++k) m.dual_heads.emplace_back(l.head, OutputHead::gaussian, rng);
  m.mixture = LatentMixture(dims.actions, dims.latent_dim);
  return m;
}

ModelState ModelState::zeros(const ModelDims& dims) {
  dims.validate();
  const Layouts l = layouts(dims);
  ModelState m;
  m.dims = dims;
  m.trajectory_norm = Standardizer::identity(dims.trajectory_dim());
  m.scenario_norm = Standardizer::identity(dims.scenario_dim);
  m.encoder = Mlp::zeros(l.encoder, OutputHead::gaussian);
  m.decoder = Mlp::zeros(l.decoder, OutputHead::linear);
  m.classifier = Mlp::zeros(l.classifier, OutputHead::linear);
  const int trunks = dims.disjoint_dual ? dims.actions : 1;
  for (int k = 0; k < trunks; ++k) m.dual_trunks.push_back(Mlp::zeros(l.trunk, OutputHead::rectified));
  for (int k = 0; k < dims.actions; ++k) m.dual_heads.push_back(Mlp::zeros(l.head, OutputHead::gaussian));
  m.mixture = LatentMixture(dims.actions, dims.latent_dim);
  return m;
}

std::vector<ParamRef> ModelState::params(std::initializer_list<BlockGroup> groups) {
  std::vector<ParamRef> out;
  collect_params(*this, groups, out);
  return out;
}

std::vector<ConstParamRef> ModelState::params(std::initializer_list<BlockGroup> groups) const {
  std::vector<ConstParamRef> out;
  collect_params(*this, groups, out);
  return out;
}

std::vector<ParamRef> ModelState::all_params() { return params(kAllGroups); }
std::vector<ConstParamRef> ModelState::all_params() const { return params(kAllGroups); }

bool ModelState::all_finite() const {
  for (const auto& block : all_params()) {
    for (double v : block.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Inference primitives

DiagGaussian encode_x(const ModelState& m, const Trajectory& x) {
  if (x.flat.size() != m.dims.trajectory_dim()) {
    throw ContractViolation("encode_x: trajectory dim " + std::to_string(x.flat.size()) +
                            ", expected " + std::to_string(m.dims.trajectory_dim()));
  }
  return m.encoder.forward_gaussian(Eigen::VectorXd(m.trajectory_norm.normalize(x.flat).col(0)));
}

Trajectory decode_z(const ModelState& m, const LatentPoint& z) {
  if (z.dim() != m.dims.latent_dim) {
    throw ContractViolation("decode_z: latent dim " + std::to_string(z.dim()) + ", expected " +
                            std::to_string(m.dims.latent_dim));
  }
  return {m.trajectory_norm.denormalize(m.decoder.forward(z.coords)).col(0)};
}

Eigen::VectorXd classifier_logits(const ModelState& m, const ScenarioFeatures& s) {
  check_scenario(m, s, "prior_y");
  if (m.dims.classifier_shares_trunk) return m.classifier.forward(trunk_features(m, s, 0));
  return m.classifier.forward(Eigen::VectorXd(m.scenario_norm.normalize(s.values).col(0)));
}

ActionPosterior prior_y(const ModelState& m, const ScenarioFeatures& s) {
  Eigen::VectorXd p = log_softmax(classifier_logits(m, s)).array().exp();
  p /= p.sum();
  return ActionPosterior(std::move(p));
}

DiagGaussian mixture_component(const ModelState& m, int k) {
  check_action(m, k, "mixture_component");
  return m.mixture.component(k);
}

DiagGaussian dual_encode(const ModelState& m, const ScenarioFeatures& s, int k) {
  check_action(m, k, "dual_encode");
  check_scenario(m, s, "dual_encode");
  return m.dual_heads[k].forward_gaussian(trunk_features(m, s, k));
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  return logits.array() - lse;
}

ActionPosterior normalize_scores(const Eigen::VectorXd& log_prior, const Eigen::VectorXd& penalty) {
  if (log_prior.size() != penalty.size()) {
    throw ContractViolation("normalize_scores: dimension mismatch");
  }
  Eigen::VectorXd score = log_prior - penalty;
  double top = -std::numeric_limits<double>::infinity();
  for (double v : score) {
    if (std::isnan(v)) throw DegeneratePosterior("posterior score is NaN");
    top = std::max(top, v);
  }
  if (!std::isfinite(top)) throw DegeneratePosterior("no action has nonzero prior mass");
  // std::exp maps -inf to exactly 0; the vectorized Eigen exp may not.
  Eigen::VectorXd p = (score.array() - top).unaryExpr([](double v) { return std::exp(v); });
  p /= p.sum();
  return ActionPosterior(std::move(p));
}

ActionPosterior qy_base(const Eigen::VectorXd& log_prior, const DiagGaussian& qz,
                        const LatentMixture& mixture) {
  if (log_prior.size() != mixture.components()) {
    throw ContractViolation("qy_base: prior length != K");
  }
  Eigen::VectorXd penalty(mixture.components());
  for (int k = 0; k < mixture.components(); ++k) {
    penalty[k] = cross_entropy(qz, mixture.component(k));
  }
  return normalize_scores(log_prior, penalty);
}

ActionPosterior qy_unified(const Eigen::VectorXd& log_prior, const DiagGaussian& qz,
                           const std::vector<DiagGaussian>& dual, const LatentMixture& mixture) {
  if (log_prior.size() != mixture.components() ||
      static_cast<int>(dual.size()) != mixture.components()) {
    throw ContractViolation("qy_unified: prior / dual outputs must have K entries");
  }
  Eigen::VectorXd penalty(mixture.components());
  for (int k = 0; k < mixture.components(); ++k) {
    const DiagGaussian component = mixture.component(k);
    penalty[k] = cross_entropy(qz, component) + kl_diag(dual[k], component);
  }
  return normalize_scores(log_prior, penalty);
}

ActionPosterior compute_qy_base(const ModelState& m, const Trajectory& x,
                                const ScenarioFeatures& s) {
  return qy_base(log_softmax(classifier_logits(m, s)), encode_x(m, x), m.mixture);
}

ActionPosterior compute_qy_unified(const ModelState& m, const Trajectory& x,
                                   const ScenarioFeatures& s) {
  std::vector<DiagGaussian> dual;
  dual.reserve(m.dims.actions);
  for (int k = 0; k < m.dims.actions; ++k) dual.push_back(dual_encode(m, s, k));
  return qy_unified(log_softmax(classifier_logits(m, s)), encode_x(m, x), dual, m.mixture);
}

ActionPosterior apply_label_override(const ActionPosterior& qy, std::optional<int> label) {
  if (!label) return qy;
  if (*label < 0 || *label >= qy.size()) {
    throw ContractViolation("apply_label_override: label " + std::to_string(*label) +
                            " out of range");
  }
  return ActionPosterior::one_hot(*label, qy.size());
}

double average_displacement(const Trajectory& a, const Trajectory& b) {
  if (a.flat.size() != b.flat.size() || a.flat.size() % 2 != 0 || a.flat.size() == 0) {
    throw ContractViolation("average_displacement: trajectory shapes differ");
  }
  double total = 0.0;
  for (int t = 0; t < a.horizon(); ++t) total += (a.waypoint(t) - b.waypoint(t)).norm();
  return total / a.horizon();
}

}  // namespace actionset
