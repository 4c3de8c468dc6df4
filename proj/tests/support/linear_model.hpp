#pragma once

// A one-dimensional latent model whose decoder is affine, so every integral
// in the bound has a reference value.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "actionset/model.hpp"
#include "support/oracles.hpp"

namespace oracle {

inline ModelState linear_decoder_model(Rng& rng, int horizon = 3) {
  ModelDims dims;
  dims.actions = 2;
  dims.latent_dim = 1;
  dims.horizon = horizon;
  dims.scenario_dim = 3;
  dims.hidden = {6};
  ModelState m = random_model(dims, rng);
  m.decoder = actionset::Mlp::zeros({1, dims.trajectory_dim()}, actionset::OutputHead::linear);
  m.decoder.layers()[0].weight = normal_vector(dims.trajectory_dim(), rng, 0.8);
  m.decoder.layers()[0].bias = normal_vector(dims.trajectory_dim(), rng, 0.5);
  Eigen::VectorXd mean(1), log_var(1);
  mean << -1.5;
  log_var << -0.5;
  m.mixture.set_component(0, mean, log_var);
  mean << 1.5;
  log_var << 0.2;
  m.mixture.set_component(1, mean, log_var);
  return m;
}

/// Draws x from the generative model itself, so the bound is exercised on typical data.
inline TrainingSample linear_model_sample(const ModelState& m, Rng& rng) {
  TrainingSample s;
  s.scenario.values = normal_vector(m.dims.scenario_dim, rng);
  const Eigen::VectorXd p = actionset::prior_y(m, s.scenario).probs();
  std::discrete_distribution<int> pick(p.data(), p.data() + p.size());
  const DiagGaussian c = m.mixture.component(pick(rng));
  const double z = c.mean()[0] + c.stddev()[0] * normal_vector(1, rng)[0];
  const auto& layer = m.decoder.layers()[0];
  s.trajectory.flat = layer.weight.col(0) * z + layer.bias + normal_vector(m.dims.trajectory_dim(), rng);
  return s;
}

/// integral q(z|x) ln p(x|z) dz by trapezoid.
inline double expected_log_likelihood(const ModelState& m, const TrainingSample& s) {
  const DiagGaussian q = actionset::encode_x(m, s.trajectory);
  const double mu = q.mean()[0], sd = q.stddev()[0];
  const auto& layer = m.decoder.layers()[0];
  const int n = m.dims.trajectory_dim();
  auto integrand = [&](double z) {
    const Eigen::VectorXd r = s.trajectory.flat - layer.weight.col(0) * z - layer.bias;
    const double log_lik = -0.5 * (n * std::log(2.0 * std::numbers::pi) + r.squaredNorm());
    return std::exp(log_normal_pdf(z, mu, sd * sd)) * log_lik;
  };
  return trapezoid(integrand, mu - 14.0 * sd, mu + 14.0 * sd, 20000);
}

/// The bound with its integral term computed by quadrature and q_y in closed form.
inline double elbo_quadrature(const ModelState& m, const TrainingSample& s) {
  const DiagGaussian q = actionset::encode_x(m, s.trajectory);
  const Eigen::VectorXd p = actionset::prior_y(m, s.scenario).probs();
  const Eigen::VectorXd qy = actionset::compute_qy_base(m, s.trajectory, s.scenario).probs();
  double expected_kl = 0.0;
  for (int k = 0; k < m.dims.actions; ++k) expected_kl += qy[k] * kl(q, m.mixture.component(k));
  return expected_log_likelihood(m, s) - kl_discrete(qy, p) - expected_kl;
}

/// Closed-form ln p(x|s): each component integrates to N(x; W mu_k + b, I + var_k W W^T).
inline double log_marginal_exact(const ModelState& m, const TrainingSample& s) {
  const Eigen::VectorXd p = actionset::prior_y(m, s.scenario).probs();
  const auto& layer = m.decoder.layers()[0];
  const Eigen::VectorXd w = layer.weight.col(0);
  const int n = m.dims.trajectory_dim();
  Eigen::VectorXd terms(m.dims.actions);
  for (int k = 0; k < m.dims.actions; ++k) {
    const DiagGaussian c = m.mixture.component(k);
    const Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(n, n) + c.variance()[0] * w * w.transpose();
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    const Eigen::VectorXd r = s.trajectory.flat - w * c.mean()[0] - layer.bias;
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    terms[k] = std::log(p[k]) - 0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det + r.dot(llt.solve(r)));
  }
  const double top = terms.maxCoeff();
  return top + std::log((terms.array() - top).exp().sum());
}

struct ImportanceEstimate {
  double log_marginal = 0.0;
  double standard_error = 0.0;  // of log_marginal, delta method
};

/// Importance sampling with the prior mixture as proposal: weights are p(x|z).
inline ImportanceEstimate log_marginal_importance(const ModelState& m, const TrainingSample& s, int draws,
                                                  Rng& rng) {
  const Eigen::VectorXd p = actionset::prior_y(m, s.scenario).probs();
  std::discrete_distribution<int> pick(p.data(), p.data() + p.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& layer = m.decoder.layers()[0];
  const int n = m.dims.trajectory_dim();
  Eigen::VectorXd log_w(draws);
  for (int i = 0; i < draws; ++i) {
    const DiagGaussian c = m.mixture.component(pick(rng));
    const double z = c.mean()[0] + c.stddev()[0] * normal(rng);
    const Eigen::VectorXd r = s.trajectory.flat - layer.weight.col(0) * z - layer.bias;
    log_w[i] = -0.5 * (n * std::log(2.0 * std::numbers::pi) + r.squaredNorm());
  }
  const double top = log_w.maxCoeff();
  const Eigen::ArrayXd w = (log_w.array() - top).exp();
  const double mean = w.mean();
  const double sd = std::sqrt((w - mean).square().sum() / (draws - 1));
  return {top + std::log(mean), sd / (mean * std::sqrt(static_cast<double>(draws)))};
}

}  // namespace oracle
