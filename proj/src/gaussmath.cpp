#include "actionset/gaussmath.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "actionset/errors.hpp"

namespace actionset {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // ln(2 pi)

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw ContractViolation(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                            " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

double clamp_log_var(double v) { return std::clamp(v, kLogVarMin, kLogVarMax); }

DiagGaussian::DiagGaussian(Eigen::VectorXd mean, Eigen::VectorXd log_var)
    : mean_(std::move(mean)), log_var_(std::move(log_var)) {
  if (mean_.size() < 1) throw ContractViolation("DiagGaussian: empty mean");
  require_same_dim(mean_.size(), log_var_.size(), "DiagGaussian");
  log_var_ = log_var_.unaryExpr([](double v) { return clamp_log_var(v); });
}

DiagGaussian DiagGaussian::standard(int dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim)};
}

double DiagGaussian::entropy() const {
  return 0.5 * (static_cast<double>(dim()) * (kLog2Pi + 1.0) + log_var_.sum());
}

double kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  require_same_dim(q.dim(), p.dim(), "kl_diag");
  double total = 0.0;
  for (int d = 0; d < q.dim(); ++d) {
    const double diff = q.mean()[d] - p.mean()[d];
    const double ratio = std::exp(q.log_var()[d] - p.log_var()[d]);
    const double mahal = diff * diff * std::exp(-p.log_var()[d]);
    total += 0.5 * (ratio + mahal - 1.0 - (q.log_var()[d] - p.log_var()[d]));
  }
  // ratio - 1 - ln(ratio) >= 0 analytically; rounding can leave a tiny negative.
  return std::max(total, 0.0);
}

double cross_entropy(const DiagGaussian& q, const DiagGaussian& p) {
  require_same_dim(q.dim(), p.dim(), "cross_entropy");
  double total = 0.0;
  for (int d = 0; d < q.dim(); ++d) {
    const double diff = q.mean()[d] - p.mean()[d];
    total += 0.5 * (kLog2Pi + p.log_var()[d] +
                    (std::exp(q.log_var()[d]) + diff * diff) * std::exp(-p.log_var()[d]));
  }
  return total;
}

KlGradient kl_diag_gradient(const DiagGaussian& q, const DiagGaussian& p) {
  require_same_dim(q.dim(), p.dim(), "kl_diag_gradient");
  const Eigen::ArrayXd diff = (q.mean() - p.mean()).array();
  const Eigen::ArrayXd inv_p = (-p.log_var().array()).exp();
  const Eigen::ArrayXd q_var = q.log_var().array().exp();
  KlGradient g;
  g.q_mean = diff * inv_p;
  g.p_mean = -g.q_mean;
  g.q_log_var = 0.5 * (q_var * inv_p - 1.0);
  g.p_log_var = 0.5 * (1.0 - (q_var + diff * diff) * inv_p);
  return g;
}

double log_pdf_identity_cov(const Eigen::VectorXd& mean, const Eigen::VectorXd& point) {
  require_same_dim(mean.size(), point.size(), "log_pdf_identity_cov");
  return -0.5 * (static_cast<double>(mean.size()) * kLog2Pi + (point - mean).squaredNorm());
}

LatentPoint sample_reparam(const DiagGaussian& g, const Eigen::VectorXd& noise) {
  require_same_dim(g.dim(), noise.size(), "sample_reparam");
  return {g.mean() + g.stddev().cwiseProduct(noise)};
}

std::vector<LatentPoint> sigma_points(const DiagGaussian& g) {
  const Eigen::VectorXd sigma = g.stddev();
  std::vector<LatentPoint> points;
  points.reserve(2 * g.dim() + 1);
  points.push_back({g.mean()});
  for (int d = 0; d < g.dim(); ++d) {
    Eigen::VectorXd plus = g.mean();
    Eigen::VectorXd minus = g.mean();
    plus[d] += sigma[d];
    minus[d] -= sigma[d];
    points.push_back({std::move(plus)});
    points.push_back({std::move(minus)});
  }
  return points;
}

}  // namespace actionset
