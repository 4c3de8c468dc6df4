#pragma once

#include <Eigen/Dense>
#include <vector>

namespace actionset {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

/// Clamps a log-variance into [kLogVarMin, kLogVarMax].
double clamp_log_var(double v);

/// Diagonal Gaussian parameterized by mean and log-variance.
///
/// The log-variance is clamped on construction, so every instance holds
/// log_var entries inside [-10, 10].
class DiagGaussian {
 public:
  DiagGaussian(Eigen::VectorXd mean, Eigen::VectorXd log_var);

  static DiagGaussian standard(int dim);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& log_var() const { return log_var_; }
  Eigen::VectorXd variance() const { return log_var_.array().exp(); }
  Eigen::VectorXd stddev() const { return (0.5 * log_var_.array()).exp(); }

  double entropy() const;

  bool operator==(const DiagGaussian&) const = default;

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd log_var_;
};

/// A realization of a latent variable.
struct LatentPoint {
  Eigen::VectorXd coords;
  int dim() const { return static_cast<int>(coords.size()); }
};

double kl_diag(const DiagGaussian& q, const DiagGaussian& p);
double cross_entropy(const DiagGaussian& q, const DiagGaussian& p);

/// Partial derivatives of kl_diag(q, p) with respect to all four parameter vectors.
struct KlGradient {
  Eigen::VectorXd q_mean;
  Eigen::VectorXd q_log_var;
  Eigen::VectorXd p_mean;
  Eigen::VectorXd p_log_var;
};
KlGradient kl_diag_gradient(const DiagGaussian& q, const DiagGaussian& p);

/// ln N(point; mean, I), normalization included.
double log_pdf_identity_cov(const Eigen::VectorXd& mean, const Eigen::VectorXd& point);

/// mean + exp(log_var / 2) * noise.
LatentPoint sample_reparam(const DiagGaussian& g, const Eigen::VectorXd& noise);

/// The 2D+1 points {mean, mean + sigma_0 e_0, mean - sigma_0 e_0, ...}.
std::vector<LatentPoint> sigma_points(const DiagGaussian& g);

}  // namespace actionset
