#include <doctest.h>

#include <cmath>
#include <numbers>

#include "actionset/errors.hpp"
#include "actionset/gaussmath.hpp"
#include "support/oracles.hpp"

using namespace actionset;

namespace {

DiagGaussian gauss(std::initializer_list<double> mean, std::initializer_list<double> log_var) {
  Eigen::VectorXd m(static_cast<Eigen::Index>(mean.size())), lv(static_cast<Eigen::Index>(log_var.size()));
  Eigen::Index i = 0;
  for (double v : mean) m[i++] = v;
  i = 0;
  for (double v : log_var) lv[i++] = v;
  return {m, lv};
}

DiagGaussian random_gaussian(int dim, Rng& rng) {
  std::uniform_real_distribution<double> lv(-2.0, 2.0);
  Eigen::VectorXd log_var(dim);
  for (int d = 0; d < dim; ++d) log_var[d] = lv(rng);
  return {oracle::normal_vector(dim, rng, 2.0), log_var};
}

}  // namespace

TEST_CASE("log-variance is clamped on construction") {
  const DiagGaussian g = gauss({0.0, 1.0}, {-40.0, 25.0});
  CHECK(g.log_var()[0] == kLogVarMin);
  CHECK(g.log_var()[1] == kLogVarMax);
  CHECK(clamp_log_var(3.0) == 3.0);
}

TEST_CASE("DiagGaussian rejects mismatched or empty parameters") {
  CHECK_THROWS_AS(DiagGaussian(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3)), ContractViolation);
  CHECK_THROWS_AS(DiagGaussian(Eigen::VectorXd(), Eigen::VectorXd()), ContractViolation);
}

TEST_CASE("entropy of a standard normal") {
  const double expected = 0.5 * 3.0 * (std::log(2.0 * std::numbers::pi) + 1.0);
  CHECK(DiagGaussian::standard(3).entropy() == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("kl of identical gaussians is zero") {
  Rng rng(1);
  const DiagGaussian g = random_gaussian(3, rng);
  CHECK(kl_diag(g, g) == doctest::Approx(0.0));
}

TEST_CASE("kl and cross-entropy agree with quadrature") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const DiagGaussian q = random_gaussian(2, rng);
    const DiagGaussian p = random_gaussian(2, rng);
    CHECK(std::abs(kl_diag(q, p) - oracle::kl(q, p)) < 1e-6);
    CHECK(std::abs(cross_entropy(q, p) - oracle::cross_entropy(q, p)) < 1e-6);
  }
}

TEST_CASE("cross-entropy decomposes into entropy plus kl") {
  Rng rng(3);
  const DiagGaussian q = random_gaussian(3, rng);
  const DiagGaussian p = random_gaussian(3, rng);
  CHECK(cross_entropy(q, p) == doctest::Approx(q.entropy() + kl_diag(q, p)).epsilon(1e-12));
}

TEST_CASE("kl stays finite and nonnegative across the clamp range") {
  const DiagGaussian narrow = gauss({0.0}, {-10.0});
  const DiagGaussian wide = gauss({1e6}, {10.0});
  CHECK(std::isfinite(kl_diag(narrow, wide)));
  CHECK(kl_diag(narrow, wide) >= 0.0);
  CHECK(std::isfinite(kl_diag(wide, narrow)));
}

TEST_CASE("kl gradient matches central differences") {
  Rng rng(4);
  const DiagGaussian q = random_gaussian(2, rng);
  const DiagGaussian p = random_gaussian(2, rng);
  const KlGradient g = kl_diag_gradient(q, p);
  const double h = 1e-6;
  for (int d = 0; d < 2; ++d) {
    auto bump = [&](const DiagGaussian& base, bool mean, double delta) {
      Eigen::VectorXd m = base.mean(), lv = base.log_var();
      (mean ? m : lv)[d] += delta;
      return DiagGaussian(m, lv);
    };
    auto fd_q = [&](bool mean) { return (kl_diag(bump(q, mean, h), p) - kl_diag(bump(q, mean, -h), p)) / (2 * h); };
    auto fd_p = [&](bool mean) { return (kl_diag(q, bump(p, mean, h)) - kl_diag(q, bump(p, mean, -h))) / (2 * h); };
    CHECK(g.q_mean[d] == doctest::Approx(fd_q(true)).epsilon(1e-6));
    CHECK(g.q_log_var[d] == doctest::Approx(fd_q(false)).epsilon(1e-6));
    CHECK(g.p_mean[d] == doctest::Approx(fd_p(true)).epsilon(1e-6));
    CHECK(g.p_log_var[d] == doctest::Approx(fd_p(false)).epsilon(1e-6));
  }
}

TEST_CASE("dimension mismatch is a contract violation") {
  CHECK_THROWS_AS(kl_diag(DiagGaussian::standard(2), DiagGaussian::standard(3)), ContractViolation);
  CHECK_THROWS_AS(cross_entropy(DiagGaussian::standard(1), DiagGaussian::standard(2)), ContractViolation);
}

TEST_CASE("identity-covariance log density") {
  Eigen::VectorXd mean(2), point(2);
  mean << 1.0, -1.0;
  point << 2.0, 1.0;
  const double expected = -0.5 * (2.0 * std::log(2.0 * std::numbers::pi) + 1.0 + 4.0);
  CHECK(log_pdf_identity_cov(mean, point) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("reparameterized sample") {
  const DiagGaussian g = gauss({1.0, 2.0}, {std::log(4.0), 0.0});
  Eigen::VectorXd noise(2);
  noise << 1.0, -2.0;
  const LatentPoint z = sample_reparam(g, noise);
  CHECK(z.coords[0] == doctest::Approx(3.0));
  CHECK(z.coords[1] == doctest::Approx(0.0));
  CHECK(sample_reparam(g, Eigen::VectorXd::Zero(2)).coords == g.mean());
}

TEST_CASE("sigma points: mean first, then plus and minus one sigma per dimension") {
  const DiagGaussian g = gauss({1.0, -1.0}, {std::log(9.0), 0.0});
  const auto pts = sigma_points(g);
  REQUIRE(pts.size() == 5);
  CHECK(pts[0].coords == g.mean());
  CHECK(pts[1].coords[0] == doctest::Approx(4.0));
  CHECK(pts[2].coords[0] == doctest::Approx(-2.0));
  CHECK(pts[3].coords[1] == doctest::Approx(0.0));
  CHECK(pts[4].coords[1] == doctest::Approx(-2.0));
  CHECK(pts[3].coords[0] == 1.0);
}
