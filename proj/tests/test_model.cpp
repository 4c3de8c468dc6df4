#include <doctest.h>

#include <cmath>
#include <limits>

#include "actionset/errors.hpp"
#include "actionset/model.hpp"
#include "support/oracles.hpp"

using namespace actionset;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

LatentMixture mixture_of(const std::vector<DiagGaussian>& components) {
  LatentMixture m(static_cast<int>(components.size()), components.front().dim());
  for (std::size_t k = 0; k < components.size(); ++k) {
    m.set_component(static_cast<int>(k), components[k].mean(), components[k].log_var());
  }
  return m;
}

}  // namespace

TEST_CASE("mixture components are columns of the code map") {
  LatentMixture m(3, 2);
  m.set_component(1, vec({1.0, 2.0}), vec({0.5, -0.5}));
  const DiagGaussian c = m.component(1);
  CHECK(c.mean() == vec({1.0, 2.0}));
  CHECK(c.log_var() == vec({0.5, -0.5}));
  CHECK(m.apply(ActionPosterior::one_hot(1, 3).probs()) == c);
  CHECK_THROWS_AS(m.component(3), ContractViolation);
}

TEST_CASE("action posterior validation") {
  CHECK_THROWS_AS(ActionPosterior(vec({0.5, 0.6})), ContractViolation);
  CHECK_THROWS_AS(ActionPosterior(vec({1.5, -0.5})), ContractViolation);
  CHECK_THROWS_AS(ActionPosterior(vec({std::nan(""), 1.0})), ContractViolation);
  CHECK(ActionPosterior::one_hot(2, 4).argmax() == 2);
  CHECK(ActionPosterior::uniform(4)[3] == 0.25);
}

TEST_CASE("standardizer round trip and scale floor") {
  Eigen::MatrixXd data(2, 3);
  data << 1.0, 2.0, 3.0, 5.0, 5.0, 5.0;
  const Standardizer s = Standardizer::fit(data);
  CHECK(s.offset[0] == doctest::Approx(2.0));
  CHECK(s.scale[1] == doctest::Approx(1e-3));
  CHECK((s.denormalize(s.normalize(data)) - data).norm() < 1e-12);
  CHECK(s.normalize(data).row(0).mean() == doctest::Approx(0.0));
}

TEST_CASE("prior over actions is normalized and stateless") {
  Rng rng(3);
  const ModelDims dims = oracle::random_tiny_dims(rng);
  const ModelState m = oracle::random_model(dims, rng);
  const TrainingSample s = oracle::random_sample(dims, rng);
  const ActionPosterior a = prior_y(m, s.scenario);
  CHECK(a.probs().sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(prior_y(m, s.scenario).probs() == a.probs());
}

TEST_CASE("identical components and uniform prior give a uniform posterior") {
  const DiagGaussian c = DiagGaussian::standard(2);
  const ActionPosterior q = qy_base(Eigen::VectorXd::Constant(3, std::log(1.0 / 3.0)),
                                    DiagGaussian(vec({4.0, -1.0}), vec({0.1, 0.2})), mixture_of({c, c, c}));
  for (int k = 0; k < 3; ++k) CHECK(q[k] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("one-hot prior forces a one-hot posterior") {
  const double ninf = -std::numeric_limits<double>::infinity();
  const DiagGaussian near = DiagGaussian::standard(1);
  const DiagGaussian far(vec({50.0}), vec({0.0}));
  const ActionPosterior q = qy_base(vec({ninf, 0.0}), near, mixture_of({near, far}));
  CHECK(q[1] == 1.0);
  CHECK(q[0] == 0.0);
}

TEST_CASE("two-component posterior matches quadrature cross-entropies") {
  const DiagGaussian qz(vec({0.0}), vec({std::log(0.01)}));
  const DiagGaussian c0 = DiagGaussian::standard(1);
  const DiagGaussian c1(vec({4.0}), vec({0.0}));
  const ActionPosterior q = qy_base(vec({std::log(0.5), std::log(0.5)}), qz, mixture_of({c0, c1}));
  const double h0 = oracle::cross_entropy(qz, c0), h1 = oracle::cross_entropy(qz, c1);
  const double expected0 = 1.0 / (1.0 + std::exp(h0 - h1));
  CHECK(q[0] == doctest::Approx(expected0).epsilon(1e-9));
  CHECK(q[1] == doctest::Approx(1.0 - expected0).epsilon(1e-9));
}

TEST_CASE("posterior stays normalized across twelve orders of magnitude in distance") {
  for (double distance : {1e-6, 1e-3, 1.0, 1e3, 1e6}) {
    const DiagGaussian qz = DiagGaussian::standard(1);
    const DiagGaussian c0(vec({distance}), vec({0.0}));
    const DiagGaussian c1(vec({-2.0 * distance}), vec({-3.0}));
    const ActionPosterior q = qy_base(vec({std::log(0.3), std::log(0.7)}), qz, mixture_of({c0, c1}));
    CHECK(std::isfinite(q[0]));
    CHECK(q.probs().sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("no finite score is a degenerate posterior") {
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(normalize_scores(vec({ninf, ninf}), vec({0.0, 0.0})), DegeneratePosterior);
  CHECK_THROWS_AS(normalize_scores(vec({0.0, std::nan("")}), vec({0.0, 0.0})), DegeneratePosterior);
}

TEST_CASE("unified posterior matches a direct evaluation of its formula") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const ModelDims dims = oracle::random_tiny_dims(rng);
    const ModelState m = oracle::random_model(dims, rng);
    const TrainingSample s = oracle::random_sample(dims, rng);
    const DiagGaussian qz = encode_x(m, s.trajectory);
    const Eigen::VectorXd p = prior_y(m, s.scenario).probs();
    Eigen::VectorXd score(dims.actions);
    for (int k = 0; k < dims.actions; ++k) {
      score[k] = std::log(p[k]) - oracle::cross_entropy(qz, m.mixture.component(k)) -
                 oracle::kl(dual_encode(m, s.scenario, k), m.mixture.component(k));
    }
    const Eigen::VectorXd expected = (score.array() - score.maxCoeff()).exp() / (score.array() - score.maxCoeff()).exp().sum();
    CHECK((compute_qy_unified(m, s.trajectory, s.scenario).probs() - expected).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("unified posterior reduces to the base posterior when dual heads equal the priors") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelDims dims = oracle::random_tiny_dims(rng);
    ModelState m = oracle::random_model(dims, rng);
    oracle::pin_dual_heads_to_priors(m);
    const TrainingSample s = oracle::random_sample(dims, rng);
    const auto base = compute_qy_base(m, s.trajectory, s.scenario).probs();
    const auto unified = compute_qy_unified(m, s.trajectory, s.scenario).probs();
    CHECK((base - unified).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("zero dual heads give the same output for every action") {
  ModelDims dims;
  dims.actions = 3;
  dims.latent_dim = 2;
  dims.horizon = 2;
  dims.scenario_dim = 3;
  dims.hidden = {4};
  const ModelState m = ModelState::zeros(dims);
  const ScenarioFeatures s{vec({1.0, 2.0, 3.0})};
  CHECK(dual_encode(m, s, 0) == dual_encode(m, s, 2));
}

TEST_CASE("label override") {
  const ActionPosterior q = ActionPosterior::uniform(5);
  CHECK(apply_label_override(q, std::nullopt).probs() == q.probs());
  CHECK(apply_label_override(q, 3).probs() == vec({0, 0, 0, 1, 0}));
  CHECK_THROWS_AS(apply_label_override(q, 5), ContractViolation);
}

TEST_CASE("classifier reads trunk features when sharing is enabled") {
  ModelDims dims;
  dims.actions = 2;
  dims.latent_dim = 1;
  dims.horizon = 2;
  dims.scenario_dim = 3;
  dims.hidden = {5, 4};
  dims.classifier_shares_trunk = true;
  Rng rng(1);
  const ModelState m = ModelState::initialize(dims, rng);
  CHECK(m.classifier.input_dim() == 4);
  CHECK(m.dual_trunks.size() == 1);
  dims.disjoint_dual = true;
  CHECK(ModelState::initialize(dims, rng).dual_trunks.size() == 2);
}

TEST_CASE("parameter blocks come in a fixed order") {
  ModelDims dims;
  dims.actions = 2;
  dims.latent_dim = 1;
  dims.horizon = 2;
  dims.scenario_dim = 3;
  dims.hidden = {4};
  ModelState m = ModelState::zeros(dims);
  const auto blocks = m.all_params();
  CHECK(blocks.front().name.starts_with("encoder."));
  CHECK(blocks.back().name == "mixture.weight");
  CHECK(m.params({BlockGroup::dual}).size() == 1 * 2 + 2 * 4);
}

TEST_CASE("average displacement of a constant offset") {
  Trajectory a{Eigen::VectorXd::Zero(6)};
  Trajectory b{Eigen::VectorXd::Zero(6)};
  for (int t = 0; t < 3; ++t) b.flat[2 * t] = 1.0;
  CHECK(average_displacement(a, b) == doctest::Approx(1.0));
  CHECK_THROWS_AS(average_displacement(a, Trajectory{Eigen::VectorXd::Zero(4)}), ContractViolation);
}
