#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "actionset/errors.hpp"
#include "actionset/evaluation.hpp"
#include "support/oracles.hpp"

using namespace actionset;

namespace {

ModelDims eval_dims(int actions = 3, int latent = 2, int horizon = 30) {
  ModelDims d;
  d.actions = actions;
  d.latent_dim = latent;
  d.horizon = horizon;
  d.scenario_dim = kScenarioDim;
  d.hidden = {8};
  return d;
}

/// Classifier ignores the scenario and returns fixed logits.
void fix_logits(ModelState& m, const Eigen::VectorXd& logits) {
  auto& last = m.classifier.layers().back();
  last.weight.setZero();
  last.bias = logits;
}

std::vector<TrainingSample> samples(const ModelDims& d, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingSample> out;
  for (int i = 0; i < n; ++i) out.push_back(oracle::random_sample(d, rng));
  return out;
}

std::string csv_of(const Prediction& p) {
  std::ostringstream out;
  write_prediction_csv(p, out);
  return out.str();
}

std::string svg_of(const Prediction& p, const std::optional<Trajectory>& truth, bool grid) {
  std::ostringstream out;
  write_prediction_svg(p, truth, grid, out);
  return out.str();
}

int count_lines(const std::string& text) { return static_cast<int>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST_CASE("threshold controls which actions are shown") {
  Rng rng(1);
  const ModelDims d = eval_dims(4);
  const ModelState m = oracle::random_model(d, rng);
  const auto data = samples(d, 30, 2);

  CHECK(predict(m, data[0].scenario, PredictMode::prior, 0.0).actions.size() == 4);
  CHECK(effective_actions(m, data, 0.0) == std::vector<int>{0, 1, 2, 3});
  CHECK(effective_actions(m, data, 1.0).empty());
  CHECK_THROWS_AS(predict(m, data[0].scenario, PredictMode::prior, 1.0), ContractViolation);
  CHECK_THROWS_AS(predict(m, data[0].scenario, PredictMode::prior, -0.1), ContractViolation);

  std::vector<int> previous = effective_actions(m, data, 0.0);
  for (double t = 0.05; t < 1.0; t += 0.05) {
    const std::vector<int> now = effective_actions(m, data, t);
    CHECK(std::includes(previous.begin(), previous.end(), now.begin(), now.end()));
    previous = now;
  }

  const ActionPosterior p = prior_y(m, data[0].scenario);
  for (const auto& a : predict(m, data[0].scenario, PredictMode::posterior, 0.2).actions) {
    CHECK(p[a.action] > 0.2);
    CHECK(a.probability == p[a.action]);
    CHECK(a.sigma.size() == 2 * d.latent_dim + 1);
  }
}

TEST_CASE("prediction refuses a non-finite model") {
  Rng rng(3);
  ModelState m = oracle::random_model(eval_dims(), rng);
  m.decoder.layers()[0].weight(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(predict(m, oracle::random_sample(m.dims, rng).scenario, PredictMode::prior), ModelStateError);
}

TEST_CASE("pinned dual heads make both prediction modes agree") {
  Rng rng(4);
  ModelState m = oracle::random_model(eval_dims(), rng);
  oracle::pin_dual_heads_to_priors(m);
  for (const auto& s : samples(m.dims, 5, 5)) {
    const Prediction prior = predict(m, s.scenario, PredictMode::prior, 0.0);
    const Prediction post = predict(m, s.scenario, PredictMode::posterior, 0.0);
    REQUIRE(prior.actions.size() == post.actions.size());
    for (std::size_t a = 0; a < prior.actions.size(); ++a) {
      for (std::size_t j = 0; j < prior.actions[a].sigma.size(); ++j) {
        CHECK((prior.actions[a].sigma[j].flat - post.actions[a].sigma[j].flat).norm() < 1e-12);
      }
    }
  }
}

TEST_CASE("cluster agreement scores") {
  SUBCASE("hand example") {
    const std::vector<int> assignment{0, 0, 1, 1};
    const std::vector<int> labels{0, 0, 0, 1};
    const ClusterAgreement r = cluster_agreement(assignment, labels);
    const double mi = 0.5 * std::log(4.0 / 3.0) + 0.25 * std::log(2.0 / 3.0) + 0.25 * std::log(2.0);
    const double h_labels = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
    CHECK(r.nmi == doctest::Approx(mi / (0.5 * (std::log(2.0) + h_labels))).epsilon(1e-12));
    CHECK(r.purity == 0.75);
    CHECK(r.clusters_used == 2);
  }
  SUBCASE("independent") {
    const std::vector<int> assignment{0, 0, 1, 1};
    const std::vector<int> labels{0, 1, 0, 1};
    const ClusterAgreement r = cluster_agreement(assignment, labels);
    CHECK(std::abs(r.nmi) < 1e-15);
    CHECK(r.purity == 0.5);
  }
  SUBCASE("relabelled identical partition") {
    Rng rng(6);
    std::uniform_int_distribution<int> label(0, 5);
    std::vector<int> labels(500), assignment(500);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = label(rng);
      assignment[i] = (labels[i] * 7 + 3) % 11;
    }
    const ClusterAgreement r = cluster_agreement(assignment, labels);
    CHECK(r.nmi == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.purity == 1.0);
    // Symmetric in its arguments.
    CHECK(cluster_agreement(labels, assignment).nmi == doctest::Approx(r.nmi).epsilon(1e-12));
  }
  SUBCASE("random assignment is near zero") {
    Rng rng(7);
    std::uniform_int_distribution<int> pick(0, 5);
    std::vector<int> labels(20000), assignment(20000);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = pick(rng);
      assignment[i] = pick(rng);
    }
    CHECK(cluster_agreement(assignment, labels).nmi < 0.01);
  }
  SUBCASE("single cluster is degenerate") {
    const std::vector<int> assignment(10, 3);
    std::vector<int> labels(10);
    for (int i = 0; i < 10; ++i) labels[static_cast<std::size_t>(i)] = i % 3;
    const ClusterAgreement r = cluster_agreement(assignment, labels);
    CHECK(r.degenerate);
    CHECK(r.nmi == 0.0);
    CHECK(r.purity == doctest::Approx(0.4));
  }
  SUBCASE("mismatched lengths") {
    const std::vector<int> a{0, 1}, b{0};
    CHECK_THROWS_AS(cluster_agreement(a, b), ContractViolation);
  }
}

TEST_CASE("minADE against known offsets") {
  Rng rng(8);
  ModelState m = oracle::random_model(eval_dims(3, 2, 5), rng);
  // Every action decodes to the decoder's last bias, whatever z is.
  auto& last = m.decoder.layers().back();
  last.weight.setZero();
  auto data = samples(m.dims, 10, 9);
  const Trajectory fixed = decode_z(m, {Eigen::VectorXd::Zero(2)});
  for (auto& s : data) s.trajectory = fixed;
  for (PredictMode mode : {PredictMode::prior, PredictMode::posterior}) {
    CHECK(min_ade(m, data, mode, 1) < 1e-12);
  }
  for (auto& s : data) {
    for (int t = 0; t < s.trajectory.horizon(); ++t) s.trajectory.flat[2 * t] += 1.0;
  }
  CHECK(min_ade(m, data, PredictMode::prior, 3) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(min_ade(m, data, PredictMode::prior, 0), ContractViolation);
  CHECK_THROWS_AS(min_ade(m, data, PredictMode::prior, 4), ContractViolation);
}

TEST_CASE("minADE does not grow with more candidates") {
  Rng rng(10);
  const ModelState m = oracle::random_model(eval_dims(4, 2, 5), rng);
  const auto data = samples(m.dims, 40, 11);
  for (PredictMode mode : {PredictMode::prior, PredictMode::posterior}) {
    double previous = std::numeric_limits<double>::infinity();
    for (int top = 1; top <= 4; ++top) {
      const double now = min_ade(m, data, mode, top);
      CHECK(now <= previous);
      previous = now;
    }
  }
}

TEST_CASE("fan spread") {
  Rng rng(12);
  ModelState m = oracle::random_model(eval_dims(2, 2, 5), rng);
  const auto s = oracle::random_sample(m.dims, rng);
  const Prediction p = predict(m, s.scenario, PredictMode::prior, 0.0);
  double expected = 0.0;
  for (const auto& a : p.actions) {
    double pairs = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < a.sigma.size(); ++i) {
      for (std::size_t j = i + 1; j < a.sigma.size(); ++j, ++count) {
        pairs += average_displacement(a.sigma[i], a.sigma[j]);
      }
    }
    expected += pairs / count;
  }
  CHECK(fan_spread(p) == doctest::Approx(expected / static_cast<double>(p.actions.size())));
  CHECK(fan_spread(Prediction{}) == 0.0);

  // Shrinking every component to the variance floor shrinks the fan.
  for (int k = 0; k < 2; ++k) {
    m.mixture.set_component(k, m.mixture.component(k).mean(), Eigen::VectorXd::Constant(2, kLogVarMin));
  }
  CHECK(fan_spread(predict(m, s.scenario, PredictMode::prior, 0.0)) < 0.05 * fan_spread(p));
}

TEST_CASE("prediction CSV has one row per action, sigma point and step") {
  Rng rng(13);
  ModelState m = oracle::random_model(eval_dims(3, 2, 30), rng);
  Eigen::VectorXd logits(3);
  logits << 10.0, -10.0, -10.0;
  fix_logits(m, logits);
  const Prediction p = predict(m, oracle::random_sample(m.dims, rng).scenario, PredictMode::prior);
  REQUIRE(p.actions.size() == 1);
  const std::string csv = csv_of(p);
  CHECK(count_lines(csv) == 1 + 1 * 5 * 30);
  CHECK(csv.starts_with("action,sigma_index,t,x,y,probability\n"));
}

TEST_CASE("plots are deterministic") {
  Rng rng(14);
  const ModelState m = oracle::random_model(eval_dims(3, 2, 6), rng);
  const auto s = oracle::random_sample(m.dims, rng);
  const Prediction p = predict(m, s.scenario, PredictMode::posterior, 0.0);
  for (bool grid : {false, true}) {
    const std::string a = svg_of(p, s.trajectory, grid);
    CHECK(a == svg_of(p, s.trajectory, grid));
    CHECK(a.starts_with("<svg"));
    CHECK(a.find("#e0157a") != std::string::npos);
  }
  CHECK(svg_of(p, std::nullopt, false).find("#e0157a") == std::string::npos);
  CHECK(svg_of(Prediction{}, std::nullopt, true).ends_with("</svg>\n"));

  const auto dir = std::filesystem::temp_directory_path() / "actionset-test-plots";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  export_plots(p, s.trajectory, dir, "fan");
  std::ifstream csv(dir / "fan.csv");
  std::stringstream buffer;
  buffer << csv.rdbuf();
  CHECK(buffer.str() == csv_of(p));
  CHECK(std::filesystem::exists(dir / "fan.svg"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("held-out objective is seeded and averages noise") {
  Rng rng(15);
  const ModelState m = oracle::random_model(eval_dims(3, 2, 4), rng);
  const auto data = samples(m.dims, 20, 16);
  Rng a(1), b(1);
  CHECK(holdout_elbo(m, data, Objective::unified, 2, a).total ==
        holdout_elbo(m, data, Objective::unified, 2, b).total);

  auto spread = [&](int draws) {
    std::vector<double> values;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      Rng r(100 + seed);
      values.push_back(holdout_elbo(m, data, Objective::base, draws, r).total);
    }
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return var;
  };
  CHECK(spread(16) < spread(1));
  CHECK_THROWS_AS(holdout_elbo(m, data, Objective::base, 0, a), ContractViolation);
}

TEST_CASE("action set averages probabilities over scenarios") {
  Rng rng(17);
  const ModelState m = oracle::random_model(eval_dims(3, 2, 4), rng);
  const auto data = samples(m.dims, 25, 18);
  const Prediction set = action_set(m, data, 0.0);
  REQUIRE(set.actions.size() == 3);
  double total = 0.0;
  for (const auto& a : set.actions) {
    double mean = 0.0;
    for (const auto& s : data) mean += prior_y(m, s.scenario)[a.action];
    CHECK(a.probability == doctest::Approx(mean / 25.0).epsilon(1e-12));
    total += a.probability;
  }
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("metrics report lists every key") {
  Rng rng(19);
  const ModelState m = oracle::random_model(eval_dims(3, 2, 30), rng);
  GeneratorConfig g = default_fixture();
  g.samples = 30;
  const Dataset d = generate_dataset(g, 20);
  const MetricsReport r = evaluate_model(m, d.samples, 0.05, 1, rng);
  CHECK(r.samples == 30);
  const std::string text = to_key_values(r);
  for (const char* key : {"samples = 30", "effective_actions = ", "nmi = ", "purity = ", "min_ade_prior = ",
                          "min_ade_posterior = ", "fan_spread_prior = ", "reconstruction_ade = ",
                          "base_objective.total = ", "unified_objective.kl_z_prime = "}) {
    CHECK_MESSAGE(text.find(key) != std::string::npos, key);
  }
}
