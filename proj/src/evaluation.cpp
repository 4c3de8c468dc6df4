#include "actionset/evaluation.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "actionset/errors.hpp"
#include "actionset/training.hpp"

namespace actionset {

namespace {

void require_finite(const ModelState& m) {
  if (!m.all_finite()) throw ModelStateError("model holds non-finite parameters");
}

DiagGaussian latent_for(const ModelState& m, const ScenarioFeatures& s, int k, PredictMode mode) {
  return mode == PredictMode::prior ? mixture_component(m, k) : dual_encode(m, s, k);
}

Prediction predict_unchecked(const ModelState& m, const ScenarioFeatures& s, PredictMode mode,
                             double threshold) {
  const ActionPosterior prior = prior_y(m, s);
  Prediction out;
  out.source = mode;
  for (int k = 0; k < prior.size(); ++k) {
    if (!(prior[k] > threshold)) continue;
    ActionPrediction a;
    a.action = k;
    a.probability = prior[k];
    for (const auto& point : sigma_points(latent_for(m, s, k, mode))) a.sigma.push_back(decode_z(m, point));
    out.actions.push_back(std::move(a));
  }
  return out;
}

double entropy_of(const std::map<int, double>& counts, double n) {
  double h = 0.0;
  for (const auto& [key, c] : counts) {
    if (c > 0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

std::string svg_color(int action, int actions) {
  const int hue = static_cast<int>(std::lround(360.0 * action / std::max(actions, 1)));
  return fmt::format("hsl({},70%,45%)", hue);
}

struct Bounds {
  double min_x = std::numeric_limits<double>::infinity();
  double max_x = -std::numeric_limits<double>::infinity();
  double min_y = std::numeric_limits<double>::infinity();
  double max_y = -std::numeric_limits<double>::infinity();

  void add(const Trajectory& t) {
    for (int i = 0; i < t.horizon(); ++i) {
      const Eigen::Vector2d p = t.waypoint(i);
      min_x = std::min(min_x, p.x());
      max_x = std::max(max_x, p.x());
      min_y = std::min(min_y, p.y());
      max_y = std::max(max_y, p.y());
    }
  }
};

void svg_polyline(std::ostream& out, const Trajectory& t, const Bounds& b, double scale,
                  double left, double top, double size, const std::string& color, double width,
                  const char* extra = "") {
  out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << "\"" << extra
      << " points=\"";
  for (int i = 0; i < t.horizon(); ++i) {
    const Eigen::Vector2d p = t.waypoint(i);
    const double px = left + (p.x() - b.min_x) * scale;
    const double py = top + size - (p.y() - b.min_y) * scale;
    out << fmt::format("{}{:.2f},{:.2f}", i ? " " : "", px, py);
  }
  out << "\"/>\n";
}

}  // namespace

std::string to_string(PredictMode mode) {
  return mode == PredictMode::prior ? "prior" : "posterior";
}

PredictMode predict_mode_from_string(const std::string& name) {
  if (name == "prior") return PredictMode::prior;
  if (name == "posterior") return PredictMode::posterior;
  throw ConfigError("unknown prediction mode '" + name + "'");
}

Prediction predict(const ModelState& m, const ScenarioFeatures& s, PredictMode mode,
                   double threshold) {
  if (!(threshold >= 0.0 && threshold < 1.0)) {
    throw ContractViolation(fmt::format("threshold {} outside [0, 1)", threshold));
  }
  require_finite(m);
  return predict_unchecked(m, s, mode, threshold);
}

std::vector<int> effective_actions(const ModelState& m, std::span<const TrainingSample> data,
                                   double threshold) {
  std::vector<bool> seen(static_cast<std::size_t>(m.dims.actions), false);
  for (const auto& sample : data) {
    const ActionPosterior p = prior_y(m, sample.scenario);
    for (int k = 0; k < p.size(); ++k) {
      if (p[k] > threshold) seen[k] = true;
    }
  }
  std::vector<int> out;
  for (int k = 0; k < m.dims.actions; ++k) {
    if (seen[k]) out.push_back(k);
  }
  return out;
}

ClusterAgreement cluster_agreement(std::span<const int> assignment, std::span<const int> labels) {
  if (assignment.size() != labels.size()) {
    throw ContractViolation("cluster_agreement: assignment and label counts differ");
  }
  ClusterAgreement r;
  if (assignment.empty()) return r;
  const double n = static_cast<double>(assignment.size());
  std::map<int, double> by_cluster, by_label;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    by_cluster[assignment[i]] += 1;
    by_label[labels[i]] += 1;
    joint[{assignment[i], labels[i]}] += 1;
  }
  r.clusters_used = static_cast<int>(by_cluster.size());
  r.degenerate = by_cluster.size() == 1;

  double mutual = 0.0;
  for (const auto& [key, c] : joint) {
    mutual += (c / n) * std::log(c * n / (by_cluster[key.first] * by_label[key.second]));
  }
  const double denom = 0.5 * (entropy_of(by_cluster, n) + entropy_of(by_label, n));
  r.nmi = denom > 0.0 && !r.degenerate ? std::clamp(mutual / denom, 0.0, 1.0) : 0.0;

  std::map<int, double> majority;
  for (const auto& [key, c] : joint) majority[key.first] = std::max(majority[key.first], c);
  double hits = 0.0;
  for (const auto& [cluster, c] : majority) hits += c;
  r.purity = hits / n;
  return r;
}

ClusterAgreement cluster_agreement(const ModelState& m, std::span<const LabeledSample> data,
                                   PosteriorRule rule) {
  std::vector<int> assignment, labels;
  assignment.reserve(data.size());
  labels.reserve(data.size());
  for (const auto& sample : data) {
    const ActionPosterior q = rule == PosteriorRule::base
                                  ? compute_qy_base(m, sample.trajectory, sample.scenario)
                                  : compute_qy_unified(m, sample.trajectory, sample.scenario);
    assignment.push_back(q.argmax());
    labels.push_back(sample.hidden_label);
  }
  return cluster_agreement(assignment, labels);
}

double min_ade(const ModelState& m, std::span<const TrainingSample> data, PredictMode mode,
               int top_m) {
  if (top_m < 1 || top_m > m.dims.actions) {
    throw ContractViolation(fmt::format("top_m {} outside [1, {}]", top_m, m.dims.actions));
  }
  if (data.empty()) return 0.0;
  std::vector<int> order(static_cast<std::size_t>(m.dims.actions));
  double total = 0.0;
  for (const auto& sample : data) {
    const ActionPosterior p = prior_y(m, sample.scenario);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < top_m; ++i) {
      const DiagGaussian g = latent_for(m, sample.scenario, order[i], mode);
      best = std::min(best, average_displacement(decode_z(m, {g.mean()}), sample.trajectory));
    }
    total += best;
  }
  return total / static_cast<double>(data.size());
}

ObjectiveSummary holdout_elbo(const ModelState& m, std::span<const TrainingSample> data,
                              Objective objective, int n_noise, Rng& rng,
                              const ObjectiveOptions& options) {
  if (n_noise < 1) throw ContractViolation("holdout_elbo: n_noise must be positive");
  ObjectiveSummary s;
  if (data.empty()) return s;
  for (int draw = 0; draw < n_noise; ++draw) {
    const BatchNoise noise =
        draw_noise(objective, m.dims, static_cast<int>(data.size()), options.dual_samples, rng);
    const BatchResult r = evaluate_batch(objective, m, data, noise, nullptr, options);
    for (const auto& rep : r.reports) {
      s.total += rep.total;
      s.recon_x += rep.recon_x;
      s.recon_x_prime += rep.recon_x_prime;
      s.kl_y += rep.monitored_kl_y.value_or(rep.kl_y);
      s.expected_kl_z += rep.expected_kl_z;
      s.expected_kl_z_prime += rep.expected_kl_z_prime;
    }
  }
  const double n = static_cast<double>(data.size()) * n_noise;
  s.total /= n;
  s.recon_x /= n;
  s.recon_x_prime /= n;
  s.kl_y /= n;
  s.expected_kl_z /= n;
  s.expected_kl_z_prime /= n;
  return s;
}

double fan_spread(const Prediction& prediction) {
  double sum = 0.0;
  int counted = 0;
  for (const auto& a : prediction.actions) {
    const std::size_t n = a.sigma.size();
    if (n < 2) continue;
    double pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) pairs += average_displacement(a.sigma[i], a.sigma[j]);
    }
    sum += pairs / static_cast<double>(n * (n - 1) / 2);
    ++counted;
  }
  return counted ? sum / counted : 0.0;
}

double mean_fan_spread(const ModelState& m, std::span<const TrainingSample> data, PredictMode mode,
                       double threshold) {
  if (data.empty()) return 0.0;
  require_finite(m);
  double total = 0.0;
  for (const auto& sample : data) total += fan_spread(predict_unchecked(m, sample.scenario, mode, threshold));
  return total / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Export

void write_prediction_csv(const Prediction& prediction, std::ostream& out) {
  out << "action,sigma_index,t,x,y,probability\n";
  for (const auto& a : prediction.actions) {
    for (std::size_t j = 0; j < a.sigma.size(); ++j) {
      const Trajectory& traj = a.sigma[j];
      for (int t = 0; t < traj.horizon(); ++t) {
        const Eigen::Vector2d p = traj.waypoint(t);
        out << fmt::format("{},{},{},{:.17g},{:.17g},{:.17g}\n", a.action, j, t, p.x(), p.y(),
                           a.probability);
      }
    }
  }
}

void write_prediction_svg(const Prediction& prediction, const std::optional<Trajectory>& truth,
                          bool grid, std::ostream& out) {
  constexpr double kPanel = 240.0;
  constexpr double kMargin = 20.0;
  const int panels = grid ? std::max<int>(1, static_cast<int>(prediction.actions.size())) : 1;
  const int columns = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(panels))));
  const int rows = (panels + columns - 1) / columns;

  Bounds b;
  for (const auto& a : prediction.actions) {
    for (const auto& t : a.sigma) b.add(t);
  }
  if (truth) b.add(*truth);
  if (!std::isfinite(b.min_x)) b = Bounds{-1.0, 1.0, -1.0, 1.0};
  const double span = std::max({b.max_x - b.min_x, b.max_y - b.min_y, 1.0}) + 2.0;
  b.min_x -= 1.0 + 0.5 * (span - 2.0 - (b.max_x - b.min_x));
  b.min_y -= 1.0 + 0.5 * (span - 2.0 - (b.max_y - b.min_y));
  const double scale = kPanel / span;
  int actions_total = 0;
  for (const auto& a : prediction.actions) actions_total = std::max(actions_total, a.action + 1);

  const double width = columns * (kPanel + kMargin) + kMargin;
  const double height = rows * (kPanel + kMargin + 14.0) + kMargin;
  out << fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} "
      "{:.0f}\">\n",
      width, height, width, height);
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (int panel = 0; panel < panels; ++panel) {
    const double left = kMargin + (panel % columns) * (kPanel + kMargin);
    const double top = kMargin + 14.0 + (panel / columns) * (kPanel + kMargin + 14.0);
    out << fmt::format(
        "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"none\" "
        "stroke=\"#cccccc\"/>\n",
        left, top, kPanel, kPanel);
    std::vector<const ActionPrediction*> shown;
    if (grid) {
      if (panel < static_cast<int>(prediction.actions.size())) shown.push_back(&prediction.actions[panel]);
    } else {
      for (const auto& a : prediction.actions) shown.push_back(&a);
    }
    if (grid && !shown.empty()) {
      out << fmt::format(
          "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"11\">action {} "
          "p={:.3f}</text>\n",
          left, top - 4.0, shown.front()->action, shown.front()->probability);
    } else if (!grid) {
      out << fmt::format(
          "<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"11\">{}-conditioned, "
          "{} actions</text>\n",
          left, top - 4.0, to_string(prediction.source), prediction.actions.size());
    }
    for (const ActionPrediction* a : shown) {
      const std::string color = svg_color(a->action, actions_total);
      for (std::size_t j = 1; j < a->sigma.size(); ++j) {
        svg_polyline(out, a->sigma[j], b, scale, left, top, kPanel, color, 1.0);
      }
    }
    for (const ActionPrediction* a : shown) {
      svg_polyline(out, a->mean(), b, scale, left, top, kPanel, "black", 2.0);
    }
    if (truth) {
      svg_polyline(out, *truth, b, scale, left, top, kPanel, "#e0157a", 2.0,
                   " stroke-dasharray=\"4 3\"");
    }
  }
  out << "</svg>\n";
}

void export_plots(const Prediction& prediction, const std::optional<Trajectory>& truth,
                  const std::filesystem::path& dir, const std::string& stem, bool grid) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  const auto csv_path = dir / (stem + ".csv");
  const auto svg_path = dir / (stem + ".svg");
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  write_prediction_csv(prediction, csv);
  std::ofstream svg(svg_path, std::ios::binary | std::ios::trunc);
  if (!svg) throw std::runtime_error("cannot write " + svg_path.string());
  write_prediction_svg(prediction, truth, grid, svg);
  if (!csv || !svg) throw std::runtime_error("failed writing plots in " + dir.string());
}

Prediction action_set(const ModelState& m, std::span<const TrainingSample> data, double threshold) {
  require_finite(m);
  Eigen::VectorXd mean_prob = Eigen::VectorXd::Zero(m.dims.actions);
  for (const auto& sample : data) mean_prob += prior_y(m, sample.scenario).probs();
  if (!data.empty()) mean_prob /= static_cast<double>(data.size());
  const std::vector<int> effective = effective_actions(m, data, threshold);

  Prediction out;
  out.source = PredictMode::prior;
  for (int k : effective) {
    ActionPrediction a;
    a.action = k;
    a.probability = mean_prob[k];
    for (const auto& point : sigma_points(mixture_component(m, k))) a.sigma.push_back(decode_z(m, point));
    out.actions.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics suite

MetricsReport evaluate_model(const ModelState& m, std::span<const LabeledSample> data,
                             double threshold, int n_noise, Rng& rng) {
  require_finite(m);
  const std::vector<TrainingSample> view = training_view(data);
  MetricsReport r;
  r.samples = data.size();
  r.threshold = threshold;
  r.effective = effective_actions(m, view, threshold);
  r.agreement = cluster_agreement(m, data, PosteriorRule::base);
  r.top_m = std::min(3, m.dims.actions);
  r.min_ade_prior = min_ade(m, view, PredictMode::prior, r.top_m);
  r.min_ade_posterior = min_ade(m, view, PredictMode::posterior, r.top_m);
  r.spread_prior = mean_fan_spread(m, view, PredictMode::prior, threshold);
  r.spread_posterior = mean_fan_spread(m, view, PredictMode::posterior, threshold);
  r.base_objective = holdout_elbo(m, view, Objective::base, n_noise, rng);
  r.unified_objective = holdout_elbo(m, view, Objective::unified, n_noise, rng);
  r.reconstruction_ade = reconstruction_ade(m, view);
  return r;
}

std::string to_key_values(const MetricsReport& r) {
  std::string out;
  auto line = [&](const std::string& key, const std::string& value) {
    out += key + " = " + value + "\n";
  };
  auto num = [](double v) { return fmt::format("{}", v); };
  auto objective = [&](const std::string& prefix, const ObjectiveSummary& s) {
    line(prefix + ".total", num(s.total));
    line(prefix + ".recon_x", num(s.recon_x));
    line(prefix + ".recon_x_prime", num(s.recon_x_prime));
    line(prefix + ".kl_y", num(s.kl_y));
    line(prefix + ".kl_z", num(s.expected_kl_z));
    line(prefix + ".kl_z_prime", num(s.expected_kl_z_prime));
  };
  line("samples", std::to_string(r.samples));
  line("threshold", num(r.threshold));
  line("effective_actions", std::to_string(r.effective.size()));
  line("effective_action_indices", fmt::format("{}", fmt::join(r.effective, ",")));
  line("nmi", num(r.agreement.nmi));
  line("purity", num(r.agreement.purity));
  line("clusters_used", std::to_string(r.agreement.clusters_used));
  line("degenerate_assignment", r.agreement.degenerate ? "true" : "false");
  line("top_m", std::to_string(r.top_m));
  line("min_ade_prior", num(r.min_ade_prior));
  line("min_ade_posterior", num(r.min_ade_posterior));
  line("fan_spread_prior", num(r.spread_prior));
  line("fan_spread_posterior", num(r.spread_posterior));
  line("reconstruction_ade", num(r.reconstruction_ade));
  objective("base_objective", r.base_objective);
  objective("unified_objective", r.unified_objective);
  return out;
}

}  // namespace actionset
