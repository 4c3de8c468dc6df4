#include "actionset/synthdata.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <nlohmann/json.hpp>
#include <random>

#include "actionset/errors.hpp"

namespace actionset {

namespace {

constexpr double kLeadGapCap = 50.0;

struct Segment {
  double curvature;
  double length;
};

std::vector<Segment> curvature_program(const Maneuver& m) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double k = 1.0 / m.radius;
  switch (m.kind) {
    case ManeuverKind::straight: return {{m.road_curvature, inf}};
    case ManeuverKind::left_turn: return {{k, 0.5 * std::numbers::pi * m.radius}, {0.0, inf}};
    case ManeuverKind::right_turn: return {{-k, 0.5 * std::numbers::pi * m.radius}, {0.0, inf}};
    case ManeuverKind::u_turn: return {{k, std::numbers::pi * m.radius}, {0.0, inf}};
    case ManeuverKind::lane_change: {
      // Two opposite arcs: lateral shift 2R(1 - cos(theta)) equals the lane width.
      const double theta = std::acos(1.0 - m.lane_width / (2.0 * m.radius));
      return {{m.lateral_sign * k, theta * m.radius},
              {-m.lateral_sign * k, theta * m.radius},
              {0.0, inf}};
    }
  }
  return {};
}

/// Moves along an arc of curvature `kappa` for `length` meters. Heading is
/// measured counter-clockwise from +y.
void advance(Eigen::Vector2d& p, double& heading, double kappa, double length) {
  if (std::abs(kappa) < 1e-12) {
    p += length * Eigen::Vector2d(-std::sin(heading), std::cos(heading));
    heading += kappa * length;
    return;
  }
  const double end = heading + kappa * length;
  p += Eigen::Vector2d((std::cos(end) - std::cos(heading)) / kappa,
                       (std::sin(end) - std::sin(heading)) / kappa);
  heading = end;
}

Eigen::Vector2d position_at(const std::vector<Segment>& program, double distance) {
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  double heading = 0.0;
  double remaining = distance;
  for (const auto& seg : program) {
    const double l = std::min(remaining, seg.length);
    advance(p, heading, seg.curvature, l);
    remaining -= l;
    if (remaining <= 0.0) break;
  }
  return p;
}

bool is_intersection(RoadLayout layout) {
  return layout == RoadLayout::four_way || layout == RoadLayout::three_way ||
         layout == RoadLayout::turn_lane;
}

FamilySpec family(std::string name, ManeuverKind kind, double weight, double v_min, double v_max,
                  double dv, double r_min, double r_max, std::vector<double> layout,
                  double gap_min, double gap_max) {
  FamilySpec f;
  f.name = std::move(name);
  f.kind = kind;
  f.weight = weight;
  f.speed_min = v_min;
  f.speed_max = v_max;
  f.speed_change = dv;
  f.radius_min = r_min;
  f.radius_max = r_max;
  f.layout_weights = std::move(layout);
  f.lead_gap_min = gap_min;
  f.lead_gap_max = gap_max;
  return f;
}

}  // namespace

std::string to_string(ManeuverKind kind) {
  switch (kind) {
    case ManeuverKind::straight: return "straight";
    case ManeuverKind::left_turn: return "left_turn";
    case ManeuverKind::right_turn: return "right_turn";
    case ManeuverKind::u_turn: return "u_turn";
    case ManeuverKind::lane_change: return "lane_change";
  }
  return "unknown";
}

ManeuverKind maneuver_kind_from_string(const std::string& name) {
  for (auto kind : {ManeuverKind::straight, ManeuverKind::left_turn, ManeuverKind::right_turn,
                    ManeuverKind::u_turn, ManeuverKind::lane_change}) {
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError("unknown maneuver kind '" + name + "'");
}

void GeneratorConfig::validate() const {
  if (families.size() < 2) throw ConfigError("generator needs at least two maneuver families");
  double total = 0.0;
  for (const auto& f : families) {
    if (!(f.weight >= 0.0) || !std::isfinite(f.weight)) {
      throw ConfigError("family '" + f.name + "' has a negative or non-finite weight");
    }
    if (f.speed_min < 0.0 || f.speed_max < f.speed_min) {
      throw ConfigError("family '" + f.name + "' has an invalid speed range");
    }
    if (f.speed_change < 0.0) throw ConfigError("family '" + f.name + "' has negative speed_change");
    if (f.radius_min <= 0.0 || f.radius_max < f.radius_min) {
      throw ConfigError("family '" + f.name + "' has an invalid radius range");
    }
    if (f.kind == ManeuverKind::lane_change && lane_width > 4.0 * f.radius_min) {
      throw ConfigError("family '" + f.name + "': radius too small for the lane width");
    }
    if (f.noise_sigma < 0.0) throw ConfigError("family '" + f.name + "' has negative noise");
    if (f.layout_weights.size() != kLayoutCount) {
      throw ConfigError("family '" + f.name + "' needs 5 layout weights");
    }
    double layout_total = 0.0;
    for (double w : f.layout_weights) {
      if (!(w >= 0.0)) throw ConfigError("family '" + f.name + "' has a negative layout weight");
      layout_total += w;
    }
    if (layout_total <= 0.0) throw ConfigError("family '" + f.name + "' layout weights sum to zero");
    if (f.lead_gap_min < 0.0 || f.lead_gap_max < f.lead_gap_min) {
      throw ConfigError("family '" + f.name + "' has an invalid lead gap range");
    }
    total += f.weight;
  }
  if (total <= 0.0) throw ConfigError("family weights sum to zero");
  if (samples < 0) throw ConfigError("sample count must be nonnegative");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
}

GeneratorConfig default_fixture() {
  using K = ManeuverKind;
  GeneratorConfig c;
  //                   layout weights: straight, 4-way, 3-way, turn-lane, parking
  c.families = {
      family("straight_slow", K::straight, 0.20, 3.0, 7.0, 0.5, 10, 10, {0.5, 0.2, 0.1, 0.0, 0.2}, 5, 25),
      family("straight_fast", K::straight, 0.20, 11.0, 16.0, 0.5, 10, 10, {0.7, 0.3, 0.0, 0.0, 0.0}, 35, 60),
      family("left_turn", K::left_turn, 0.16, 4.0, 7.0, 0.5, 8, 20, {0.0, 0.5, 0.2, 0.3, 0.0}, 10, 60),
      family("right_turn", K::right_turn, 0.16, 3.0, 6.0, 0.5, 6, 14, {0.0, 0.5, 0.2, 0.3, 0.0}, 10, 60),
      family("u_turn", K::u_turn, 0.12, 2.0, 4.0, 0.3, 5, 8, {0.0, 0.3, 0.0, 0.3, 0.4}, 10, 60),
      family("lane_change", K::lane_change, 0.16, 8.0, 14.0, 0.5, 40, 80, {0.8, 0.2, 0.0, 0.0, 0.0}, 5, 20),
  };
  return c;
}

double travelled_distance(const Maneuver& m, double t) {
  const double ramp = std::max(m.ramp_time, 1e-9);
  const double accel = (m.target_speed - m.initial_speed) / ramp;
  if (t <= ramp) return m.initial_speed * t + 0.5 * accel * t * t;
  return m.initial_speed * ramp + 0.5 * accel * ramp * ramp + m.target_speed * (t - ramp);
}

Trajectory rollout(const Maneuver& maneuver, int horizon, double dt) {
  if (horizon < 1 || !(dt > 0.0)) throw ContractViolation("rollout: horizon and dt must be positive");
  const auto program = curvature_program(maneuver);
  Trajectory traj{Eigen::VectorXd(2 * horizon)};
  for (int t = 0; t < horizon; ++t) {
    const Eigen::Vector2d p = position_at(program, travelled_distance(maneuver, (t + 1) * dt));
    traj.flat[2 * t] = p.x();
    traj.flat[2 * t + 1] = p.y();
  }
  return traj;
}

Dataset generate_dataset(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::vector<double> weights;
  for (const auto& f : config.families) weights.push_back(f.weight);
  std::discrete_distribution<int> pick_family(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  Dataset data;
  data.samples.reserve(config.samples);
  for (int i = 0; i < config.samples; ++i) {
    const int label = pick_family(rng);
    const FamilySpec& fam = config.families[label];
    std::discrete_distribution<int> pick_layout(fam.layout_weights.begin(), fam.layout_weights.end());
    const auto layout = static_cast<RoadLayout>(pick_layout(rng));

    Maneuver m;
    m.kind = fam.kind;
    m.lane_width = config.lane_width;
    m.initial_speed = uniform(fam.speed_min, fam.speed_max);
    m.target_speed = std::max(0.0, m.initial_speed + uniform(-fam.speed_change, fam.speed_change));
    m.ramp_time = uniform(1.5, 2.5);
    m.radius = uniform(fam.radius_min, fam.radius_max);
    m.lateral_sign = uniform(0.0, 1.0) < 0.5 ? 1.0 : -1.0;
    if (fam.kind == ManeuverKind::straight && layout == RoadLayout::straight) {
      m.road_curvature = uniform(-0.003, 0.003);
    }

    const double accel = (m.target_speed - m.initial_speed) / m.ramp_time;
    const bool turning = fam.kind == ManeuverKind::left_turn || fam.kind == ManeuverKind::right_turn ||
                         fam.kind == ManeuverKind::u_turn;
    const bool lane_change = fam.kind == ManeuverKind::lane_change;

    Eigen::VectorXd s = Eigen::VectorXd::Zero(kScenarioDim);
    s[0] = m.initial_speed + 0.1 * normal(rng);
    s[1] = lane_change ? m.lateral_sign * uniform(0.1, 0.3) : 0.05 * normal(rng);
    s[2] = m.initial_speed - 0.5 * accel + 0.05 * normal(rng);
    if (turning) {
      s[3] = 1.0 / m.radius + 0.001 * normal(rng);
    } else if (is_intersection(layout)) {
      s[3] = 1.0 / uniform(6.0, 20.0);
    } else {
      s[3] = m.road_curvature + 1e-4 * normal(rng);
    }
    s[kLayoutOffset + static_cast<int>(layout)] = 1.0;
    s[9] = lane_change ? m.lateral_sign * uniform(0.3, 0.8) : 0.15 * normal(rng);
    s[10] = std::min(kLeadGapCap, uniform(fam.lead_gap_min, fam.lead_gap_max));

    Trajectory traj = rollout(m, config.horizon, config.dt);
    for (Eigen::Index j = 0; j < traj.flat.size(); ++j) {
      traj.flat[j] += fam.noise_sigma * std::clamp(normal(rng), -3.0, 3.0);
    }
    data.samples.push_back({static_cast<std::uint64_t>(i), {std::move(s)}, std::move(traj), label});
  }
  return data;
}

std::vector<TrainingSample> training_view(std::span<const LabeledSample> samples) {
  std::vector<TrainingSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.scenario, s.trajectory, std::nullopt});
  return out;
}

DataSplit split_holdout(const Dataset& data, double holdout_fraction) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw ContractViolation("split_holdout: fraction must lie in [0, 1)");
  }
  const auto n = data.samples.size();
  const auto holdout = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(n)));
  std::span<const LabeledSample> all(data.samples);
  return {all.first(n - holdout), all.last(holdout)};
}

void write_dataset(const Dataset& data, std::ostream& out) {
  for (const auto& s : data.samples) {
    std::string line = fmt::format("{{\"id\":{},\"scenario\":[", s.id);
    for (int j = 0; j < s.scenario.dim(); ++j) {
      line += fmt::format("{}{:.17g}", j ? "," : "", s.scenario.values[j]);
    }
    line += "],\"trajectory\":[";
    for (int t = 0; t < s.trajectory.horizon(); ++t) {
      line += fmt::format("{}[{:.17g},{:.17g}]", t ? "," : "", s.trajectory.flat[2 * t],
                          s.trajectory.flat[2 * t + 1]);
    }
    line += fmt::format("],\"label\":{}}}\n", s.hidden_label);
    out << line;
  }
  if (!out) throw std::runtime_error("dataset write failed");
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_dataset(data, out);
}

Dataset read_dataset(std::istream& in) {
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  int scenario_dim = -1;
  int horizon = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, e.what());
    }
    LabeledSample sample;
    try {
      sample.id = record.at("id").get<std::uint64_t>();
      sample.hidden_label = record.at("label").get<int>();
      const auto scen = record.at("scenario").get<std::vector<double>>();
      const auto traj = record.at("trajectory").get<std::vector<std::vector<double>>>();
      sample.scenario.values = Eigen::Map<const Eigen::VectorXd>(scen.data(), static_cast<Eigen::Index>(scen.size()));
      sample.trajectory.flat.resize(static_cast<Eigen::Index>(2 * traj.size()));
      for (std::size_t t = 0; t < traj.size(); ++t) {
        if (traj[t].size() != 2) throw SchemaError(line_no, "waypoint is not an [x, y] pair");
        sample.trajectory.flat[static_cast<Eigen::Index>(2 * t)] = traj[t][0];
        sample.trajectory.flat[static_cast<Eigen::Index>(2 * t + 1)] = traj[t][1];
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    if (scenario_dim < 0) {
      scenario_dim = sample.scenario.dim();
      horizon = sample.trajectory.horizon();
    } else if (sample.scenario.dim() != scenario_dim) {
      throw SchemaError(line_no, fmt::format("scenario has {} values, file uses {}",
                                             sample.scenario.dim(), scenario_dim));
    } else if (sample.trajectory.horizon() != horizon) {
      throw SchemaError(line_no, fmt::format("trajectory has {} waypoints, file uses {}",
                                             sample.trajectory.horizon(), horizon));
    }
    data.samples.push_back(std::move(sample));
  }
  return data;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  return read_dataset(in);
}

}  // namespace actionset
