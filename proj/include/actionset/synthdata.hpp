#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "actionset/neuralnet.hpp"
#include "actionset/types.hpp"

namespace actionset {

enum class ManeuverKind { straight, left_turn, right_turn, u_turn, lane_change };
enum class RoadLayout { straight = 0, four_way = 1, three_way = 2, turn_lane = 3, parking = 4 };

std::string to_string(ManeuverKind kind);
ManeuverKind maneuver_kind_from_string(const std::string& name);

/// One generator category. Labels handed to evaluation are indices into
/// GeneratorConfig::families.
struct FamilySpec {
  std::string name;
  ManeuverKind kind = ManeuverKind::straight;
  double weight = 1.0;
  double speed_min = 5.0;  // initial speed range, m/s
  double speed_max = 5.0;
  double speed_change = 0.0;  // target speed = initial + U(-c, c), clipped at 0
  double radius_min = 10.0;   // turn / lane-change arc radius range, m
  double radius_max = 10.0;
  double noise_sigma = 0.15;  // per-waypoint position noise, m (clipped at 3 sigma)
  /// Probability of each RoadLayout given this family.
  std::vector<double> layout_weights = {1.0, 0.0, 0.0, 0.0, 0.0};
  double lead_gap_min = 50.0;  // m, capped at 50 in the features
  double lead_gap_max = 50.0;

  /// Upper bound on speed reachable by this family.
  double max_speed() const { return speed_max + speed_change; }
};

struct GeneratorConfig {
  std::vector<FamilySpec> families;
  int samples = 20000;
  int horizon = 30;
  double dt = 0.2;
  double lane_width = 3.5;

  void validate() const;
};

/// Six-family fixture: straight-slow, straight-fast, left, right, U-turn, lane change.
GeneratorConfig default_fixture();

/// Fully specified maneuver, ready to roll out.
struct Maneuver {
  ManeuverKind kind = ManeuverKind::straight;
  double initial_speed = 0.0;
  double target_speed = 0.0;
  double ramp_time = 2.0;      // seconds to reach target_speed
  double radius = 10.0;        // arc radius for turns / lane-change S-curve
  double road_curvature = 0.0; // straight families follow the road
  double lateral_sign = 1.0;   // lane change direction (+1 left)
  double lane_width = 3.5;
};

/// Noise-free constant-curvature rollout in the target-centric frame
/// (origin at current pose, heading along +y, positive curvature turns left).
Trajectory rollout(const Maneuver& maneuver, int horizon, double dt);

/// Distance travelled after `t` seconds under the trapezoidal speed profile.
double travelled_distance(const Maneuver& maneuver, double t);

struct LabeledSample {
  std::uint64_t id = 0;
  ScenarioFeatures scenario;
  Trajectory trajectory;
  int hidden_label = 0;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// Deterministic in (config, seed).
Dataset generate_dataset(const GeneratorConfig& config, std::uint64_t seed);

/// Strips hidden labels.
std::vector<TrainingSample> training_view(std::span<const LabeledSample> samples);

/// Splits off the trailing `holdout_fraction` of samples.
struct DataSplit {
  std::span<const LabeledSample> train;
  std::span<const LabeledSample> holdout;
};
DataSplit split_holdout(const Dataset& data, double holdout_fraction);

/// One JSON object per line: {"id", "scenario", "trajectory": [[x, y], ...], "label"}.
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);
void write_dataset(const Dataset& data, std::ostream& out);
Dataset read_dataset(std::istream& in);

}  // namespace actionset
