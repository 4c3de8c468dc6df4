#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>

namespace actionset {

/// speed, history (2), curvature, layout one-hot (5), lane offset, lead gap.
inline constexpr int kScenarioDim = 11;
inline constexpr int kLayoutCount = 5;
inline constexpr int kLayoutOffset = 4;

/// Future waypoints flattened as [x_0, y_0, x_1, y_1, ...] in meters.
struct Trajectory {
  Eigen::VectorXd flat;

  int horizon() const { return static_cast<int>(flat.size() / 2); }
  Eigen::Vector2d waypoint(int t) const { return {flat[2 * t], flat[2 * t + 1]}; }
  bool operator==(const Trajectory&) const = default;
};

/// Fixed-length context descriptor for one scenario.
struct ScenarioFeatures {
  Eigen::VectorXd values;

  int dim() const { return static_cast<int>(values.size()); }
  bool operator==(const ScenarioFeatures&) const = default;
};

/// What training code sees: no generator label. `known_action` carries an
/// optional partial label (an action index, not a generator family).
struct TrainingSample {
  ScenarioFeatures scenario;
  Trajectory trajectory;
  std::optional<int> known_action;
};

/// Mean per-waypoint Euclidean distance between two trajectories.
double average_displacement(const Trajectory& a, const Trajectory& b);

}  // namespace actionset
