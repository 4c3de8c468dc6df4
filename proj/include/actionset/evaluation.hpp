#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "actionset/model.hpp"
#include "actionset/objectives.hpp"
#include "actionset/synthdata.hpp"
#include "actionset/types.hpp"

namespace actionset {

inline constexpr double kDefaultThreshold = 0.05;

/// Which latent distribution is decoded per action.
enum class PredictMode {
  prior,      // p(z|y)
  posterior,  // q(z'|y,s)
};
std::string to_string(PredictMode mode);
PredictMode predict_mode_from_string(const std::string& name);

struct ActionPrediction {
  int action = 0;
  double probability = 0.0;  // p(y|s)
  /// Decoded sigma points: index 0 is the mean, then +sigma / -sigma per latent dimension.
  std::vector<Trajectory> sigma;

  const Trajectory& mean() const { return sigma.front(); }
};

struct Prediction {
  PredictMode source = PredictMode::prior;
  std::vector<ActionPrediction> actions;  // in action-index order
};

/// Actions with p(y|s) > threshold, each decoded at its sigma points.
/// Throws ModelStateError when the model holds non-finite parameters.
Prediction predict(const ModelState& m, const ScenarioFeatures& s, PredictMode mode,
                   double threshold = kDefaultThreshold);

/// Sorted indices k with p(y=k|s) > threshold for at least one sample.
std::vector<int> effective_actions(const ModelState& m, std::span<const TrainingSample> data,
                                   double threshold = kDefaultThreshold);

struct ClusterAgreement {
  double nmi = 0.0;
  double purity = 0.0;
  int clusters_used = 0;
  bool degenerate = false;  // every sample landed in one cluster
};

/// NMI (arithmetic-mean normalization) and majority-label purity.
ClusterAgreement cluster_agreement(std::span<const int> assignment, std::span<const int> labels);

enum class PosteriorRule { base, unified };

/// Assigns each sample to argmax q(y|x,s) and scores against hidden labels.
ClusterAgreement cluster_agreement(const ModelState& m, std::span<const LabeledSample> data,
                                   PosteriorRule rule = PosteriorRule::base);

/// Mean over samples of the best ADE among the top_m most probable actions'
/// mean trajectories. Throws ContractViolation unless 1 <= top_m <= K.
double min_ade(const ModelState& m, std::span<const TrainingSample> data, PredictMode mode,
               int top_m);

/// Dataset-mean objective terms.
struct ObjectiveSummary {
  double total = 0.0;
  double recon_x = 0.0;
  double recon_x_prime = 0.0;
  double kl_y = 0.0;
  double expected_kl_z = 0.0;
  double expected_kl_z_prime = 0.0;
};

/// Objective averaged over samples and `n_noise` noise draws per sample.
ObjectiveSummary holdout_elbo(const ModelState& m, std::span<const TrainingSample> data,
                              Objective objective, int n_noise, Rng& rng,
                              const ObjectiveOptions& options = {});

/// Mean pairwise ADE between the sigma trajectories of each shown action,
/// averaged over actions. Zero when no action has more than one trajectory.
double fan_spread(const Prediction& prediction);

/// Scenario-averaged fan_spread.
double mean_fan_spread(const ModelState& m, std::span<const TrainingSample> data, PredictMode mode,
                       double threshold = kDefaultThreshold);

// ---------------------------------------------------------------------------
// Export

/// Rows: action, sigma_index, t, x, y, probability.
void write_prediction_csv(const Prediction& prediction, std::ostream& out);
/// One panel per action when `grid`, otherwise all actions overlaid.
void write_prediction_svg(const Prediction& prediction, const std::optional<Trajectory>& truth,
                          bool grid, std::ostream& out);

/// Writes <stem>.csv and <stem>.svg into `dir`.
void export_plots(const Prediction& prediction, const std::optional<Trajectory>& truth,
                  const std::filesystem::path& dir, const std::string& stem, bool grid = false);

/// Prior-mode fans of every effective action, with probabilities averaged over `data`.
Prediction action_set(const ModelState& m, std::span<const TrainingSample> data,
                      double threshold = kDefaultThreshold);

// ---------------------------------------------------------------------------
// Metrics suite

struct MetricsReport {
  std::size_t samples = 0;
  double threshold = kDefaultThreshold;
  std::vector<int> effective;
  ClusterAgreement agreement;
  double min_ade_prior = 0.0;
  double min_ade_posterior = 0.0;
  int top_m = 3;
  double spread_prior = 0.0;
  double spread_posterior = 0.0;
  ObjectiveSummary base_objective;
  ObjectiveSummary unified_objective;
  double reconstruction_ade = 0.0;
};

MetricsReport evaluate_model(const ModelState& m, std::span<const LabeledSample> data,
                             double threshold, int n_noise, Rng& rng);

/// "key = value" lines in a fixed order; numbers in shortest round-trip form.
std::string to_key_values(const MetricsReport& report);

}  // namespace actionset
