#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "actionset/model.hpp"
#include "actionset/objectives.hpp"
#include "actionset/synthdata.hpp"

namespace actionset {

enum class Stage { base, dual, unified };
std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

struct TrainConfig {
  int actions = 12;
  int latent_dim = 3;
  int horizon = 30;
  std::vector<int> hidden = {64, 64};
  bool disjoint_dual = false;
  bool classifier_shares_trunk = false;

  int batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 13;
  Stage stage = Stage::base;

  int pretrain_epochs = 50;
  int base_epochs = 40;
  int dual_epochs = 30;
  int unified_epochs = 40;

  int init_samples = 4096;
  int kmeans_iterations = 50;
  double effective_threshold = 0.05;
  double holdout_fraction = 0.1;
  double recon_gate = 0.5;  // held-out reconstruction ADE gate after pretraining, m

  int early_stop_window = 20;
  double early_stop_tolerance = 1e-4;
  int smoothing_window = 10;

  ObjectiveOptions objective;

  ModelDims dims() const;
  void validate() const;
};

/// Parsed "key = value" text. '#' starts a comment. Keys are consumed as they
/// are read so leftovers can be reported as unknown.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in);
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::filesystem::path& path);

  std::optional<std::string> take(const std::string& key);
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  /// Throws ConfigError naming every key that nothing consumed.
  void require_all_consumed() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

TrainConfig train_config_from(KeyValues& kv);
GeneratorConfig generator_config_from(KeyValues& kv);

/// Canonical text; parsing it back yields an identical config.
std::string to_key_values(const TrainConfig& config);
std::string to_key_values(const GeneratorConfig& config);

/// CRC-32 of the canonical text, as 8 hex digits.
std::string config_digest(const std::string& canonical_text);

}  // namespace actionset
