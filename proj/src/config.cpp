#include "actionset/config.hpp"

#include <fmt/format.h>

#include <boost/crc.hpp>
#include <charconv>
#include <fstream>
#include <sstream>

#include "actionset/errors.hpp"

namespace actionset {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

template <>
double parse_number<double>(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
  }
  if (used != text.size()) throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + text + "'");
}

template <typename T>
void read(KeyValues& kv, const std::string& key, T& target) {
  if (auto v = kv.take(key)) {
    if constexpr (std::is_same_v<T, bool>) {
      target = parse_bool(key, *v);
    } else {
      target = parse_number<T>(key, *v);
    }
  }
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::base: return "base";
    case Stage::dual: return "dual";
    case Stage::unified: return "unified";
  }
  return "unknown";
}

Stage stage_from_string(const std::string& name) {
  if (name == "base") return Stage::base;
  if (name == "dual") return Stage::dual;
  if (name == "unified") return Stage::unified;
  throw ConfigError("unknown stage '" + name + "' (expected base, dual or unified)");
}

ModelDims TrainConfig::dims() const {
  ModelDims d;
  d.actions = actions;
  d.latent_dim = latent_dim;
  d.horizon = horizon;
  d.scenario_dim = kScenarioDim;
  d.hidden = hidden;
  d.disjoint_dual = disjoint_dual;
  d.classifier_shares_trunk = classifier_shares_trunk;
  return d;
}

void TrainConfig::validate() const {
  if (actions < 2) throw ConfigError("actions (K) must be >= 2");
  if (latent_dim < 1) throw ConfigError("latent_dim (D) must be >= 1");
  if (horizon < 1) throw ConfigError("horizon (T) must be >= 1");
  if (hidden.empty()) throw ConfigError("hidden must list at least one width");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden widths must be positive");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (pretrain_epochs < 0 || base_epochs < 0 || dual_epochs < 0 || unified_epochs < 0) {
    throw ConfigError("epoch counts must be >= 0");
  }
  if (init_samples < 1) throw ConfigError("init_samples must be >= 1");
  if (kmeans_iterations < 1) throw ConfigError("kmeans_iterations must be >= 1");
  if (effective_threshold < 0.0 || effective_threshold >= 1.0) {
    throw ConfigError("effective_threshold must lie in [0, 1)");
  }
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("holdout_fraction must lie in [0, 1)");
  }
  if (early_stop_window < 1 || smoothing_window < 1) throw ConfigError("windows must be >= 1");
  if (objective.dual_samples < 1) throw ConfigError("dual_samples must be >= 1");
}

KeyValues KeyValues::parse(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("config line {}: expected 'key = value'", line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("config line {}: empty key", line_no));
    if (kv.values_.contains(key)) {
      throw ConfigError(fmt::format("config line {}: duplicate key '{}'", line_no, key));
    }
    kv.values_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::parse(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in);
}

std::optional<std::string> KeyValues::take(const std::string& key) {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  consumed_.insert(key);
  return it->second;
}

std::vector<std::string> KeyValues::keys_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (k.starts_with(prefix)) out.push_back(k);
  }
  return out;
}

void KeyValues::require_all_consumed() const {
  std::string unknown;
  for (const auto& [k, v] : values_) {
    if (!consumed_.contains(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  }
  if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
}

TrainConfig train_config_from(KeyValues& kv) {
  TrainConfig c;
  read(kv, "actions", c.actions);
  read(kv, "latent_dim", c.latent_dim);
  read(kv, "horizon", c.horizon);
  if (auto v = kv.take("hidden")) {
    c.hidden.clear();
    for (const auto& item : split_list(*v)) c.hidden.push_back(parse_number<int>("hidden", item));
  }
  read(kv, "disjoint_dual", c.disjoint_dual);
  read(kv, "classifier_shares_trunk", c.classifier_shares_trunk);
  read(kv, "batch_size", c.batch_size);
  read(kv, "learning_rate", c.learning_rate);
  read(kv, "seed", c.seed);
  if (auto v = kv.take("stage")) c.stage = stage_from_string(*v);
  read(kv, "pretrain_epochs", c.pretrain_epochs);
  read(kv, "base_epochs", c.base_epochs);
  read(kv, "dual_epochs", c.dual_epochs);
  read(kv, "unified_epochs", c.unified_epochs);
  read(kv, "init_samples", c.init_samples);
  read(kv, "kmeans_iterations", c.kmeans_iterations);
  read(kv, "effective_threshold", c.effective_threshold);
  read(kv, "holdout_fraction", c.holdout_fraction);
  read(kv, "recon_gate", c.recon_gate);
  read(kv, "early_stop_window", c.early_stop_window);
  read(kv, "early_stop_tolerance", c.early_stop_tolerance);
  read(kv, "smoothing_window", c.smoothing_window);
  read(kv, "dual_samples", c.objective.dual_samples);
  read(kv, "weight.recon", c.objective.weights.recon);
  read(kv, "weight.kl_y", c.objective.weights.kl_y);
  read(kv, "weight.kl_z", c.objective.weights.kl_z);
  read(kv, "weight.kl_z_prime", c.objective.weights.kl_z_prime);
  c.validate();
  return c;
}

GeneratorConfig generator_config_from(KeyValues& kv) {
  GeneratorConfig c = default_fixture();
  read(kv, "data.samples", c.samples);
  read(kv, "horizon", c.horizon);
  read(kv, "data.dt", c.dt);
  read(kv, "data.lane_width", c.lane_width);
  if (auto list = kv.take("data.families")) {
    std::vector<FamilySpec> families;
    for (const auto& name : split_list(*list)) {
      FamilySpec f;
      f.name = name;
      for (const auto& fixture : c.families) {
        if (fixture.name == name) f = fixture;
      }
      families.push_back(f);
    }
    c.families = std::move(families);
  }
  for (auto& f : c.families) {
    const std::string prefix = "data.family." + f.name + ".";
    if (auto v = kv.take(prefix + "kind")) f.kind = maneuver_kind_from_string(*v);
    read(kv, prefix + "weight", f.weight);
    read(kv, prefix + "speed_min", f.speed_min);
    read(kv, prefix + "speed_max", f.speed_max);
    read(kv, prefix + "speed_change", f.speed_change);
    read(kv, prefix + "radius_min", f.radius_min);
    read(kv, prefix + "radius_max", f.radius_max);
    read(kv, prefix + "noise_sigma", f.noise_sigma);
    read(kv, prefix + "lead_gap_min", f.lead_gap_min);
    read(kv, prefix + "lead_gap_max", f.lead_gap_max);
    if (auto v = kv.take(prefix + "layout")) {
      f.layout_weights.clear();
      for (const auto& item : split_list(*v)) {
        f.layout_weights.push_back(parse_number<double>(prefix + "layout", item));
      }
    }
  }
  c.validate();
  return c;
}

std::string to_key_values(const TrainConfig& c) {
  std::string hidden;
  for (std::size_t i = 0; i < c.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(c.hidden[i]);
  std::string out;
  out += fmt::format("actions = {}\n", c.actions);
  out += fmt::format("latent_dim = {}\n", c.latent_dim);
  out += fmt::format("horizon = {}\n", c.horizon);
  out += fmt::format("hidden = {}\n", hidden);
  out += fmt::format("disjoint_dual = {}\n", c.disjoint_dual);
  out += fmt::format("classifier_shares_trunk = {}\n", c.classifier_shares_trunk);
  out += fmt::format("batch_size = {}\n", c.batch_size);
  out += fmt::format("learning_rate = {}\n", fmt_double(c.learning_rate));
  out += fmt::format("seed = {}\n", c.seed);
  out += fmt::format("stage = {}\n", to_string(c.stage));
  out += fmt::format("pretrain_epochs = {}\n", c.pretrain_epochs);
  out += fmt::format("base_epochs = {}\n", c.base_epochs);
  out += fmt::format("dual_epochs = {}\n", c.dual_epochs);
  out += fmt::format("unified_epochs = {}\n", c.unified_epochs);
  out += fmt::format("init_samples = {}\n", c.init_samples);
  out += fmt::format("kmeans_iterations = {}\n", c.kmeans_iterations);
  out += fmt::format("effective_threshold = {}\n", fmt_double(c.effective_threshold));
  out += fmt::format("holdout_fraction = {}\n", fmt_double(c.holdout_fraction));
  out += fmt::format("recon_gate = {}\n", fmt_double(c.recon_gate));
  out += fmt::format("early_stop_window = {}\n", c.early_stop_window);
  out += fmt::format("early_stop_tolerance = {}\n", fmt_double(c.early_stop_tolerance));
  out += fmt::format("smoothing_window = {}\n", c.smoothing_window);
  out += fmt::format("dual_samples = {}\n", c.objective.dual_samples);
  out += fmt::format("weight.recon = {}\n", fmt_double(c.objective.weights.recon));
  out += fmt::format("weight.kl_y = {}\n", fmt_double(c.objective.weights.kl_y));
  out += fmt::format("weight.kl_z = {}\n", fmt_double(c.objective.weights.kl_z));
  out += fmt::format("weight.kl_z_prime = {}\n", fmt_double(c.objective.weights.kl_z_prime));
  return out;
}

std::string to_key_values(const GeneratorConfig& c) {
  std::string out;
  out += fmt::format("data.samples = {}\n", c.samples);
  out += fmt::format("horizon = {}\n", c.horizon);
  out += fmt::format("data.dt = {}\n", fmt_double(c.dt));
  out += fmt::format("data.lane_width = {}\n", fmt_double(c.lane_width));
  std::string names;
  for (std::size_t i = 0; i < c.families.size(); ++i) names += (i ? "," : "") + c.families[i].name;
  out += fmt::format("data.families = {}\n", names);
  for (const auto& f : c.families) {
    const std::string p = "data.family." + f.name + ".";
    std::string layout;
    for (std::size_t i = 0; i < f.layout_weights.size(); ++i) {
      layout += (i ? "," : "") + fmt_double(f.layout_weights[i]);
    }
    out += fmt::format("{}kind = {}\n", p, to_string(f.kind));
    out += fmt::format("{}weight = {}\n", p, fmt_double(f.weight));
    out += fmt::format("{}speed_min = {}\n", p, fmt_double(f.speed_min));
    out += fmt::format("{}speed_max = {}\n", p, fmt_double(f.speed_max));
    out += fmt::format("{}speed_change = {}\n", p, fmt_double(f.speed_change));
    out += fmt::format("{}radius_min = {}\n", p, fmt_double(f.radius_min));
    out += fmt::format("{}radius_max = {}\n", p, fmt_double(f.radius_max));
    out += fmt::format("{}noise_sigma = {}\n", p, fmt_double(f.noise_sigma));
    out += fmt::format("{}lead_gap_min = {}\n", p, fmt_double(f.lead_gap_min));
    out += fmt::format("{}lead_gap_max = {}\n", p, fmt_double(f.lead_gap_max));
    out += fmt::format("{}layout = {}\n", p, layout);
  }
  return out;
}

std::string config_digest(const std::string& canonical_text) {
  boost::crc_32_type crc;
  crc.process_bytes(canonical_text.data(), canonical_text.size());
  return fmt::format("{:08x}", crc.checksum());
}

}  // namespace actionset
