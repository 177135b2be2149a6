#include "casnet/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "casnet/errors.hpp"
#include "casnet/random.hpp"

namespace casnet {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto item = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  const auto s = trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key));
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw ConfigError("non-finite value for " + std::string(key));
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const auto s = trim(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("invalid boolean '" + std::string(text) + "' for " + std::string(key));
}

template <typename T>
void parse_into(std::string_view key, std::string_view text, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    out = parse_bool(key, text);
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = trim(text);
  } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
    out = split_list(text);
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>> || std::is_same_v<T, std::vector<int64_t>>) {
    out.clear();
    for (const auto& item : split_list(text)) out.push_back(parse_number<typename T::value_type>(key, item));
  } else {
    out = parse_number<T>(key, text);
  }
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    return format_double(v);
  } else if constexpr (std::is_arithmetic_v<T>) {
    return std::to_string(v);
  } else {
    std::string s;
    for (const auto& item : v) {
      if (!s.empty()) s += ",";
      s += format_value(item);
    }
    return s;
  }
}

struct KeyDef {
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename Accessor>
KeyDef def(Accessor acc) {
  return KeyDef{
      [acc](ExperimentConfig& c, std::string_view v) { parse_into(std::string_view{}, v, acc(c)); },
      [acc](const ExperimentConfig& c) { return format_value(acc(const_cast<ExperimentConfig&>(c))); }};
}

#define CASNET_KEY(name, expr) \
  { name, def([](ExperimentConfig & c) -> auto& { return expr; }) }

const std::map<std::string, KeyDef>& registry() {
  static const std::map<std::string, KeyDef> table = {
      CASNET_KEY("general.seed", c.seed),
      CASNET_KEY("general.image_size", c.image_size),
      CASNET_KEY("general.threads", c.threads),
      CASNET_KEY("data.x_train_per_class", c.x_train_per_class),
      CASNET_KEY("data.x_test_per_class", c.x_test_per_class),
      CASNET_KEY("data.y_unlabeled_per_class", c.y_unlabeled_per_class),
      CASNET_KEY("data.y_eval_per_class", c.y_eval_per_class),
      CASNET_KEY("deformation.lattice_min", c.deformation.lattice_min),
      CASNET_KEY("deformation.lattice_max", c.deformation.lattice_max),
      CASNET_KEY("deformation.noise_min", c.deformation.noise_min),
      CASNET_KEY("deformation.noise_max", c.deformation.noise_max),
      CASNET_KEY("deformation.lattice_amplitude", c.deformation.lattice_amplitude),
      CASNET_KEY("deformation.contour_amplitude", c.deformation.contour_amplitude),
      CASNET_KEY("cyclegan.steps", c.cyclegan.train.steps),
      CASNET_KEY("cyclegan.lr", c.cyclegan.train.lr),
      CASNET_KEY("cyclegan.batch_size", c.cyclegan.train.batch_size),
      CASNET_KEY("cyclegan.gen_updates_per_step", c.cyclegan.train.gen_updates_per_step),
      CASNET_KEY("cyclegan.beta1", c.cyclegan.train.beta1),
      CASNET_KEY("cyclegan.beta2", c.cyclegan.train.beta2),
      CASNET_KEY("cyclegan.checkpoint_every", c.cyclegan.train.checkpoint_every),
      CASNET_KEY("cyclegan.cycle_weight", c.cyclegan.cycle_weight),
      CASNET_KEY("cyclegan.residual_blocks", c.cyclegan.residual_blocks),
      CASNET_KEY("cyclegan.width_divisor", c.cyclegan.width_divisor),
      CASNET_KEY("casnet.steps", c.casnet.train.steps),
      CASNET_KEY("casnet.lr", c.casnet.train.lr),
      CASNET_KEY("casnet.batch_size", c.casnet.train.batch_size),
      CASNET_KEY("casnet.gen_updates_per_step", c.casnet.train.gen_updates_per_step),
      CASNET_KEY("casnet.beta1", c.casnet.train.beta1),
      CASNET_KEY("casnet.beta2", c.casnet.train.beta2),
      CASNET_KEY("casnet.checkpoint_every", c.casnet.train.checkpoint_every),
      CASNET_KEY("casnet.cadt", c.casnet.cadt),
      CASNET_KEY("casnet.w_adv", c.casnet.weights.adversarial),
      CASNET_KEY("casnet.w_recon", c.casnet.weights.reconstruction),
      CASNET_KEY("casnet.w_consistency", c.casnet.weights.consistency),
      CASNET_KEY("casnet.w_content", c.casnet.weights.content),
      CASNET_KEY("casnet.w_style", c.casnet.weights.style),
      CASNET_KEY("casnet.perceptual_taps", c.casnet.perceptual.taps),
      CASNET_KEY("casnet.perceptual_width_divisor", c.casnet.perceptual.width_divisor),
      CASNET_KEY("casnet.perceptual_input_size", c.casnet.perceptual.input_size),
      CASNET_KEY("casnet.perceptual_weights", c.casnet.perceptual_weights),
      CASNET_KEY("casnet.content_taps", c.casnet.content_taps),
      CASNET_KEY("casnet.style_taps", c.casnet.style_taps),
      CASNET_KEY("casnet.style_loss", c.casnet.style_loss),
      CASNET_KEY("classifier.epochs", c.classifier.train.steps),
      CASNET_KEY("classifier.lr", c.classifier.train.lr),
      CASNET_KEY("classifier.batch_size", c.classifier.train.batch_size),
      CASNET_KEY("classifier.momentum", c.classifier.train.momentum),
      CASNET_KEY("classifier.freeze_backbone", c.classifier.freeze_backbone),
      CASNET_KEY("classifier.width_divisor", c.classifier.net.width_divisor),
      CASNET_KEY("classifier.input_size", c.classifier.net.input_size),
      CASNET_KEY("classifier.dropout", c.classifier.net.dropout),
      CASNET_KEY("classifier.hidden", c.classifier.net.hidden),
      CASNET_KEY("classifier.pretrained_weights", c.classifier.pretrained_weights),
      CASNET_KEY("convert.batch", c.convert_batch),
      CASNET_KEY("evaluate.threshold", c.threshold),
      CASNET_KEY("report.pca_mode", c.pca_mode),
      CASNET_KEY("report.pca_k", c.pca_k),
      CASNET_KEY("pipeline.run_cyclegan", c.run_cyclegan),
      CASNET_KEY("pipeline.cyclegan_samples", c.cyclegan_samples),
  };
  return table;
}

#undef CASNET_KEY

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (steps < 1) throw ConfigError("steps/epochs must be >= 1");
  if (gen_updates_per_step < 1) throw ConfigError("gen_updates_per_step must be >= 1");
  if (image_size < 32) throw ConfigError("image_size must be >= 32");
}

ExperimentConfig ExperimentConfig::from_preset(std::string_view name) {
  ExperimentConfig c;
  c.preset = std::string(name);
  if (name == "desk") {
    c.casnet.train.steps = 500;
    c.casnet.perceptual.width_divisor = 4;
    c.classifier.net.width_divisor = 4;
    c.classifier.net.input_size = 0;
    c.classifier.train.steps = 60;
    c.cyclegan.train.batch_size = 4;
    c.cyclegan.width_divisor = 4;
  } else if (name == "paper") {
    c.image_size = 512;
    c.x_train_per_class = 3000;
    c.x_test_per_class = 300;
    c.casnet.train.steps = 2000;
    c.classifier.net.input_size = 224;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk or paper)");
  }
  c.propagate();
  return c;
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  const auto& table = registry();
  const auto it = table.find(std::string(key));
  if (it == table.end()) throw ConfigError("unknown config key: " + std::string(key));
  try {
    it->second.set(*this, value);
  } catch (const ConfigError&) {
    throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key));
  }
  propagate();
}

std::string ExperimentConfig::get(std::string_view key) const {
  const auto& table = registry();
  const auto it = table.find(std::string(key));
  if (it == table.end()) throw ConfigError("unknown config key: " + std::string(key));
  return it->second.get(*this);
}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [k, _] : registry()) v.push_back(k);
    return v;
  }();
  return names;
}

std::string ExperimentConfig::canonical_text() const {
  std::string s = "preset=" + preset + "\n";
  for (const auto& [k, d] : registry()) s += k + "=" + d.get(*this) + "\n";
  return s;
}

std::string ExperimentConfig::hash() const { return hex64(hash_string(canonical_text())); }

std::string ExperimentConfig::hash_of(const std::vector<std::string>& prefixes) const {
  std::string s;
  for (const auto& [k, d] : registry()) {
    for (const auto& p : prefixes) {
      if (k.rfind(p, 0) == 0) {
        s += k + "=" + d.get(*this) + "\n";
        break;
      }
    }
  }
  return hex64(hash_string(s));
}

void ExperimentConfig::propagate() {
  cyclegan.train.seed = derive_seed(seed, hash_string("cyclegan"));
  casnet.train.seed = derive_seed(seed, hash_string("casnet"));
  classifier.train.seed = derive_seed(seed, hash_string("classifier"));
  cyclegan.train.image_size = image_size;
  casnet.train.image_size = image_size;
  classifier.train.image_size = image_size;
  cyclegan.train.optimizer = OptimizerKind::Adam;
  casnet.train.optimizer = OptimizerKind::Adam;
  classifier.train.optimizer = OptimizerKind::Sgd;
}

ExperimentConfig load_config(const std::filesystem::path& file, std::string_view preset) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(file.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    if (!std::filesystem::exists(file)) throw MissingArtifactError("config file not found: " + file.string());
    throw ConfigError("cannot parse config " + file.string() + ": " + e.what());
  }
  auto cfg = ExperimentConfig::from_preset(preset);
  std::vector<std::string> unknown;
  std::vector<std::pair<std::string, std::string>> settings;
  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      settings.emplace_back("general." + section, node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) settings.emplace_back(section + "." + key, leaf.data());
  }
  const auto& known = ExperimentConfig::keys();
  for (const auto& [k, v] : settings)
    if (!std::binary_search(known.begin(), known.end(), k)) unknown.push_back(k);
  if (!unknown.empty()) {
    std::string msg = "unknown config keys in " + file.string() + ":";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  for (const auto& [k, v] : settings) cfg.set(k, v);
  return cfg;
}

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  std::vector<std::string> unknown;
  const auto& known = ExperimentConfig::keys();
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + o);
    const auto key = trim(std::string_view(o).substr(0, eq));
    if (!std::binary_search(known.begin(), known.end(), key)) unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    cfg.set(trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
}

}  // namespace casnet
