#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relmetric/error.hpp"
#include "relmetric/tensor.hpp"

namespace relmetric {

// Every hyperparameter of a run. Defaults are the tuned configuration used on
// the CoNLL04 development set.
struct TrainConfig {
  double learning_rate = 0.005;
  double dropout = 0.5;
  std::size_t epochs = 100;
  std::size_t channels = 15;                  // kappa: metric tables and hidden conv channels
  std::size_t layers = 8;                     // lambda: convolution layers in the pooling stack
  std::size_t char_embedding_size = 25;       // pi
  std::size_t char_representation_size = 50;  // eta
  std::size_t position_embedding_size = 25;   // gamma
  std::size_t dependency_embedding_size = 10; // beta
  std::size_t word_embedding_size = 200;      // delta
  std::size_t context_size = 200;             // rho (each LSTM direction gets rho / 2)

  std::size_t batch_size = 1;
  bool bucketed_batching = false;
  std::uint64_t seed = 1;
  std::string word_embeddings;  // optional pretrained vectors (text format)
  std::size_t conv_window = 3;
  std::size_t char_window = 3;
  bool batch_norm = true;
  double batch_norm_momentum = 0.9;
  double word_embedding_grad_scale = 1.0;  // 0.1 reproduces "downscaled" gradients, 0 freezes
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-8;
  double lr_halving_epochs = 10;  // rate halves every this many epochs; 0 disables decay
  double init_stddev = 0.1;

  void validate() const {
    auto positive = [](std::size_t v, const char* key) {
      if (v == 0) throw ConfigError(std::string("config: '") + key + "' must be positive");
    };
    if (!(learning_rate > 0)) throw ConfigError("config: 'learning_rate' must be positive");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("config: 'dropout' must lie in [0, 1)");
    positive(epochs, "epochs");
    positive(channels, "channels");
    positive(char_embedding_size, "char_embedding_size");
    positive(char_representation_size, "char_representation_size");
    positive(position_embedding_size, "position_embedding_size");
    positive(dependency_embedding_size, "dependency_embedding_size");
    positive(word_embedding_size, "word_embedding_size");
    positive(batch_size, "batch_size");
    if (layers < 2) throw ConfigError("config: 'layers' must be at least 2 (base and output convolutions)");
    if (context_size < 2 || context_size % 2 != 0) throw ConfigError("config: 'context_size' must be even and >= 2");
    if (conv_window < 3 || conv_window % 2 == 0) throw ConfigError("config: 'conv_window' must be odd and >= 3");
    if (char_window == 0) throw ConfigError("config: 'char_window' must be positive");
    if (!(batch_norm_momentum >= 0 && batch_norm_momentum < 1)) throw ConfigError("config: 'batch_norm_momentum' must lie in [0, 1)");
    if (!(rmsprop_decay >= 0 && rmsprop_decay < 1)) throw ConfigError("config: 'rmsprop_decay' must lie in [0, 1)");
    if (!(rmsprop_epsilon > 0)) throw ConfigError("config: 'rmsprop_epsilon' must be positive");
    if (!(lr_halving_epochs >= 0)) throw ConfigError("config: 'lr_halving_epochs' must be non-negative");
    if (!(word_embedding_grad_scale >= 0)) throw ConfigError("config: 'word_embedding_grad_scale' must be non-negative");
    if (!(init_stddev > 0)) throw ConfigError("config: 'init_stddev' must be positive");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

namespace detail {

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  } else {
    return std::to_string(v);
  }
}

template <typename T>
void parse_value(const std::string& key, const std::string& text, T& out) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes") out = true;
      else if (text == "false" || text == "0" || text == "no") out = false;
      else throw std::invalid_argument(text);
    } else if constexpr (std::is_same_v<T, std::string>) {
      out = text;
    } else if constexpr (std::is_floating_point_v<T>) {
      std::size_t used = 0;
      out = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
    } else {
      std::size_t used = 0;
      if (!text.empty() && text[0] == '-') throw std::invalid_argument(text);
      out = static_cast<T>(std::stoull(text, &used));
      if (used != text.size()) throw std::invalid_argument(text);
    }
  } catch (const std::exception&) {
    throw ConfigError("config: invalid value '" + text + "' for key '" + key + "'");
  }
}

struct ConfigField {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define RELMETRIC_FIELD(name)                                                                 \
  ConfigField {                                                                               \
    #name, [](const TrainConfig& c) { return format_value(c.name); },                         \
        [](TrainConfig& c, const std::string& v) { parse_value(#name, v, c.name); }           \
  }

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      RELMETRIC_FIELD(learning_rate),
      RELMETRIC_FIELD(dropout),
      RELMETRIC_FIELD(epochs),
      RELMETRIC_FIELD(channels),
      RELMETRIC_FIELD(layers),
      RELMETRIC_FIELD(char_embedding_size),
      RELMETRIC_FIELD(char_representation_size),
      RELMETRIC_FIELD(position_embedding_size),
      RELMETRIC_FIELD(dependency_embedding_size),
      RELMETRIC_FIELD(word_embedding_size),
      RELMETRIC_FIELD(context_size),
      RELMETRIC_FIELD(batch_size),
      RELMETRIC_FIELD(bucketed_batching),
      RELMETRIC_FIELD(seed),
      RELMETRIC_FIELD(word_embeddings),
      RELMETRIC_FIELD(conv_window),
      RELMETRIC_FIELD(char_window),
      RELMETRIC_FIELD(batch_norm),
      RELMETRIC_FIELD(batch_norm_momentum),
      RELMETRIC_FIELD(word_embedding_grad_scale),
      RELMETRIC_FIELD(rmsprop_decay),
      RELMETRIC_FIELD(rmsprop_epsilon),
      RELMETRIC_FIELD(lr_halving_epochs),
      RELMETRIC_FIELD(init_stddev),
  };
  return fields;
}

#undef RELMETRIC_FIELD

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : detail::config_fields()) out.push_back(f.key);
  return out;
}

inline void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields()) {
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  }
  std::string valid;
  for (const auto& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k;
  throw ConfigError("config: unknown key '" + key + "'; valid keys: " + valid);
}

inline std::string get_config_value(const TrainConfig& config, const std::string& key) {
  for (const auto& f : detail::config_fields())
    if (f.key == key) return f.get(config);
  throw ConfigError("config: unknown key '" + key + "'");
}

// Flat "key = value" text, '#' starts a comment.
inline void apply_config_text(TrainConfig& config, std::istream& in, const std::string& source = "<config>") {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    set_config_value(config, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
}

inline TrainConfig load_config_file(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  apply_config_text(base, in, path);
  return base;
}

inline std::string config_to_text(const TrainConfig& config) {
  std::ostringstream os;
  for (const auto& f : detail::config_fields()) os << f.key << " = " << f.get(config) << '\n';
  return os.str();
}

inline nlohmann::json config_to_json(const TrainConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : detail::config_fields()) j[f.key] = f.get(config);
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig config;
  for (const auto& [key, value] : j.items()) set_config_value(config, key, value.get<std::string>());
  return config;
}

}  // namespace relmetric
