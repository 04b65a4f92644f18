#pragma once

// Flat key=value configuration. '#' starts a comment; blank lines are ignored;
// unknown keys and malformed values are configuration errors.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vmloc/model.hpp"
#include "vmloc/optim.hpp"

namespace vmloc {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 5e-5;
  double weight_decay = 5e-5;
  double beta0 = -3.0;
  double gamma0 = 0.0;
  std::size_t k = 10;
  double lambda = 0.1;
  Estimator estimator = Estimator::dreg;
  std::uint64_t seed = 0;
  ModalityDropoutPolicy modality_dropout;
  double dropout = 0.5;
  Variant variant = Variant::full;
  std::size_t latent_dim = 64;
  std::vector<std::size_t> encoder_widths{64, 64};
  std::size_t regressor_hidden = 32;
  AttentionConfig attention;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (k == 0) throw ConfigError("k must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (latent_dim == 0 || regressor_hidden == 0) throw ConfigError("network widths must be >= 1");
    for (auto w : encoder_widths)
      if (w == 0) throw ConfigError("encoder_widths entries must be >= 1");
    modality_dropout.validate();
    if (attention.enabled) {
      const std::size_t d = variant == Variant::attention_concat ? 2 * latent_dim : latent_dim;
      const std::size_t s = attention.effective_positions();
      if (s == 0 || d % s != 0)
        throw ConfigError("attention.positions=" + std::to_string(s) + " does not divide latent dim " +
                          std::to_string(d));
    }
  }

  ModelConfig model_config(std::size_t input_dim1, std::size_t input_dim2) const {
    ModelConfig m;
    m.input_dim1 = input_dim1;
    m.input_dim2 = input_dim2;
    m.latent_dim = latent_dim;
    m.encoder_widths = encoder_widths;
    m.regressor_hidden = regressor_hidden;
    m.dropout = dropout;
    m.attention = attention;
    m.variant = variant;
    m.objective = {k, lambda, estimator};
    m.balance = {beta0, gamma0};
    m.seed = seed;
    return m;
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.lr = learning_rate;
    a.weight_decay = weight_decay;
    return a;
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("invalid value '" + v + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean '" + v + "' for " + key + " (expected true or false)");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <class T>
Field number(const std::string& key, T& ref) {
  return {[&ref, key](const std::string& v) { ref = parse_number<T>(key, v); },
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) return fmt(ref);
            else return std::to_string(ref);
          }};
}

inline Field boolean(const std::string& key, bool& ref) {
  return {[&ref, key](const std::string& v) { ref = parse_bool(key, v); }, [&ref] { return std::string(ref ? "true" : "false"); }};
}

// Ordered key table over a TrainConfig.
inline std::vector<std::pair<std::string, Field>> train_fields(TrainConfig& c) {
  std::vector<std::pair<std::string, Field>> f;
  f.emplace_back("epochs", number("epochs", c.epochs));
  f.emplace_back("batch_size", number("batch_size", c.batch_size));
  f.emplace_back("learning_rate", number("learning_rate", c.learning_rate));
  f.emplace_back("weight_decay", number("weight_decay", c.weight_decay));
  f.emplace_back("beta0", number("beta0", c.beta0));
  f.emplace_back("gamma0", number("gamma0", c.gamma0));
  f.emplace_back("k", number("k", c.k));
  f.emplace_back("lambda", number("lambda", c.lambda));
  f.emplace_back("estimator", Field{[&c](const std::string& v) { c.estimator = estimator_from_string(v); },
                                    [&c] { return to_string(c.estimator); }});
  f.emplace_back("seed", number("seed", c.seed));
  f.emplace_back("modality_dropout.p1", number("modality_dropout.p1", c.modality_dropout.p_both));
  f.emplace_back("modality_dropout.p2", number("modality_dropout.p2", c.modality_dropout.p_first));
  f.emplace_back("modality_dropout.p3", number("modality_dropout.p3", c.modality_dropout.p_second));
  f.emplace_back("dropout", number("dropout", c.dropout));
  f.emplace_back("variant", Field{[&c](const std::string& v) { c.variant = variant_from_string(v); },
                                  [&c] { return to_string(c.variant); }});
  f.emplace_back("latent_dim", number("latent_dim", c.latent_dim));
  f.emplace_back("encoder_widths", Field{[&c](const std::string& v) { c.encoder_widths = parse_list("encoder_widths", v); },
                                         [&c] { return join(c.encoder_widths); }});
  f.emplace_back("regressor_hidden", number("regressor_hidden", c.regressor_hidden));
  f.emplace_back("attention.enabled", boolean("attention.enabled", c.attention.enabled));
  f.emplace_back("attention.positions", number("attention.positions", c.attention.positions));
  f.emplace_back("attention.embed_dim", number("attention.embed_dim", c.attention.embed_dim));
  f.emplace_back("attention.literal_scalar", boolean("attention.literal_scalar", c.attention.literal_scalar));
  return f;
}

inline std::vector<std::pair<std::string, std::string>> parse_lines(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

}  // namespace config_detail

inline TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  auto fields = config_detail::train_fields(c);
  std::map<std::string, config_detail::Field*> by_key;
  for (auto& [k, f] : fields) by_key[k] = &f;
  std::map<std::string, bool> seen;
  for (const auto& [key, value] : config_detail::parse_lines(text)) {
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError("unknown config key '" + key + "'");
    if (seen[key]) throw ConfigError("duplicate config key '" + key + "'");
    seen[key] = true;
    it->second->set(value);
  }
  c.validate();
  return c;
}

inline std::string to_text(const TrainConfig& cfg) {
  TrainConfig c = cfg;
  std::string out;
  for (auto& [k, f] : config_detail::train_fields(c)) out += k + "=" + f.get() + "\n";
  return out;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

// Model configs round-trip through the same table plus the input dimensions.
inline std::string to_text(const ModelConfig& m) {
  TrainConfig c;
  c.latent_dim = m.latent_dim;
  c.encoder_widths = m.encoder_widths;
  c.regressor_hidden = m.regressor_hidden;
  c.dropout = m.dropout;
  c.attention = m.attention;
  c.variant = m.variant;
  c.k = m.objective.k;
  c.lambda = m.objective.lambda;
  c.estimator = m.objective.estimator;
  c.beta0 = m.balance.beta;
  c.gamma0 = m.balance.gamma;
  c.seed = m.seed;
  return "input_dim1=" + std::to_string(m.input_dim1) + "\ninput_dim2=" + std::to_string(m.input_dim2) + "\n" +
         to_text(c);
}

inline ModelConfig parse_model_config(const std::string& text) {
  std::size_t d1 = 0, d2 = 0;
  std::string rest;
  for (const auto& [k, v] : config_detail::parse_lines(text)) {
    if (k == "input_dim1") d1 = config_detail::parse_number<std::size_t>(k, v);
    else if (k == "input_dim2") d2 = config_detail::parse_number<std::size_t>(k, v);
    else rest += k + "=" + v + "\n";
  }
  if (d1 == 0 || d2 == 0) throw ConfigError("model config lacks input dimensions");
  return parse_train_config(rest).model_config(d1, d2);
}

}  // namespace vmloc
