#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "p3l/errors.hpp"

namespace p3l {

using json = nlohmann::ordered_json;

// Every key a run accepts, with its default. Values keep their JSON type so
// the resolved dump is typed.
inline const json& config_defaults() {
  static const json d = {
      {"run.name", "run"},
      {"run.out_dir", "out"},
      {"run.mode", "finite"},
      {"data.task", 1},
      {"data.noise_sigma", 0.0},
      {"data.seed", 0},
      {"data.lift", 2.0},
      {"kernel.mode", "analytic"},
      {"kernel.m1", 4096},
      {"kernel.seed", 0},
      {"kernel.rank_tol", 1e-10},
      {"model.m1", 512},
      {"model.m2", 512},
      {"model.alpha", 0.5},
      {"model.beta_a", 0.0},
      {"model.beta_b", 0.5},
      {"model.seed", 0},
      {"model.bias", true},
      {"model.sigma1", "relu"},
      {"model.sigma2", "tanh"},
      {"model.rho_a", "rademacher"},
      {"train.dt", 0.05},
      {"train.T", 200.0},
      {"train.log_every", 20},
      {"train.integrator", "euler"},
      {"train.halve_on_increase", true},
      {"mf.M", 0},
      {"mf.regime", "half"},
      {"mf.seed", 0},
      {"mf.quad_order", 32},
      {"analysis.a_hat", 1.0},
      {"analysis.delta", 0.1},
      {"analysis.xi_lo", -1.0},
      {"analysis.xi_hi", 1.0},
      {"analysis.C2", 1.0},
      {"analysis.snapshots", true},
      {"analysis.test_loss", true},
      {"sweep.widths", json::array({50, 200, 800})},
      {"sweep.kernel_m1", json::array({100, 400, 1600, 6400})},
      {"sweep.seeds", 5},
      {"sweep.t", 5.0},
      {"noise.sigmas", json::array({0.0, 0.25, 0.5})},
      {"noise.seeds", 5},
      {"noise.loss_threshold", 1e-2},
  };
  return d;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Converts a textual value to the JSON type of the key's default.
inline json coerce(const std::string& key, const std::string& text, const json& like) {
  auto fail = [&](const char* what) {
    return ConfigError(key + ": expected " + what + ", got '" + text + "'");
  };
  try {
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw fail("true|false");
    }
    if (like.is_number_integer()) {
      std::size_t pos = 0;
      const long long v = std::stoll(text, &pos);
      if (pos != text.size()) throw fail("an integer");
      return v;
    }
    if (like.is_number()) {
      std::size_t pos = 0;
      const double v = std::stod(text, &pos);
      if (pos != text.size()) throw fail("a number");
      return v;
    }
    if (like.is_array()) {
      json arr = json::array();
      std::string body = text;
      if (!body.empty() && body.front() == '[' && body.back() == ']')
        body = body.substr(1, body.size() - 2);
      std::stringstream ss(body);
      std::string item;
      const json elem = like.empty() ? json(0.0) : like.front();
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) arr.push_back(coerce(key, item, elem));
      }
      return arr;
    }
  } catch (const std::invalid_argument&) {
    throw fail("a number");
  } catch (const std::out_of_range&) {
    throw fail("a representable number");
  }
  std::string v = text;
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  return v;
}

inline void check_type(const std::string& key, const json& v, const json& like) {
  const bool ok = (like.is_boolean() && v.is_boolean()) ||
                  (like.is_number_integer() && v.is_number_integer()) ||
                  (like.is_number_float() && v.is_number()) ||
                  (like.is_string() && v.is_string()) || (like.is_array() && v.is_array());
  if (!ok) throw ConfigError(key + ": value " + v.dump() + " has the wrong type");
}

// Nested objects flatten to dotted keys.
inline void flatten(const json& j, const std::string& prefix, json& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out[key] = *it;
    }
  }
}

}  // namespace detail

// Resolved configuration: every known key present, typed as its default.
class Config {
 public:
  Config() : values_(config_defaults()) {}

  // Key = value lines; '#' starts a comment; "[section]" lines prefix the
  // following keys. Text starting with '{' is read as JSON instead.
  static Config parse(const std::string& text) {
    Config c;
    const std::string body = detail::trim(text);
    if (!body.empty() && body.front() == '{') {
      json j;
      try {
        j = json::parse(body);
      } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
      }
      json flat = json::object();
      detail::flatten(j, "", flat);
      for (auto it = flat.begin(); it != flat.end(); ++it) c.set_json(it.key(), *it);
      return c;
    }
    std::stringstream ss(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      if (line.front() == '[' && line.back() == ']') {
        section = detail::trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      std::string key = detail::trim(line.substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      c.set(key, detail::trim(line.substr(eq + 1)));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  void set(const std::string& key, const std::string& text) {
    set_json(key, detail::coerce(key, text, known(key)));
  }

  void set_json(const std::string& key, json v) {
    const json& like = known(key);
    if (like.is_number_float() && v.is_number()) v = v.get<double>();
    detail::check_type(key, v, like);
    values_[key] = std::move(v);
  }

  const json& raw(const std::string& key) const { return values_.at(known_key(key)); }
  double number(const std::string& key) const { return raw(key).get<double>(); }
  long long integer(const std::string& key) const { return raw(key).get<long long>(); }
  std::uint64_t seed(const std::string& key) const {
    const long long v = integer(key);
    if (v < 0) throw ConfigError(key + " must be >= 0");
    return static_cast<std::uint64_t>(v);
  }
  bool flag(const std::string& key) const { return raw(key).get<bool>(); }
  std::string text(const std::string& key) const { return raw(key).get<std::string>(); }
  std::vector<double> numbers(const std::string& key) const {
    return raw(key).get<std::vector<double>>();
  }
  std::vector<int> integers(const std::string& key) const {
    std::vector<int> out;
    for (const auto& v : raw(key)) {
      if (!v.is_number_integer()) throw ConfigError(key + ": expected integers");
      out.push_back(v.get<int>());
    }
    return out;
  }

  // Nested JSON in the key order of the defaults.
  json resolved() const {
    json out = json::object();
    for (auto it = values_.begin(); it != values_.end(); ++it) {
      const std::string& k = it.key();
      const auto dot = k.find('.');
      out[k.substr(0, dot)][k.substr(dot + 1)] = *it;
    }
    return out;
  }

  std::string dump() const { return resolved().dump(2); }

  // FNV-1a over the compact resolved dump, as 16 hex digits.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : resolved().dump()) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
  }

 private:
  static const std::string& known_key(const std::string& key) {
    static const std::map<std::string, std::string> names = [] {
      std::map<std::string, std::string> m;
      for (auto it = config_defaults().begin(); it != config_defaults().end(); ++it)
        m.emplace(it.key(), it.key());
      return m;
    }();
    const auto it = names.find(key);
    if (it == names.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
  }

  static const json& known(const std::string& key) { return config_defaults().at(known_key(key)); }

  json values_;
};

}  // namespace p3l
