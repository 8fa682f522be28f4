#pragma once

// Key-value configuration: one `key = value` per line, `#` starts a comment.
// Every lookup records the value actually used, so the resolved configuration
// (file values plus defaults) can be written beside a run's outputs.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lcsa/core.hpp"
#include "lcsa/ngsim.hpp"

namespace lcsa {

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in) {
    Config c;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto body = detail::trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw ParseError("config line " + std::to_string(number) + ": expected 'key = value'");
      const auto key = detail::trim(std::string_view(body).substr(0, eq));
      if (key.empty()) throw ParseError("config line " + std::to_string(number) + ": empty key");
      c.values_[key] = detail::trim(std::string_view(body).substr(eq + 1));
    }
    return c;
  }

  static Config parse(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open config " + path);
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    auto it = values_.find(key);
    const std::string v = it == values_.end() ? fallback : it->second;
    resolved_[key] = v;
    return v;
  }

  double get_double(const std::string& key, double fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) {
      resolved_[key] = format_double(fallback);
      return fallback;
    }
    double v = 0;
    if (!detail::parse_double(it->second, v)) throw ParseError("config " + key + ": not a number: " + it->second);
    resolved_[key] = it->second;
    return v;
  }

  int get_int(const std::string& key, int fallback) {
    const double v = get_double(key, fallback);
    if (v != static_cast<double>(static_cast<int>(v))) throw ParseError("config " + key + ": not an integer");
    return static_cast<int>(v);
  }

  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) {
      resolved_[key] = std::to_string(fallback);
      return fallback;
    }
    try {
      std::size_t used = 0;
      const auto v = std::stoull(it->second, &used);
      if (used != it->second.size()) throw ParseError("");
      resolved_[key] = it->second;
      return v;
    } catch (const std::exception&) {
      throw ParseError("config " + key + ": not an unsigned integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) {
      resolved_[key] = fallback ? "true" : "false";
      return fallback;
    }
    const auto& s = it->second;
    bool v;
    if (s == "true" || s == "1" || s == "yes" || s == "on") v = true;
    else if (s == "false" || s == "0" || s == "no" || s == "off") v = false;
    else throw ParseError("config " + key + ": not a boolean: " + s);
    resolved_[key] = v ? "true" : "false";
    return v;
  }

  /// Comma-separated list; empty entries are dropped.
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) {
    auto it = values_.find(key);
    std::vector<std::string> out;
    if (it == values_.end()) {
      out = fallback;
    } else {
      std::string item;
      std::istringstream in(it->second);
      while (std::getline(in, item, ','))
        if (auto t = detail::trim(item); !t.empty()) out.push_back(t);
    }
    std::string joined;
    for (std::size_t i = 0; i < out.size(); ++i) joined += (i ? "," : "") + out[i];
    resolved_[key] = joined;
    return out;
  }

  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) {
    std::vector<std::string> def;
    for (double d : fallback) def.push_back(format_double(d));
    std::vector<double> out;
    for (const auto& s : get_list(key, def)) {
      double v = 0;
      if (!detail::parse_double(s, v)) throw ParseError("config " + key + ": not a number: " + s);
      out.push_back(v);
    }
    return out;
  }

  /// Keys given in the file that no lookup has read.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!resolved_.count(k)) out.push_back(k);
    return out;
  }

  const std::map<std::string, std::string>& resolved() const { return resolved_; }

  void write_resolved(std::ostream& out) const {
    for (const auto& [k, v] : resolved_) out << k << " = " << v << "\n";
  }

  void write_resolved(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::ios_base::failure("cannot write " + path);
    write_resolved(out);
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> resolved_;
};

/// Deterministic child seed for a named purpose.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose, std::uint64_t index = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(master);
  for (char c : purpose) h = mix(h ^ static_cast<unsigned char>(c));
  return mix(h ^ mix(index));
}

}  // namespace lcsa
