#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <atrl/tensor.hpp>

namespace atrl {

// Flat `key = value` configuration files: one pair per line, `#` comments,
// blank lines ignored. Typed getters track which keys were consumed so a
// config full of typos can be rejected wholesale.
class KVConfig {
 public:
  static KVConfig parse_string(const std::string& text,
                               const std::string& origin = "<config>") {
    KVConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string stripped = trim(line.substr(0, line.find('#')));
      if (stripped.empty()) continue;
      const std::size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw Error(origin + ":" + std::to_string(lineno) +
                    ": expected key = value");
      const std::string key = trim(stripped.substr(0, eq));
      const std::string value = trim(stripped.substr(eq + 1));
      if (key.empty())
        throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
      if (!cfg.values_.emplace(key, value).second)
        throw Error(origin + ":" + std::to_string(lineno) +
                    ": duplicate key '" + key + "'");
    }
    return cfg;
  }

  static KVConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw Error(origin_ + ": key '" + key + "': bad number '" + it->second + "'");
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    std::int64_t v = 0;
    const char* b = it->second.data();
    const char* e = b + it->second.size();
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e)
      throw Error(origin_ + ": key '" + key + "': bad integer '" + it->second + "'");
    return v;
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0)
      throw Error(origin_ + ": key '" + key + "': must be nonnegative");
    return static_cast<std::size_t>(v);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    consumed_.insert(key);
    const std::string& v = it->second;
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error(origin_ + ": key '" + key + "': bad boolean '" + v +
                "' (use true/false)");
  }

  // Call after all getters: any key never consumed is unknown.
  void reject_unknown() const {
    for (const auto& [key, value] : values_)
      if (consumed_.count(key) == 0)
        throw Error(origin_ + ": unknown key '" + key + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

  std::string origin_ = "<config>";
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

}  // namespace atrl
