#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "sfod/synth.hpp"

namespace sfod {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat `key = value` settings; `#` starts a comment, blank lines ignored.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<string>");
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool contains(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::optional<std::string> get(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;

  /// Keys not in `known` (for typo detection).
  std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const;

  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Benchmark settings from keys `source.<field>`, `target.<field>` and
/// `splits.<name>`, on top of BenchmarkSpec::defaults().
BenchmarkSpec benchmark_from_config(const Config& config);
Config benchmark_to_config(const BenchmarkSpec& spec);

}  // namespace sfod
