#pragma once

// Flat "section.key = value" configuration with INI-style files:
//
//   [model]
//   preset = S
//   hidden = 64
//
// Used for dataset manifests, training plans and the CLI run config.

#include "urbandit/types.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace urbandit {

class Config {
 public:
  static Config load(const std::filesystem::path& path);
  static Config parse(const std::string& text);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> find(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key) const;
  long get_int(const std::string& key, long fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;  // comma separated

  /// Overrides every known key from environment variables named
  /// PREFIX_SECTION_KEY (upper-cased, '.' -> '_').
  void apply_env(const std::string& prefix, const std::vector<std::string>& known_keys);

  /// Throws on any key not in `known`.
  void reject_unknown(const std::vector<std::string>& known) const;

  /// Later values win.
  void merge(const Config& other);

  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::vector<std::string> split_list(const std::string& s, char sep = ',');

}  // namespace urbandit
