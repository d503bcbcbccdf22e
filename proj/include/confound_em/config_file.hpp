#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace confound_em {

/// Flat key=value configuration (a TOML-compatible subset).
///
/// One `key = value` per line; `#` starts a comment; values may be wrapped in
/// double quotes; lists are comma separated, optionally inside `[ ... ]`.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, std::string_view origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  void merge(const KeyValueConfig& other);

  const std::map<std::string, std::string>& entries() const { return entries_; }
  std::string to_string() const;

 private:
  std::map<std::string, std::string> entries_;
};

// Strict numeric parsing; throws ConfigError naming `what` on failure.
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);
std::vector<std::string> split_list(std::string_view text);
std::string trim(std::string_view text);

/// Shortest decimal string that round-trips to the same double.
std::string format_double(double value);

}  // namespace confound_em
