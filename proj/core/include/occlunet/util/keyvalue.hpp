#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace occlunet::util {

/// Ordered `key=value` text file. Lines starting with '#' and blank lines are
/// ignored when reading; keys are written in sorted order.
class KeyValue {
 public:
  static KeyValue read(const std::filesystem::path& path);
  static KeyValue parse(const std::string& text);
  void write(const std::filesystem::path& path) const;
  std::string str() const;

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value) { entries_[key] = std::to_string(value); }
  void set(const std::string& key, int value) { entries_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { entries_[key] = value ? "true" : "false"; }

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> find(const std::string& key) const;
  /// Throws ConfigError when the key is missing.
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

/// Shortest decimal representation that round-trips a double.
std::string format_double(double v);

}  // namespace occlunet::util
