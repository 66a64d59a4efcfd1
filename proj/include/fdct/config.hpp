#pragma once

#include <map>
#include <string>
#include <vector>

namespace fdct {

// Plain-text key=value configuration. '#' starts a comment, blank lines are
// skipped, later assignments win.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Every key=value pair in sorted order, one per line.
  std::string serialize() const;

  void merge(const Config& other);  // other wins

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace fdct
