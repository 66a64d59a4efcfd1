#include "fdct/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fdct/tensor.hpp"

namespace fdct {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
  Config c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValueError("config line " + std::to_string(lineno) + " is not key=value: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ValueError("config line " + std::to_string(lineno) + " has empty key");
    c.kv_[key] = value;
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) { kv_[key] = value; }

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ValueError("config key " + key + " is not a number: " + it->second);
  }
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ValueError("config key " + key + " is not an integer: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValueError("config key " + key + " is not a boolean: " + v);
}

std::string Config::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : kv_) os << k << "=" << v << "\n";
  return os.str();
}

void Config::merge(const Config& other) {
  for (const auto& [k, v] : other.kv_) kv_[k] = v;
}

}  // namespace fdct
