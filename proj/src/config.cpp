#include "sclab/config.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

namespace sclab::cfg {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KvConfig KvConfig::parse_string(const std::string& text) {
  KvConfig c;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(lineno) +
                       ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ParseError("config line " + std::to_string(lineno) + ": empty key");
    if (c.values_.count(key))
      throw ParseError("config line " + std::to_string(lineno) +
                       ": duplicate key '" + key + "'");
    c.values_[key] = value;
  }
  return c;
}

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str());
}

bool KvConfig::has(const std::string& key) const {
  accessed_.insert(key);
  return values_.count(key) > 0;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

std::string KvConfig::raw(const std::string& key) const {
  accessed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? std::string() : it->second;
}

std::string KvConfig::get_string(const std::string& key,
                                 const std::string& def) const {
  accessed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? def : it->second;
}

std::string KvConfig::require_string(const std::string& key) const {
  accessed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) throw ParseError("config: missing key '" + key + "'");
  return it->second;
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t def) const {
  const std::string v = raw(key);
  if (v.empty()) return def;
  try {
    std::size_t pos = 0;
    const std::int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ParseError("config: key '" + key + "' is not an integer: '" + v + "'");
  }
}

std::uint64_t KvConfig::get_uint(const std::string& key, std::uint64_t def) const {
  const std::int64_t v = get_int(key, static_cast<std::int64_t>(def));
  if (v < 0) throw ParseError("config: key '" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(v);
}

double KvConfig::get_double(const std::string& key, double def) const {
  const std::string v = raw(key);
  if (v.empty()) return def;
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ParseError("config: key '" + key + "' is not a number: '" + v + "'");
  }
}

bool KvConfig::get_bool(const std::string& key, bool def) const {
  const std::string v = raw(key);
  if (v.empty()) return def;
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ParseError("config: key '" + key + "' is not a boolean: '" + v + "'");
}

void KvConfig::reject_unknown() const {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : values_)
    if (!accessed_.count(key)) unknown.push_back(key);
  if (!unknown.empty()) {
    std::string msg = "config: unknown key(s):";
    for (const auto& k : unknown) msg += " '" + k + "'";
    throw ParseError(msg);
  }
}

std::string KvConfig::echo() const {
  std::string out;
  for (const auto& [key, value] : values_)
    out += key + " = " + value + "\n";
  return out;
}

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot hash missing file: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
    h = fnv1a(std::string_view(buf, static_cast<std::size_t>(f.gcount())), h);
  return h;
}

void write_manifest(const std::string& path, const RunManifest& m) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write manifest: " + path);
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(m.input_hash));
  f << "command: " << m.command << "\n";
  f << "seed: " << m.seed << "\n";
  f << "input_hash: " << hex << "\n";
  f << "started_at: " << m.started_at << "\n";
  f << "finished_at: " << m.finished_at << "\n";
  for (const auto& a : m.artifacts) f << "artifact: " << a << "\n";
  f << "config:\n";
  std::stringstream ss(m.config_echo);
  std::string line;
  while (std::getline(ss, line)) f << "  " << line << "\n";
}

}  // namespace sclab::cfg
