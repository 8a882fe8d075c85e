#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sclab/common.hpp"

namespace sclab::cfg {

// Flat `key = value` configuration with typed access and unknown-key
// rejection; a typo in an ablation grid fails loudly instead of silently
// using a default.
class KvConfig {
 public:
  KvConfig() = default;
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_string(const std::string& text);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key, const std::string& def) const;
  std::string require_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t def) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;

  // Throws ParseError naming any key that was never read.
  void reject_unknown() const;

  // Deterministic `key = value` dump, sorted by key.
  std::string echo() const;
  std::uint64_t content_hash() const { return fnv1a(echo()); }

 private:
  std::string raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> accessed_;
};

// Run metadata written next to every command's artifacts. Timestamps are
// recorded but never participate in content hashes, so reruns of identical
// inputs hash identically.
struct RunManifest {
  std::string command;
  std::string config_echo;
  std::uint64_t seed = 0;
  std::uint64_t input_hash = 0;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> artifacts;
};

void write_manifest(const std::string& path, const RunManifest& m);
std::string now_iso8601();
std::uint64_t hash_file(const std::string& path);

}  // namespace sclab::cfg
