#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "odr/core.hpp"

namespace odr {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Canonical form: keys sorted (nlohmann's object is ordered by key), no
/// whitespace. The hash is a pure function of the config content.
inline std::string config_hash(const nlohmann::json& config) {
  return hex64(fnv1a64(config.dump()));
}

struct RunManifest {
  std::string command;
  nlohmann::json config;  // full snapshot after overrides
  std::string hash;       // config_hash(config)
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;  // paths relative to the run dir
  double wall_seconds = 0.0;
  std::string version = "0.1.0";
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
  return nlohmann::json{{"command", m.command}, {"config", m.config},   {"hash", m.hash},
                        {"seed", m.seed},       {"artifacts", m.artifacts},
                        {"wall_seconds", m.wall_seconds},              {"version", m.version}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.config = j.at("config");
  m.hash = j.at("hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
  m.wall_seconds = j.at("wall_seconds").get<double>();
  m.version = j.at("version").get<std::string>();
  return m;
}

inline void save_manifest(const std::string& path, const RunManifest& m) {
  std::ofstream os(path);
  if (!os) throw ContractViolation("cannot open for write: " + path);
  os << manifest_to_json(m).dump(2) << "\n";
}

inline RunManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ContractViolation("cannot open: " + path);
  nlohmann::json j;
  is >> j;
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// Config schema validation
// ---------------------------------------------------------------------------

/// Rejects unknown keys, reporting them with field paths. `allowed` lists the
/// top-level keys valid for the config's kind.
inline void check_known_keys(const nlohmann::json& config,
                             const std::vector<std::string>& allowed,
                             const std::string& path = "") {
  if (!config.is_object()) throw ContractViolation("config: expected an object at " +
                                                   (path.empty() ? std::string("root") : path));
  for (auto it = config.begin(); it != config.end(); ++it) {
    bool known = false;
    for (const std::string& k : allowed)
      if (it.key() == k) known = true;
    if (!known)
      throw ContractViolation("config: unknown key " +
                              (path.empty() ? it.key() : path + "." + it.key()));
  }
}

template <typename T>
inline T require_field(const nlohmann::json& config, const std::string& key) {
  if (!config.contains(key)) throw ContractViolation("config: missing required key " + key);
  try {
    return config.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation("config: bad value for " + key + ": " + e.what());
  }
}

template <typename T>
inline T field_or(const nlohmann::json& config, const std::string& key, T fallback) {
  if (!config.contains(key)) return fallback;
  try {
    return config.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation("config: bad value for " + key + ": " + e.what());
  }
}

}  // namespace odr
