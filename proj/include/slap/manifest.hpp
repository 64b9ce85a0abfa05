#pragma once

// Run manifests: enough information to re-execute a command and check that it
// reproduces the recorded outputs byte for byte.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "slap/errors.hpp"
#include "slap/io.hpp"
#include "slap/rng.hpp"

namespace slap {

inline constexpr const char* kToolName = "slap";
inline constexpr const char* kToolVersion = "1.0.0";

struct FileDigest {
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string tool = kToolName;
  std::string version = kToolVersion;
  std::string rng = kRngName;
  std::string command;
  /// Fully resolved arguments; replaying them needs no config file or
  /// environment.
  std::vector<std::string> args;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  nlohmann::json environment = nlohmann::json::object();
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
  double wall_seconds = 0.0;

  void add_input(const std::filesystem::path& p) {
    inputs.push_back({p.string(), io::sha256_file(p)});
  }
  void add_output(const std::filesystem::path& p, std::string_view content) {
    outputs.push_back({p.string(), io::sha256_hex(content)});
  }
};

inline nlohmann::json to_json(const RunManifest& m) {
  auto digests = [](const std::vector<FileDigest>& ds) {
    auto a = nlohmann::json::array();
    for (const auto& d : ds) a.push_back({{"path", d.path}, {"sha256", d.sha256}});
    return a;
  };
  return {{"tool", m.tool},
          {"version", m.version},
          {"rng", m.rng},
          {"command", m.command},
          {"args", m.args},
          {"config", m.config},
          {"seeds", m.seeds},
          {"environment", m.environment},
          {"inputs", digests(m.inputs)},
          {"outputs", digests(m.outputs)},
          {"timings", {{"wall_seconds", m.wall_seconds}}}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.tool = j.at("tool").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.rng = j.at("rng").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.args = j.at("args").get<std::vector<std::string>>();
    m.config = j.at("config");
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.environment = j.value("environment", nlohmann::json::object());
    for (const auto& d : j.at("inputs"))
      m.inputs.push_back({d.at("path").get<std::string>(), d.at("sha256").get<std::string>()});
    for (const auto& d : j.at("outputs"))
      m.outputs.push_back({d.at("path").get<std::string>(), d.at("sha256").get<std::string>()});
    m.wall_seconds = j.at("timings").value("wall_seconds", 0.0);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace slap
