#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace neurocap {

inline constexpr const char* kRunManifestName = "run_manifest.json";
inline constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;  // subcommand arguments, without the program name
  std::string config_json;        // fully resolved config
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> backends;
  std::map<std::string, std::string> inputs;
  std::string working_directory;  // relative paths in argv resolve against this
  std::string output;  // directory or file the command wrote
  std::string started_at;
  std::string finished_at;
  std::map<std::string, std::string> artifacts;  // path relative to the output directory -> crc32 hex
  std::string tool_version = kToolVersion;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

// ISO-8601 UTC, second resolution.
std::string utc_timestamp();

// crc32 of every regular file under dir (recursively), keyed by relative
// path with '/' separators; run manifests are skipped.
std::map<std::string, std::string> collect_artifacts(const std::filesystem::path& dir);

// Writes <dir>/run_manifest.json atomically and returns its path.
std::filesystem::path write_run_manifest(const RunManifest& manifest, const std::filesystem::path& dir);
RunManifest read_run_manifest(const std::filesystem::path& path);

}  // namespace neurocap
