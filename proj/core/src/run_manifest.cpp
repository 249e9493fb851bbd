#include "neurocap/run_manifest.hpp"

#include "neurocap/checkpoint.hpp"
#include "neurocap/error.hpp"
#include "neurocap/text_util.hpp"

#include <json.hpp>

#include <chrono>
#include <ctime>

namespace neurocap {

using json = nlohmann::ordered_json;

std::string RunManifest::to_json() const {
  json j;
  j["tool_version"] = tool_version;
  j["command"] = command;
  j["argv"] = argv;
  j["config"] = config_json.empty() ? json::object() : json::parse(config_json);
  j["seeds"] = seeds;
  j["backends"] = backends;
  j["inputs"] = inputs;
  j["working_directory"] = working_directory;
  j["output"] = output;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  j["artifacts"] = artifacts;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  RunManifest m;
  try {
    const json j = json::parse(text);
    m.tool_version = j.at("tool_version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config_json = j.at("config").dump();
    m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
    m.backends = j.at("backends").get<std::map<std::string, std::string>>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.working_directory = j.at("working_directory").get<std::string>();
    m.output = j.at("output").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::map<std::string, std::string> collect_artifacts(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == kRunManifestName) continue;
    out[std::filesystem::relative(entry.path(), dir).generic_string()] = file_crc32_hex(entry.path());
  }
  return out;
}

std::filesystem::path write_run_manifest(const RunManifest& manifest, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / kRunManifestName;
  write_text_file_atomic(path, manifest.to_json());
  return path;
}

RunManifest read_run_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("run manifest not found: " + path.string());
  return RunManifest::from_json(read_text_file(path));
}

}  // namespace neurocap
