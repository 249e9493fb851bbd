#pragma once

#include "neurocap/brain2text.hpp"
#include "neurocap/evaluation.hpp"
#include "neurocap/fusion.hpp"
#include "neurocap/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace neurocap {

struct CaptionSettings {
  std::string backend = "echo";
  std::string prompt;  // empty: the built-in prompt
  int max_tokens = 77;
  int parallelism = 1;
  int max_attempts = 3;
  int initial_backoff_ms = 200;
};

struct RewardSettings {
  std::string stoplist;  // file path; empty: built-in list
  int embedding_dim = 64;
  std::uint64_t embedding_seed = 0;
  int reconstruction_size = 64;
};

struct DecodeSettings {
  std::string strategy = "greedy";  // greedy | sample | beam
  double temperature = 1.0;
  int beam_width = 4;
  std::uint64_t seed = 0;

  DecodeStrategy to_strategy() const;
};

struct ReconstructionConfig {
  std::string adapter = "mock-recon";
  int size = 64;
  std::uint64_t seed = 0;
};

// One pipeline config shared by every subcommand. JSON with a schema_version
// and one section per stage:
//   model, train (shared keys plus stage1 / stage2 overrides), captions,
//   rewards, decode, fusion, reconstruction, evaluation
// Missing keys take their defaults; unknown keys are rejected by full path.
class PipelineConfig {
 public:
  static constexpr int kSchemaVersion = 1;

  static PipelineConfig defaults();
  static PipelineConfig parse(const std::string& text, const std::string& source = "<config>");
  static PipelineConfig load(const std::filesystem::path& path);

  // Dotted key ("train.alpha", "train.stage2.epochs"); value is parsed as JSON
  // when possible, otherwise taken as a string.
  void set(const std::string& key, const std::string& value);

  ModelConfig model() const;
  TrainConfig train(int stage) const;
  CaptionSettings captions() const;
  RewardSettings rewards() const;
  DecodeSettings decode() const;
  FusionConfig fusion() const;
  ReconstructionConfig reconstruction() const;
  EvalConfig evaluation() const;
  std::uint64_t extractor_seed() const;

  // Fully resolved config, every key present.
  std::string to_json() const;

 private:
  void validate() const;
  std::string resolved_;
};

// Every dotted key the config accepts, for help text.
std::vector<std::string> config_keys();

}  // namespace neurocap
