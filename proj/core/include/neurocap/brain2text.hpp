#pragma once

#include "neurocap/autograd.hpp"
#include "neurocap/checkpoint.hpp"
#include "neurocap/dataset.hpp"
#include "neurocap/language_model.hpp"
#include "neurocap/nn.hpp"
#include "neurocap/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace neurocap {

struct ModelConfig {
  int prefix_length = 10;  // l
  int embed_dim = 64;      // d, the language model's embedding width
  int heads = 8;
  int layers = 32;
  int max_text_length = 77;
  int mlp_ratio = 4;
  bool per_subject_constant = false;  // one learnable constant per subject instead of a shared one
  bool freeze_lm = false;
  std::string lm_backend = "mock-gpt";
  int lm_layers = 1;
  int lm_heads = 2;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// The (2l x d) matrix that conditions the language model.
class PrefixEmbedding {
 public:
  PrefixEmbedding() = default;
  explicit PrefixEmbedding(ag::Matrix values);

  const ag::Matrix& values() const { return values_; }
  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }

 private:
  ag::Matrix values_;
};

struct TokenSequence {
  std::vector<TokenId> tokens;   // includes the end token when generation stopped on it
  std::string text;              // decoded text, end token excluded
  std::vector<double> log_probs; // per token, under the sampling distribution (sample mode)
  std::vector<Eigen::VectorXd> step_log_distributions;  // optional full per-step log-distributions
};

struct GreedyDecoding {};
struct SampleDecoding {
  double temperature = 1.0;
  std::uint64_t seed = 0;
};
struct BeamDecoding {
  int width = 4;
};
using DecodeStrategy = std::variant<GreedyDecoding, SampleDecoding, BeamDecoding>;

struct DecodeOptions {
  int max_length = 77;
  bool record_distributions = false;
};

// Autoregressive generation until the end token or max_length tokens.
// Beam search ranks finished and unfinished hypotheses by summed log-probability.
TokenSequence decode_text(LanguageModelBackend& backend, const PrefixEmbedding& prefix,
                          const DecodeStrategy& strategy, const DecodeOptions& options = {});

std::unique_ptr<LanguageModelBackend> make_language_model(const ModelConfig& config, Tokenizer tokenizer);

// Per-subject linear adapters -> Z (l x d); concatenated with the learnable
// constant Z' (l x d) as [Z; Z'], plus learned positions; mixed by a
// bidirectional transformer into the 2l x d prefix.
class BrainToTextModel {
 public:
  BrainToTextModel(ModelConfig config, std::unique_ptr<LanguageModelBackend> lm);
  BrainToTextModel(ModelConfig config, Tokenizer tokenizer);

  BrainToTextModel(const BrainToTextModel&) = delete;
  BrainToTextModel& operator=(const BrainToTextModel&) = delete;
  BrainToTextModel(BrainToTextModel&&) = default;
  BrainToTextModel& operator=(BrainToTextModel&&) = default;

  const ModelConfig& config() const { return config_; }
  LanguageModelBackend& language_model() { return *lm_; }
  const LanguageModelBackend& language_model() const { return *lm_; }
  const Tokenizer& tokenizer() const { return lm_->tokenizer(); }

  void register_subject(const SubjectConfig& subject);
  bool has_subject(const std::string& id) const { return adapters_.count(id) != 0; }
  const std::vector<SubjectConfig>& subjects() const { return subjects_; }

  ag::Var encode(const std::string& subject_id, std::span<const float> voxels) const;
  PrefixEmbedding encode_fmri(const std::string& subject_id, std::span<const float> voxels) const;

  // Every parameter, including the language model's.
  nn::ParameterList parameters();
  // Parameters the optimizer updates (honors freeze_lm and frozen adapters).
  nn::ParameterList trainable_parameters(bool freeze_adapters = false);

  Checkpoint to_checkpoint();
  static BrainToTextModel from_checkpoint(const Checkpoint& ckpt);
  void save_checkpoint(const std::filesystem::path& path);
  static BrainToTextModel load_checkpoint(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  std::unique_ptr<LanguageModelBackend> lm_;
  std::vector<SubjectConfig> subjects_;
  std::map<std::string, nn::Linear> adapters_;
  ag::Parameter shared_constant_;
  std::map<std::string, ag::Parameter> subject_constants_;
  ag::Parameter positions_;
  std::vector<nn::TransformerBlock> mapper_;
};

// One decoded test sample; the decode command writes these as JSON lines.
struct DecodingRecord {
  std::string subject_id;
  std::string stimulus_id;
  std::string text;
  std::string checkpoint_id;
};

void write_decodings(const std::vector<DecodingRecord>& records, const std::filesystem::path& path);
std::vector<DecodingRecord> read_decodings(const std::filesystem::path& path);

// Greedy (or the given strategy) decode of every trial-averaged test sample of one subject.
std::vector<DecodingRecord> decode_test_set(BrainToTextModel& model, std::span<const FmriSample> test_samples,
                                           const std::string& subject_id, const DecodeStrategy& strategy,
                                           const std::string& checkpoint_id);

}  // namespace neurocap
