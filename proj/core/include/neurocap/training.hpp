#pragma once

#include "neurocap/autograd.hpp"
#include "neurocap/brain2text.hpp"
#include "neurocap/caption.hpp"
#include "neurocap/checkpoint.hpp"
#include "neurocap/dataset.hpp"
#include "neurocap/optim.hpp"
#include "neurocap/rewards.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace neurocap {

struct TrainConfig {
  int stage = 1;
  double learning_rate = 1e-4;
  int epochs = 200;
  int batch_size = 8;
  RewardFactors factors;  // alpha, beta, gamma
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global-norm; <= 0 disables
  double temperature = 1.0;
  std::string baseline = "none";  // "none" or "batch-mean"
  int samples_per_example = 1;
  int image_reward_every = 4;  // K: image-image reward refresh period in global batches
  bool freeze_adapters = false;
  bool fail_fast = false;  // reward failures abort instead of skipping the sample
  int checkpoint_every = 0;  // epochs between mid-run checkpoints; 0 disables
  int workers = 1;           // threads for sampling and scoring within a batch
  std::uint64_t seed = 0;

  // Stage 1: lr 1e-4 for 200 epochs; stage 2: lr 2e-6 for 10 epochs.
  static TrainConfig defaults_for_stage(int stage);
  void validate() const;
  AdamWConfig optimizer() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// Target ids for a caption: encoded tokens truncated to max_length - 1, then the end token.
std::vector<TokenId> caption_targets(const Tokenizer& tokenizer, std::string_view caption, int max_length);

struct SequenceNll {
  ag::Var total;  // 1x1 sum of -log p over target tokens
  std::size_t count = 0;
};

// Teacher-forced negative log-likelihood of `targets` after the prefix.
// Padding ids are excluded from both the sum and the count.
SequenceNll sequence_nll(LanguageModelBackend& backend, const ag::Var& prefix, std::span<const TokenId> targets);

// Mean NLL per target token.
ag::Var ce_loss(LanguageModelBackend& backend, const ag::Var& prefix, std::span<const TokenId> targets);
// Mean over every non-padding token in the batch.
ag::Var ce_loss_batch(LanguageModelBackend& backend, std::span<const ag::Var> prefixes,
                      std::span<const std::vector<TokenId>> padded_targets);

// (T x 1) log-probabilities of the given tokens under the tempered softmax.
ag::Var sequence_log_probs(LanguageModelBackend& backend, const ag::Var& prefix, std::span<const TokenId> tokens,
                           double temperature = 1.0);

// -(r - b) * sum_t log p(a_t | s_t). The reward is a constant; gradients flow
// through the log-probabilities only.
ag::Var reinforce_loss(const ag::Var& token_log_probs, double reward, double baseline = 0.0);
// Value form over recorded log-probabilities.
double reinforce_loss(const TokenSequence& sequence, double reward, double baseline = 0.0);

// Enhanced captions by stimulus id, from a caption store's latest records.
std::map<std::string, std::string> enhanced_captions(const std::map<std::string, CaptionRecord>& records);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double ce_loss = 0.0;
  double total_loss = 0.0;
  double object_accuracy = 0.0;
  double text_image = 0.0;
  double image_image = 0.0;
  int rewarded = 0;  // samples that received rewards
  int skipped = 0;   // samples dropped by the reward failure policy
};

struct BatchRecord {
  int epoch = 0;
  long batch = 0;  // global batch index
  double ce = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double total = 0.0;
  RewardFactors factors;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::vector<BatchRecord> batches;  // stage 2 only
  std::filesystem::path checkpoint;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  const Checkpoint* resume = nullptr;
  // Stop after this many epochs in this call (for tests that simulate an interruption).
  std::optional<int> stop_after_epochs;
};

// Cross-entropy training with the enhanced captions as targets.
TrainResult train_stage1(BrainToTextModel& model, std::span<const FmriSample> train,
                         const std::map<std::string, std::string>& captions, const TrainConfig& config,
                         const TrainOptions& options = {});

// L = L_CE + alpha L1 + beta L2 + gamma L3, each Li a REINFORCE term under reward i.
TrainResult train_stage2(BrainToTextModel& model, std::span<const FmriSample> train,
                         const std::map<std::string, std::string>& captions, RewardSource& rewards,
                         const TrainConfig& config, const TrainOptions& options = {});

std::string epoch_record_to_json(const EpochRecord& r, int stage);
std::string batch_record_to_json(const BatchRecord& r);

}  // namespace neurocap
