#pragma once

#include "neurocap/embedding.hpp"
#include "neurocap/fusion.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace neurocap {

// Lowercase noun lemmas.
using ObjectSet = std::set<std::string>;
using Stoplist = std::set<std::string>;

// {image, photo, picture, view, scene, background, foreground}
Stoplist default_stoplist();
// One lemma per line; blank lines and lines starting with '#' are ignored.
Stoplist load_stoplist(const std::filesystem::path& path);

// Plural to singular, applied until the word stops changing.
std::string lemmatize(std::string_view word);

class NounExtractor {
 public:
  virtual ~NounExtractor() = default;
  virtual std::string id() const = 0;
  // Lowercase noun lemmas in order of appearance.
  virtual std::vector<std::string> nouns(std::string_view text) const = 0;
};

// Context-free lexicon tagger. A word is dropped when it is a function word,
// a listed adjective or verb, ends in -ly, or ends in -ing/-ed without being a
// listed noun; every other word counts as a noun.
class LexiconNounExtractor : public NounExtractor {
 public:
  std::string id() const override { return "lexicon"; }
  std::vector<std::string> nouns(std::string_view text) const override;
  static bool is_noun_lemma(std::string_view lemma);
};

ObjectSet extract_objects(std::string_view text, const Stoplist& stoplist, const NounExtractor& extractor);
ObjectSet extract_objects(std::string_view text, const Stoplist& stoplist = default_stoplist());

// |A n B| / |A u B|; two empty sets score 1.
double jaccard(const ObjectSet& a, const ObjectSet& b);

// Cosine between embed_text(text) and the image embedding. A zero-norm text
// embedding is a BackendError; a zero image embedding is a DataError.
double text_image_reward(EmbeddingBackend& backend, std::string_view text, const EmbeddingVector& image_embedding);

// Renders the decoded text through the adapter (low fidelity by default),
// embeds the result and compares it with the ground-truth image embedding.
double image_image_reward(ReconstructionAdapter& reconstructor, EmbeddingBackend& backend,
                          std::string_view decoded_text, const EmbeddingVector& ground_truth_image_embedding,
                          const ReconstructionSettings& settings = {"low", 64, 0},
                          const std::string& low_level_latent = {});

struct RewardFactors {
  double alpha = 0.01;  // object accuracy
  double beta = 0.01;   // text-image
  double gamma = 0.01;  // image-image

  void validate() const;
};

struct RewardBreakdown {
  double object_accuracy = 0.0;
  double text_image = 0.0;
  double image_image = 0.0;
  bool image_image_available = true;
  RewardFactors factors;
  // alpha * object_accuracy + beta * text_image + gamma * image_image. The
  // trainer keeps the three terms separate; this is for logging only.
  double composite = 0.0;
};

RewardBreakdown composite_reward(double object_accuracy, double text_image, double image_image,
                                 const RewardFactors& factors, bool image_image_available = true);

struct RewardRequest {
  std::string subject_id;
  std::string stimulus_id;
  std::string reference_text;  // the enhanced caption
  std::string sampled_text;    // decoded text up to the end token
  std::vector<int> sampled_tokens;
  bool want_image_image = true;
};

struct RawRewards {
  double object_accuracy = 0.0;
  double text_image = 0.0;
  std::optional<double> image_image;  // absent when not requested
};

// What the stage-2 trainer scores its samples with.
class RewardSource {
 public:
  virtual ~RewardSource() = default;
  virtual std::string id() const = 0;
  virtual RawRewards score(const RewardRequest& request) = 0;
  virtual bool concurrency_safe() const { return false; }
};

// Object accuracy against the reference caption, text-image cosine against the
// stimulus image, and image-image cosine through a reconstruction adapter.
// Ground-truth image embeddings are computed once per stimulus and cached.
class TripleRewardSource : public RewardSource {
 public:
  TripleRewardSource(const DatasetManifest& manifest, std::shared_ptr<EmbeddingBackend> embedder,
                     std::shared_ptr<ReconstructionAdapter> reconstructor,
                     std::shared_ptr<NounExtractor> extractor = nullptr, Stoplist stoplist = default_stoplist(),
                     ReconstructionSettings settings = {"low", 64, 0});

  std::string id() const override;
  RawRewards score(const RewardRequest& request) override;

 private:
  const EmbeddingVector& image_embedding(const std::string& stimulus_id);

  const DatasetManifest& manifest_;
  std::shared_ptr<EmbeddingBackend> embedder_;
  std::shared_ptr<ReconstructionAdapter> reconstructor_;
  std::shared_ptr<NounExtractor> extractor_;
  Stoplist stoplist_;
  ReconstructionSettings settings_;
  std::map<std::string, EmbeddingVector> image_cache_;
  std::mutex mutex_;
};

struct RewardTraceRecord {
  int epoch = 0;
  long batch = 0;
  std::string subject_id;
  std::string stimulus_id;
  RewardBreakdown rewards;
};
std::string reward_trace_to_json(const RewardTraceRecord& r);

}  // namespace neurocap
