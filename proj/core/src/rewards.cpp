#include "neurocap/rewards.hpp"

#include "neurocap/error.hpp"
#include "neurocap/text_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <unordered_map>
#include <unordered_set>

namespace neurocap {

namespace {

using WordSet = std::unordered_set<std::string_view>;

const WordSet& closed_class() {
  static const WordSet words = {
      "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "no", "all", "both",
      "either", "neither", "few", "many", "much", "more", "most", "several", "such", "own", "other", "another",
      "and", "or", "but", "nor", "so", "yet", "for", "of", "in", "on", "at", "to", "from", "by", "with",
      "without", "within", "into", "onto", "over", "under", "above", "below", "behind", "beside", "besides",
      "between", "among", "near", "next", "through", "across", "along", "around", "about", "against", "toward",
      "towards", "up", "down", "out", "off", "upon", "inside", "outside", "beneath", "via", "i", "me", "my",
      "mine", "we", "us", "our", "you", "your", "he", "him", "his", "she", "her", "it", "its", "it's", "they",
      "them", "their", "theirs", "there", "there's", "here", "what", "which", "who", "whom", "whose", "where",
      "when", "why", "how", "is", "are", "was", "were", "be", "been", "being", "am", "do", "does", "did", "has",
      "have", "had", "having", "will", "would", "can", "could", "should", "may", "might", "must", "shall", "not",
      "very", "too", "also", "just", "only", "than", "then", "as", "if", "while", "because", "though",
      "although", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "first",
      "second", "third", "that's", "'s", "s"};
  return words;
}

const WordSet& adjectives() {
  static const WordSet words = {
      "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black", "white", "gray", "grey",
      "silver", "gold", "golden", "beige", "tan", "dark", "bright", "pale", "colorful", "colourful", "small",
      "large", "big", "little", "tiny", "huge", "giant", "tall", "short", "long", "wide", "narrow", "thin",
      "thick", "round", "rectangular", "circular", "oval", "triangular", "flat", "curved", "old", "new", "young",
      "wooden", "empty", "full", "open", "closed", "clean", "dirty", "busy", "sunny", "cloudy", "cute",
      "beautiful", "nice", "good", "great", "various", "different", "main", "same", "modern", "vintage",
      "fresh", "ripe", "wet", "dry", "hot", "cold", "warm", "soft", "hard", "smooth", "striped", "plain",
      "simple", "single", "double", "multiple", "lush", "grassy", "sandy", "snowy", "rocky", "medium", "visible",
      "key", "accurate", "clear"};
  return words;
}

const WordSet& verbs() {
  static const WordSet words = {
      "sit", "stand", "hold", "show", "look", "feature", "contain", "appear", "lie", "ride", "eat", "play",
      "walk", "run", "wear", "depict", "describe", "outline", "use", "place", "seem", "rest", "lean", "hang",
      "cover", "fill", "surround", "carry", "throw", "catch", "make", "take", "get", "go", "come", "see",
      "include", "display", "serve", "pose", "stare", "smile", "talk", "drive", "hit", "wait", "lay", "sits",
      "stands", "lies"};
  return words;
}

// Nouns that the suffix rules would otherwise reject.
const WordSet& noun_exceptions() {
  static const WordSet words = {
      "building", "ceiling", "painting", "clothing", "railing", "string", "thing", "morning", "evening",
      "awning", "sibling", "pudding", "frosting", "icing", "topping", "bedding", "spring", "wedding",
      "dressing", "stuffing", "lighting", "crossing", "parking", "family", "belly", "jelly", "lily",
      "butterfly", "dragonfly", "assembly", "rally", "hundred", "bed", "shed", "sled"};
  return words;
}

const std::unordered_map<std::string_view, std::string_view>& irregular_plurals() {
  static const std::unordered_map<std::string_view, std::string_view> words = {
      {"men", "man"},       {"women", "woman"},   {"people", "person"}, {"children", "child"},
      {"mice", "mouse"},    {"feet", "foot"},     {"teeth", "tooth"},   {"geese", "goose"},
      {"knives", "knife"},  {"leaves", "leaf"},   {"shelves", "shelf"}, {"wolves", "wolf"},
      {"halves", "half"},   {"loaves", "loaf"},   {"scarves", "scarf"}, {"calves", "calf"},
      {"lives", "life"},    {"wives", "wife"},    {"oxen", "ox"},       {"buses", "bus"},
      {"gases", "gas"},     {"lenses", "lens"},   {"tomatoes", "tomato"}, {"potatoes", "potato"},
      {"heroes", "hero"},   {"echoes", "echo"},   {"dishes", "dish"}};
  return words;
}

const WordSet& uninflected() {
  static const WordSet words = {"news",  "species", "series", "scissors", "pants", "jeans",
                                "shorts", "trousers", "clothes", "glasses", "goggles", "stairs"};
  return words;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string lemmatize_once(std::string w) {
  if (ends_with(w, "'s")) w.resize(w.size() - 2);
  while (!w.empty() && w.front() == '\'') w.erase(w.begin());
  while (!w.empty() && w.back() == '\'') w.pop_back();
  if (w.empty() || uninflected().count(w)) return w;
  if (auto it = irregular_plurals().find(w); it != irregular_plurals().end()) return std::string(it->second);
  if (w.size() > 4 && ends_with(w, "ies")) return w.substr(0, w.size() - 3) + "y";
  for (std::string_view suffix : {"ches", "shes", "xes", "sses", "zzes"}) {
    if (ends_with(w, suffix)) return w.substr(0, w.size() - 2);
  }
  if (w.size() > 3 && ends_with(w, "s") && !ends_with(w, "ss") && !ends_with(w, "us") && !ends_with(w, "is")) {
    return w.substr(0, w.size() - 1);
  }
  return w;
}

bool has_letter(std::string_view w) {
  return std::any_of(w.begin(), w.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; });
}

}  // namespace

Stoplist default_stoplist() {
  return {"image", "photo", "picture", "view", "scene", "background", "foreground"};
}

Stoplist load_stoplist(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("stoplist file not found: " + path.string());
  Stoplist out;
  const std::string text = read_text_file(path);
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find('\n', start), text.size());
    const std::string line = to_lower(trim(std::string_view(text).substr(start, end - start)));
    if (!line.empty() && line.front() != '#') out.insert(lemmatize(line));
    start = end + 1;
  }
  return out;
}

std::string lemmatize(std::string_view word) {
  std::string w = to_lower(word);
  for (int i = 0; i < 8; ++i) {
    std::string next = lemmatize_once(w);
    if (next == w) break;
    w = std::move(next);
  }
  return w;
}

bool LexiconNounExtractor::is_noun_lemma(std::string_view w) {
  if (w.empty() || !has_letter(w)) return false;
  if (closed_class().count(w) || adjectives().count(w) || verbs().count(w)) return false;
  if (noun_exceptions().count(w)) return true;
  if (w.size() > 4 && ends_with(w, "ly")) return false;
  if (w.size() >= 6 && ends_with(w, "ing")) return false;
  if (w.size() >= 5 && ends_with(w, "ed") && !ends_with(w, "eed")) return false;
  return true;
}

std::vector<std::string> LexiconNounExtractor::nouns(std::string_view text) const {
  std::vector<std::string> out;
  for (const auto& w : split_words(text)) {
    if (closed_class().count(w)) continue;
    std::string lemma = lemmatize(w);
    if (closed_class().count(lemma) || !is_noun_lemma(lemma)) continue;
    out.push_back(std::move(lemma));
  }
  return out;
}

ObjectSet extract_objects(std::string_view text, const Stoplist& stoplist, const NounExtractor& extractor) {
  ObjectSet out;
  for (auto& n : extractor.nouns(text)) {
    const std::string lemma = lemmatize(n);
    if (lemma.empty() || stoplist.count(lemma)) continue;
    out.insert(lemma);
  }
  return out;
}

ObjectSet extract_objects(std::string_view text, const Stoplist& stoplist) {
  static const LexiconNounExtractor lexicon;
  return extract_objects(text, stoplist, lexicon);
}

double jaccard(const ObjectSet& a, const ObjectSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& x : a) common += b.count(x);
  const std::size_t uni = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

double text_image_reward(EmbeddingBackend& backend, std::string_view text, const EmbeddingVector& image_embedding) {
  if (image_embedding.size() == 0 || image_embedding.norm() == 0.0) {
    throw DataError("text-image reward: image embedding has zero norm");
  }
  const EmbeddingVector t = backend.embed_text(text);
  if (t.size() == 0 || t.norm() == 0.0) {
    throw BackendError("embedding backend '" + backend.id() + "' returned a zero-norm text embedding");
  }
  return cosine_similarity(t, image_embedding);
}

double image_image_reward(ReconstructionAdapter& reconstructor, EmbeddingBackend& backend,
                          std::string_view decoded_text, const EmbeddingVector& ground_truth_image_embedding,
                          const ReconstructionSettings& settings, const std::string& low_level_latent) {
  if (ground_truth_image_embedding.size() == 0 || ground_truth_image_embedding.norm() == 0.0) {
    throw DataError("image-image reward: ground-truth embedding has zero norm");
  }
  Image image;
  try {
    image = reconstruct(reconstructor, low_level_latent, backend.embed_text(decoded_text), settings);
  } catch (const Error& e) {
    throw BackendError(std::string("image-image reward unavailable: ") + e.what());
  }
  const EmbeddingVector e = backend.embed_image(image);
  if (e.norm() == 0.0) return 0.0;
  return cosine_similarity(e, ground_truth_image_embedding);
}

void RewardFactors::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) {
    throw ConfigError("reward factors must be >= 0 (alpha=" + format_double(alpha) +
                      ", beta=" + format_double(beta) + ", gamma=" + format_double(gamma) + ")");
  }
}

RewardBreakdown composite_reward(double object_accuracy, double text_image, double image_image,
                                 const RewardFactors& factors, bool image_image_available) {
  factors.validate();
  RewardBreakdown b;
  b.object_accuracy = object_accuracy;
  b.text_image = text_image;
  b.image_image = image_image_available ? image_image : 0.0;
  b.image_image_available = image_image_available;
  b.factors = factors;
  b.composite = factors.alpha * b.object_accuracy + factors.beta * b.text_image + factors.gamma * b.image_image;
  return b;
}

TripleRewardSource::TripleRewardSource(const DatasetManifest& manifest, std::shared_ptr<EmbeddingBackend> embedder,
                                       std::shared_ptr<ReconstructionAdapter> reconstructor,
                                       std::shared_ptr<NounExtractor> extractor, Stoplist stoplist,
                                       ReconstructionSettings settings)
    : manifest_(manifest),
      embedder_(std::move(embedder)),
      reconstructor_(std::move(reconstructor)),
      extractor_(extractor ? std::move(extractor) : std::make_shared<LexiconNounExtractor>()),
      stoplist_(std::move(stoplist)),
      settings_(std::move(settings)) {
  if (!embedder_) throw ConfigError("reward source needs an embedding backend");
  if (!reconstructor_) throw ConfigError("reward source needs a reconstruction adapter");
}

std::string TripleRewardSource::id() const {
  return "triple(" + extractor_->id() + "," + embedder_->id() + "," + reconstructor_->id() + ")";
}

const EmbeddingVector& TripleRewardSource::image_embedding(const std::string& stimulus_id) {
  auto it = image_cache_.find(stimulus_id);
  if (it == image_cache_.end()) {
    it = image_cache_.emplace(stimulus_id, embedder_->embed_image(read_image(manifest_.image_path(stimulus_id))))
             .first;
  }
  return it->second;
}

RawRewards TripleRewardSource::score(const RewardRequest& request) {
  std::lock_guard lock(mutex_);
  RawRewards r;
  r.object_accuracy = jaccard(extract_objects(request.reference_text, stoplist_, *extractor_),
                              extract_objects(request.sampled_text, stoplist_, *extractor_));
  const EmbeddingVector& gt = image_embedding(request.stimulus_id);
  r.text_image = text_image_reward(*embedder_, request.sampled_text, gt);
  if (request.want_image_image) {
    r.image_image = image_image_reward(*reconstructor_, *embedder_, request.sampled_text, gt, settings_);
  }
  return r;
}

std::string reward_trace_to_json(const RewardTraceRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch},
                      {"batch", r.batch},
                      {"subject_id", r.subject_id},
                      {"stimulus_id", r.stimulus_id},
                      {"object_accuracy", r.rewards.object_accuracy},
                      {"text_image", r.rewards.text_image},
                      {"image_image", r.rewards.image_image},
                      {"image_image_available", r.rewards.image_image_available},
                      {"composite", r.rewards.composite}};
  return j.dump();
}

}  // namespace neurocap
