#include <doctest.h>

#include "test_support.hpp"

#include "neurocap/error.hpp"
#include "neurocap/rewards.hpp"
#include "neurocap/text_util.hpp"

#include <random>

using namespace neurocap;
using neurocap::testing::TempDir;

namespace {

// Returns preset vectors, for exercising reward edge cases.
class FixedEmbedding : public EmbeddingBackend {
 public:
  EmbeddingVector text = EmbeddingVector::Ones(3);
  EmbeddingVector image = EmbeddingVector::Ones(3);
  std::string id() const override { return "fixed"; }
  Eigen::Index dim() const override { return 3; }
  EmbeddingVector embed_text(std::string_view) override { return text; }
  EmbeddingVector embed_image(const Image&) override { return image; }
};

class BrokenAdapter : public ReconstructionAdapter {
 public:
  std::string id() const override { return "broken"; }
  Image reconstruct(const std::string&, std::span<const EmbeddingVector>, const ReconstructionSettings&) override {
    throw BackendError("generator offline");
  }
};

}  // namespace

TEST_CASE("object extraction keeps nouns and drops descriptors") {
  CHECK(extract_objects("A bathroom with a white sink and a mirror") == ObjectSet{"bathroom", "sink", "mirror"});
  CHECK(extract_objects("Two dogs are running on the green grass.") == ObjectSet{"dog", "grass"});
  CHECK(extract_objects("") == ObjectSet{});
}

TEST_CASE("stoplisted words are never objects") {
  CHECK(extract_objects("An image of a cat in the background") == ObjectSet{"cat"});
  CHECK(extract_objects("An image of a cat", Stoplist{}).count("image") == 1);
}

TEST_CASE("lemmatization maps plurals to singular") {
  CHECK(lemmatize("Dogs") == "dog");
  CHECK(lemmatize("benches") == "bench");
  CHECK(lemmatize("berries") == "berry");
  CHECK(lemmatize("women") == "woman");
  CHECK(lemmatize("glasses") == "glasses");
  CHECK(lemmatize("bus") == "bus");
  CHECK(lemmatize("grass") == "grass");
  CHECK(lemmatize("man's") == "man");
}

TEST_CASE("stoplist files are lemmatized and comment-aware") {
  TempDir dir;
  write_text_file_atomic(dir / "stop.txt", "# common\nphotos\n\nScene\n");
  CHECK(load_stoplist(dir / "stop.txt") == Stoplist{"photo", "scene"});
  CHECK_THROWS_AS(load_stoplist(dir / "missing.txt"), ConfigError);
}

TEST_CASE("jaccard matches its definition") {
  CHECK(jaccard({}, {}) == 1.0);
  CHECK(jaccard({"a"}, {}) == 0.0);
  CHECK(jaccard({"a", "b"}, {"b", "c"}) == doctest::Approx(1.0 / 3.0));
  CHECK(jaccard({"a", "b"}, {"b", "a"}) == 1.0);
}

TEST_CASE("jaccard is symmetric and bounded on random sets") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> pick(0, 9), size(0, 6);
  for (int t = 0; t < 200; ++t) {
    ObjectSet a, b;
    for (int i = size(rng); i > 0; --i) a.insert("w" + std::to_string(pick(rng)));
    for (int i = size(rng); i > 0; --i) b.insert("w" + std::to_string(pick(rng)));
    const double j = jaccard(a, b);
    CHECK(j == jaccard(b, a));
    CHECK(j >= 0.0);
    CHECK(j <= 1.0);
    CHECK(jaccard(a, a) == 1.0);
  }
}

TEST_CASE("text-image reward is a cosine with typed failures") {
  FixedEmbedding e;
  e.text = EmbeddingVector::Unit(3, 0);
  CHECK(text_image_reward(e, "x", EmbeddingVector::Unit(3, 0)) == doctest::Approx(1.0));
  CHECK(text_image_reward(e, "x", -EmbeddingVector::Unit(3, 0)) == doctest::Approx(-1.0));
  CHECK(text_image_reward(e, "x", EmbeddingVector::Unit(3, 1)) == doctest::Approx(0.0));
  CHECK_THROWS_AS(text_image_reward(e, "x", EmbeddingVector::Zero(3)), DataError);
  e.text = EmbeddingVector::Zero(3);
  CHECK_THROWS_AS(text_image_reward(e, "x", EmbeddingVector::Unit(3, 0)), BackendError);
}

TEST_CASE("image-image reward surfaces adapter failures as backend errors") {
  FixedEmbedding e;
  BrokenAdapter broken;
  CHECK_THROWS_AS(image_image_reward(broken, e, "a cat", EmbeddingVector::Ones(3)), BackendError);
  MockReconstructionAdapter mock;
  const double r = image_image_reward(mock, e, "a cat", EmbeddingVector::Ones(3));
  CHECK(r == doctest::Approx(1.0));
  CHECK_THROWS_AS(image_image_reward(mock, e, "a cat", EmbeddingVector::Zero(3)), DataError);
}

TEST_CASE("composite reward is the factor-weighted sum") {
  const RewardBreakdown b = composite_reward(0.5, 0.2, -0.4, {0.01, 0.02, 0.03});
  CHECK(b.composite == doctest::Approx(0.01 * 0.5 + 0.02 * 0.2 - 0.03 * 0.4));
  const RewardBreakdown missing = composite_reward(0.5, 0.2, 0.9, {1, 1, 1}, false);
  CHECK(missing.image_image == 0.0);
  CHECK(!missing.image_image_available);
  CHECK(missing.composite == doctest::Approx(0.7));
  CHECK_THROWS_AS(composite_reward(0, 0, 0, {-0.1, 0, 0}), ConfigError);
}

TEST_CASE("triple reward source scores against the reference caption and image") {
  TempDir dir;
  SyntheticSpec spec;
  spec.stimuli = 4;
  const DatasetManifest m = generate_synthetic_dataset(spec, dir.path());
  auto embed = std::make_shared<HashedEmbeddingBackend>(32, 0);
  TripleRewardSource source(m, embed, std::make_shared<MockReconstructionAdapter>(), nullptr, default_stoplist(),
                            {"low", 32, 0});
  const std::string ref = m.original_caption("stim0000");
  RewardRequest req{"subj01", "stim0000", ref, ref, {}, true};
  const RawRewards r = source.score(req);
  CHECK(r.object_accuracy == 1.0);
  CHECK(r.text_image >= -1.0);
  CHECK(r.text_image <= 1.0);
  REQUIRE(r.image_image.has_value());
  CHECK(std::abs(*r.image_image) <= 1.0 + 1e-12);
  req.want_image_image = false;
  req.sampled_text = "zzz";
  const RawRewards r2 = source.score(req);
  CHECK(!r2.image_image.has_value());
  CHECK(r2.object_accuracy < 1.0);
  CHECK(source.id() == "triple(lexicon,hashed-embed,mock-recon)");
  CHECK_THROWS_AS(TripleRewardSource(m, nullptr, std::make_shared<MockReconstructionAdapter>()), ConfigError);
}
