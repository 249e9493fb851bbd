#include <doctest.h>

#include "test_support.hpp"

#include "neurocap/error.hpp"
#include "neurocap/fusion.hpp"
#include "neurocap/text_util.hpp"

#include <random>

using namespace neurocap;
using neurocap::testing::TempDir;
namespace fs = std::filesystem;

namespace {

EmbeddingVector random_vector(std::mt19937_64& rng, int n = 16) {
  std::normal_distribution<double> d;
  EmbeddingVector v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("fusion endpoints return the inputs exactly") {
  std::mt19937_64 rng(1);
  const auto t = random_vector(rng), b = random_vector(rng);
  CHECK(fuse_embeddings(t, b, {0.0, false}) == b);
  CHECK(fuse_embeddings(t, b, {1.0, false}) == t);
  CHECK(fuse_embeddings(t, b, {0.0, true}) == b);
}

TEST_CASE("fusion is the convex combination") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto t = random_vector(rng), b = random_vector(rng);
    const double w = std::uniform_real_distribution<double>(0, 1)(rng);
    const EmbeddingVector f = fuse_embeddings(t, b, {w, false});
    CHECK((f - ((1 - w) * b + w * t)).cwiseAbs().maxCoeff() <= 1e-12);
    const EmbeddingVector r = fuse_embeddings(t, b, {w, true});
    CHECK(r.norm() == doctest::Approx(b.norm()).epsilon(1e-12));
  }
}

TEST_CASE("fusion validates weight and shapes") {
  const EmbeddingVector a = EmbeddingVector::Ones(3), b = EmbeddingVector::Ones(4);
  CHECK_THROWS_AS(fuse_embeddings(a, a, {1.5, false}), ConfigError);
  CHECK_THROWS_AS(fuse_embeddings(a, a, {-0.1, false}), ConfigError);
  CHECK_THROWS_AS(fuse_embeddings(a, b, {0.5, false}), DataError);
  EmbeddingVector bad = a;
  bad(0) = std::nan("");
  CHECK_THROWS_AS(fuse_embeddings(bad, a, {0.5, false}), DataError);
}

TEST_CASE("sweep weights span both endpoints") {
  CHECK(fusion_sweep_weights() == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
}

TEST_CASE("mock reconstruction is deterministic and depends on the embedding") {
  MockReconstructionAdapter adapter;
  std::mt19937_64 rng(3);
  const auto e1 = random_vector(rng), e2 = random_vector(rng);
  const ReconstructionSettings s{"full", 16, 0};
  const Image a = reconstruct(adapter, {}, e1, s);
  CHECK(a.width == 16);
  CHECK(encode_ppm(a) == encode_ppm(reconstruct(adapter, {}, e1, s)));
  CHECK(encode_ppm(a) != encode_ppm(reconstruct(adapter, {}, e2, s)));
  const Image low = reconstruct(adapter, {}, e1, {"low", 64, 0});
  CHECK(low.width == 16);
  CHECK_THROWS_AS(reconstruct(adapter, {}, e1, {"medium", 16, 0}), ConfigError);
  CHECK_THROWS_AS(reconstruct(adapter, "garbage", e1, s), DataError);
}

TEST_CASE("mock latents round-trip through the blob format") {
  Image img(4, 4, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i % 255) / 255.0f;
  const Image back = decode_mock_latent(encode_mock_latent(img, 4));
  CHECK(back.width == 4);
  CHECK(encode_ppm(back) == encode_ppm(quantize8(img)));
  CHECK_THROWS_AS(decode_mock_latent("MOCKLAT1"), DataError);
}

TEST_CASE("reconstruction sidecar round-trips") {
  TempDir dir;
  ReconstructionProvenance p{"subj01", "stim0003", "mock-recon", 0.25, true, "abcd", {{"size", "16"}}};
  write_reconstruction(Image(8, 8, 3, 0.5f), p, dir / "subj01");
  CHECK(fs::exists(dir / "subj01" / "stim0003.ppm"));
  const auto back = read_provenance(dir / "subj01" / "stim0003.json");
  CHECK(back.fusion_weight == 0.25);
  CHECK(back.renormalize);
  CHECK(back.settings.at("size") == "16");
  write_text_file_atomic(dir / "bad.json", "{}");
  CHECK_THROWS_AS(read_provenance(dir / "bad.json"), DataError);
}

TEST_CASE("baseline features round-trip with relative latent paths") {
  TempDir dir;
  fs::create_directories(dir / "latents");
  write_text_file_atomic(dir / "latents" / "a.bin", encode_mock_latent(Image(8, 8, 3, 0.2f), 8));
  std::vector<BaselineRecord> recs = {{"subj01", "a", EmbeddingVector::LinSpaced(4, -1, 1), dir / "latents" / "a.bin"},
                                      {"subj01", "b", EmbeddingVector::Ones(4), {}}};
  write_baseline(recs, dir / "features.jsonl");
  const auto back = read_baseline(dir / "features.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].embedding == recs[0].embedding);
  CHECK(fs::equivalent(back[0].latent_file, recs[0].latent_file));
  CHECK(back[1].latent_file.empty());
}
