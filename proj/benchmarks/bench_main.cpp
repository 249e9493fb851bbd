#include <benchmark/benchmark.h>

#include "neurocap/brain2text.hpp"
#include "neurocap/evaluation.hpp"
#include "neurocap/fusion.hpp"
#include "neurocap/rewards.hpp"

#include <random>

using namespace neurocap;

namespace {

Tokenizer bench_tokenizer() {
  const std::vector<std::string> corpus = {"a red car parked near a tall green tree on a sunny street .",
                                           "two brown dogs run across the grass beside a small white fence ."};
  return Tokenizer::from_corpus(corpus);
}

ModelConfig bench_config(int layers) {
  ModelConfig c;
  c.layers = layers;
  c.max_text_length = 16;
  return c;
}

std::vector<float> random_voxels(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Image random_image(int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  Image img(side, side, 3);
  for (auto& v : img.data) v = u(rng);
  return img;
}

}  // namespace

static void BM_EncodeFmri(benchmark::State& state) {
  BrainToTextModel model(bench_config(static_cast<int>(state.range(0))), bench_tokenizer());
  model.register_subject({"subj01", 15724});
  const auto v = random_voxels(15724);
  for (auto _ : state) benchmark::DoNotOptimize(model.encode_fmri("subj01", v));
}
BENCHMARK(BM_EncodeFmri)->Arg(2)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_GreedyDecode(benchmark::State& state) {
  BrainToTextModel model(bench_config(2), bench_tokenizer());
  model.register_subject({"subj01", 64});
  const PrefixEmbedding prefix = model.encode_fmri("subj01", random_voxels(64));
  DecodeOptions opts;
  opts.max_length = 16;
  for (auto _ : state) benchmark::DoNotOptimize(decode_text(model.language_model(), prefix, GreedyDecoding{}, opts));
}
BENCHMARK(BM_GreedyDecode)->Unit(benchmark::kMillisecond);

static void BM_ObjectAccuracy(benchmark::State& state) {
  const std::string ref = "A bathroom with a white sink, a large mirror and two folded towels on a shelf.";
  const std::string hyp = "A white sink below a mirror in a small bathroom with tiles.";
  for (auto _ : state) benchmark::DoNotOptimize(jaccard(extract_objects(ref), extract_objects(hyp)));
}
BENCHMARK(BM_ObjectAccuracy);

static void BM_Ssim(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const Image a = random_image(side, 1), b = random_image(side, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(425)->Unit(benchmark::kMillisecond);

static void BM_TwoWayIdentification(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<Eigen::VectorXd> r(n), g(n);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = Eigen::VectorXd::Random(512);
    g[i] = Eigen::VectorXd::Random(512);
  }
  for (auto _ : state) benchmark::DoNotOptimize(two_way_identification(r, g, Comparator::kCorrelation));
}
BENCHMARK(BM_TwoWayIdentification)->Arg(100)->Arg(982)->Unit(benchmark::kMillisecond);

static void BM_MockReconstruct(benchmark::State& state) {
  MockReconstructionAdapter adapter;
  const EmbeddingVector e = EmbeddingVector::Random(64);
  for (auto _ : state) benchmark::DoNotOptimize(reconstruct(adapter, {}, e, {"full", 64, 0}));
}
BENCHMARK(BM_MockReconstruct)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
