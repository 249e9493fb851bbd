#include <doctest.h>

#include "test_support.hpp"

#include "neurocap/brain2text.hpp"
#include "neurocap/error.hpp"
#include "neurocap/text_util.hpp"
#include "neurocap/training.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace neurocap;
using neurocap::testing::TempDir;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.prefix_length = 3;
  c.embed_dim = 8;
  c.heads = 2;
  c.layers = 1;
  c.max_text_length = 6;
  c.lm_layers = 1;
  c.lm_heads = 2;
  return c;
}

Tokenizer small_tokenizer() {
  const std::vector<std::string> corpus = {"a red car near a tree .", "two dogs on the grass ."};
  return Tokenizer::from_corpus(corpus);
}

std::vector<float> voxels(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist;
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// Puts all probability mass on one token regardless of context.
class DegenerateBackend : public LanguageModelBackend {
 public:
  DegenerateBackend(Tokenizer tok, Eigen::Index dim, TokenId always) : tok_(std::move(tok)), dim_(dim), id_(always) {}
  std::string id() const override { return "degenerate"; }
  const Tokenizer& tokenizer() const override { return tok_; }
  Eigen::Index embed_dim() const override { return dim_; }
  ag::Var logits(const ag::Var&, std::span<const TokenId> inputs) override {
    ag::Matrix m = ag::Matrix::Constant(static_cast<Eigen::Index>(inputs.size()) + 1,
                                        static_cast<Eigen::Index>(tok_.size()),
                                        -std::numeric_limits<double>::infinity());
    m.col(id_).setZero();
    return ag::constant(std::move(m));
  }

 private:
  Tokenizer tok_;
  Eigen::Index dim_;
  TokenId id_;
};

}  // namespace

TEST_CASE("prefix has 2l rows and d columns") {
  BrainToTextModel model(tiny_config(), small_tokenizer());
  model.register_subject({"subj01", 50});
  model.register_subject({"subj02", 80});
  const PrefixEmbedding p1 = model.encode_fmri("subj01", voxels(50, 1));
  const PrefixEmbedding p2 = model.encode_fmri("subj02", voxels(80, 2));
  CHECK(p1.rows() == 6);
  CHECK(p1.cols() == 8);
  CHECK(p2.rows() == 6);
  CHECK(p2.cols() == 8);
}

TEST_CASE("subject registration and voxel length are validated") {
  BrainToTextModel model(tiny_config(), small_tokenizer());
  model.register_subject({"subj01", 50});
  CHECK_THROWS_AS(model.register_subject({"subj01", 50}), ConfigError);
  try {
    model.encode_fmri("subj01", voxels(49, 0));
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("expects 50 voxels, got 49") != std::string::npos);
  }
  CHECK_THROWS_AS(model.encode_fmri("subj09", voxels(50, 0)), DataError);
}

TEST_CASE("model config rejects heads that do not divide the width") {
  ModelConfig c = tiny_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(ModelConfig::from_json(tiny_config().to_json()).embed_dim == 8);
}

TEST_CASE("greedy decoding is deterministic and sampling is seed-determined") {
  BrainToTextModel model(tiny_config(), small_tokenizer());
  model.register_subject({"s", 20});
  const PrefixEmbedding prefix = model.encode_fmri("s", voxels(20, 3));
  auto& lm = model.language_model();
  DecodeOptions opts;
  opts.max_length = 6;
  CHECK(decode_text(lm, prefix, GreedyDecoding{}, opts).tokens == decode_text(lm, prefix, GreedyDecoding{}, opts).tokens);
  const auto s1 = decode_text(lm, prefix, SampleDecoding{1.0, 42}, opts);
  const auto s2 = decode_text(lm, prefix, SampleDecoding{1.0, 42}, opts);
  CHECK(s1.tokens == s2.tokens);
  CHECK(s1.log_probs == s2.log_probs);
  const auto beam = decode_text(lm, prefix, BeamDecoding{3}, opts);
  CHECK(beam.tokens.size() <= 6);
  CHECK_THROWS_AS(decode_text(lm, prefix, SampleDecoding{0.0, 1}, opts), ConfigError);
}

TEST_CASE("per-step distributions sum to one") {
  BrainToTextModel model(tiny_config(), small_tokenizer());
  model.register_subject({"s", 20});
  const PrefixEmbedding prefix = model.encode_fmri("s", voxels(20, 4));
  DecodeOptions opts;
  opts.max_length = 6;
  opts.record_distributions = true;
  const auto seq = decode_text(model.language_model(), prefix, SampleDecoding{0.7, 9}, opts);
  REQUIRE(!seq.step_log_distributions.empty());
  for (const auto& lp : seq.step_log_distributions) CHECK(lp.array().exp().sum() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("a backend that always emits one token yields it up to max length with log-prob zero") {
  DegenerateBackend lm(small_tokenizer(), 8, 7);
  const PrefixEmbedding prefix(ag::Matrix::Zero(6, 8));
  DecodeOptions opts;
  opts.max_length = 5;
  for (const DecodeStrategy& s : {DecodeStrategy{GreedyDecoding{}}, DecodeStrategy{SampleDecoding{1.0, 3}},
                                  DecodeStrategy{BeamDecoding{2}}}) {
    const auto seq = decode_text(lm, prefix, s, opts);
    CHECK(seq.tokens == std::vector<TokenId>(5, 7));
    for (double lp : seq.log_probs) CHECK(lp == 0.0);
  }
}

TEST_CASE("decoding rejects a prefix of the wrong width") {
  DegenerateBackend lm(small_tokenizer(), 8, 7);
  CHECK_THROWS_AS(decode_text(lm, PrefixEmbedding(ag::Matrix::Zero(6, 5)), GreedyDecoding{}), DataError);
}

TEST_CASE("checkpoints round-trip and reject truncation") {
  TempDir dir;
  BrainToTextModel model(tiny_config(), small_tokenizer());
  model.register_subject({"subj01", 12});
  model.save_checkpoint(dir / "m.ckpt");
  BrainToTextModel back = BrainToTextModel::load_checkpoint(dir / "m.ckpt");
  const auto v = voxels(12, 5);
  CHECK((back.encode_fmri("subj01", v).values().array() == model.encode_fmri("subj01", v).values().array()).all());
  CHECK(back.tokenizer().serialize() == model.tokenizer().serialize());
  const std::string bytes = read_text_file(dir / "m.ckpt");
  write_text_file_atomic(dir / "cut.ckpt", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(BrainToTextModel::load_checkpoint(dir / "cut.ckpt"), DataError);
}

TEST_CASE("caption loss gradient reaches the constant, adapters, mapper and language model") {
  BrainToTextModel model(tiny_config(), small_tokenizer());
  model.register_subject({"s", 6});
  const auto v = voxels(6, 6);
  const auto targets = caption_targets(model.tokenizer(), "a red car", 6);
  auto loss = [&] { return ce_loss(model.language_model(), model.encode("s", v), targets); };

  auto params = model.parameters();
  for (auto& p : params) p.param->zero_grad();
  ag::backward(loss());

  const double h = 1e-6;
  std::mt19937_64 rng(7);
  bool saw_adapter = false, saw_constant = false, saw_mapper = false;
  for (auto& p : params) {
    REQUIRE_MESSAGE(p.param->has_grad(), p.name);
    saw_adapter |= p.name.rfind("adapter.", 0) == 0;
    saw_constant |= p.name == "prefix.constant";
    saw_mapper |= p.name.rfind("mapper.", 0) == 0;
    // Spot-check a few entries per tensor against central differences.
    std::uniform_int_distribution<Eigen::Index> pick(0, p.param->value().size() - 1);
    for (int k = 0; k < 3; ++k) {
      const Eigen::Index i = pick(rng);
      double& x = p.param->value().data()[i];
      const double orig = x;
      x = orig + h;
      const double up = loss().scalar();
      x = orig - h;
      const double down = loss().scalar();
      x = orig;
      const double fd = (up - down) / (2 * h);
      const double g = p.param->grad().data()[i];
      CHECK_MESSAGE(std::abs(fd - g) <= 1e-3 * std::max(1.0, std::abs(fd)), p.name);
    }
  }
  CHECK(saw_adapter);
  CHECK(saw_constant);
  CHECK(saw_mapper);
}

TEST_CASE("frozen language model and adapters are excluded from trainable parameters") {
  ModelConfig c = tiny_config();
  c.freeze_lm = true;
  BrainToTextModel model(c, small_tokenizer());
  model.register_subject({"s", 4});
  for (const auto& p : model.trainable_parameters(true)) {
    CHECK(p.name.rfind("lm.", 0) != 0);
    CHECK(p.name.rfind("adapter.", 0) != 0);
  }
  CHECK(model.parameters().size() > model.trainable_parameters(true).size());
}

TEST_CASE("decodings round-trip through JSON lines") {
  TempDir dir;
  const std::vector<DecodingRecord> recs = {{"subj01", "stim0001", "a red car", "abcd1234"},
                                            {"subj02", "stim0002", "", "abcd1234"}};
  write_decodings(recs, dir / "d.jsonl");
  const auto back = read_decodings(dir / "d.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].text == "a red car");
  CHECK(back[1].subject_id == "subj02");
  write_text_file_atomic(dir / "bad.jsonl", "{\"subject_id\": 1}\n");
  CHECK_THROWS_AS(read_decodings(dir / "bad.jsonl"), DataError);
}

TEST_CASE("decode_test_set produces one record per test sample of the subject") {
  BrainToTextModel model(tiny_config(), small_tokenizer());
  model.register_subject({"a", 5});
  model.register_subject({"b", 7});
  std::vector<FmriSample> test = {{"a", "s1", FmriSample::kAveragedTrial, voxels(5, 1)},
                                  {"b", "s1", FmriSample::kAveragedTrial, voxels(7, 2)},
                                  {"a", "s2", FmriSample::kAveragedTrial, voxels(5, 3)}};
  const auto recs = decode_test_set(model, test, "a", GreedyDecoding{}, "ck");
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].stimulus_id == "s1");
  CHECK(recs[1].stimulus_id == "s2");
  CHECK(recs[0].checkpoint_id == "ck");
  CHECK_THROWS_AS(decode_test_set(model, test, "zz", GreedyDecoding{}, "ck"), DataError);
}
