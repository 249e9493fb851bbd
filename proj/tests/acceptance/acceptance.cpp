// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 0 only
// when every criterion passes.
#include "cli.hpp"
#include "test_support.hpp"

#include "neurocap/autograd.hpp"
#include "neurocap/brain2text.hpp"
#include "neurocap/checkpoint.hpp"
#include "neurocap/dataset.hpp"
#include "neurocap/embedding.hpp"
#include "neurocap/evaluation.hpp"
#include "neurocap/fusion.hpp"
#include "neurocap/image.hpp"
#include "neurocap/rewards.hpp"
#include "neurocap/run_manifest.hpp"
#include "neurocap/text_util.hpp"
#include "neurocap/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace neurocap;
namespace fs = std::filesystem;
using neurocap::testing::TempDir;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back(std::string(ok ? "ok: " : "FAILED: ") + what);
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

// 1 -------------------------------------------------------------------------

// Embeds every text as a fixed vector and every image as another, both scaled.
class FixedEmbedding : public EmbeddingBackend {
 public:
  EmbeddingVector text_vec, image_vec;
  double text_scale = 1.0, image_scale = 1.0;

  std::string id() const override { return "fixed"; }
  Eigen::Index dim() const override { return text_vec.size(); }
  EmbeddingVector embed_text(std::string_view) override { return text_scale * text_vec; }
  EmbeddingVector embed_image(const Image&) override { return image_scale * image_vec; }
};

double brute_jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> ua;
  for (const auto& w : a) {
    if (std::find(ua.begin(), ua.end(), w) == ua.end()) ua.push_back(w);
  }
  std::vector<std::string> ub;
  for (const auto& w : b) {
    if (std::find(ub.begin(), ub.end(), w) == ub.end()) ub.push_back(w);
  }
  int inter = 0;
  for (const auto& w : ua) {
    if (std::find(ub.begin(), ub.end(), w) != ub.end()) ++inter;
  }
  const int uni = static_cast<int>(ua.size() + ub.size()) - inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Outcome criterion1() {
  Outcome out;
  std::mt19937_64 rng(1);
  const std::vector<std::string> words = {"cat", "dog", "tree", "car", "sink", "mirror", "boat", "cup",
                                          "lamp", "chair", "table", "bird", "kite", "sofa", "road"};
  int jaccard_mismatch = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> a, b;
    const int na = static_cast<int>(rng() % 8), nb = static_cast<int>(rng() % 8);
    for (int i = 0; i < na; ++i) a.push_back(words[rng() % words.size()]);
    for (int i = 0; i < nb; ++i) b.push_back(words[rng() % words.size()]);
    const ObjectSet sa(a.begin(), a.end()), sb(b.begin(), b.end());
    if (jaccard(sa, sb) != brute_jaccard(a, b)) ++jaccard_mismatch;
  }
  out.check(jaccard_mismatch == 0, "jaccard equals the set-counting oracle on 1000 pairs (" +
                                       std::to_string(jaccard_mismatch) + " mismatches)");

  auto backend = std::make_shared<FixedEmbedding>();
  MockReconstructionAdapter adapter;
  const ReconstructionSettings low{"low", 32, 0};
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  double max_dev_ti = 0.0, max_dev_ii = 0.0;
  bool in_range = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const int dim = 2 + static_cast<int>(rng() % 30);
    EmbeddingVector t(dim), i(dim);
    for (int k = 0; k < dim; ++k) {
      t[k] = normal(rng);
      i[k] = normal(rng);
    }
    backend->text_vec = t;
    backend->image_vec = i;
    backend->text_scale = backend->image_scale = 1.0;
    const double ti = text_image_reward(*backend, "text", i);
    const double ii = image_image_reward(adapter, *backend, "text", t, low);
    in_range = in_range && ti >= -1.0 && ti <= 1.0 && ii >= -1.0 && ii <= 1.0;

    const double c1 = scale(rng), c2 = scale(rng);
    backend->text_scale = c1;
    const double ti_scaled = text_image_reward(*backend, "text", c2 * i);
    backend->image_scale = c2;
    const double ii_scaled = image_image_reward(adapter, *backend, "text", c1 * t, low);
    max_dev_ti = std::max(max_dev_ti, std::abs(ti - ti_scaled));
    max_dev_ii = std::max(max_dev_ii, std::abs(ii - ii_scaled));
  }
  out.check(in_range, "text-image and image-image rewards lie in [-1, 1]");
  out.check(max_dev_ti <= 1e-6, "text-image reward is positive-scale invariant (max dev " + fmt(max_dev_ti) + ")");
  out.check(max_dev_ii <= 1e-6, "image-image reward is positive-scale invariant (max dev " + fmt(max_dev_ii) + ")");
  return out;
}

// 2 -------------------------------------------------------------------------

// Loss of a 3-arm categorical policy with logits theta after observing arm a.
double toy_loss(const ag::Matrix& theta, int arm, double reward) {
  const double mx = theta.maxCoeff();
  const double lse = mx + std::log((theta.array() - mx).exp().sum());
  return -reward * (theta(0, arm) - lse);
}

ag::Matrix toy_grad(const ag::Matrix& theta, int arm, double reward) {
  ag::Parameter p(theta);
  const ag::Var logp = ag::log_softmax_rows(p.var());
  const int idx[] = {arm};
  const ag::Var picked = ag::pick(logp, idx);
  ag::backward(reinforce_loss(picked, reward));
  return p.grad();
}

Outcome criterion2() {
  Outcome out;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst_fd = 0.0, worst_linear = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    ag::Matrix theta(1, 3);
    for (int k = 0; k < 3; ++k) theta(0, k) = normal(rng);
    const int arm = static_cast<int>(rng() % 3);
    const double reward = 0.1 + 2.0 * std::abs(normal(rng));
    const ag::Matrix g = toy_grad(theta, arm, reward);
    const double h = 1e-5;
    for (int k = 0; k < 3; ++k) {
      ag::Matrix tp = theta, tm = theta;
      tp(0, k) += h;
      tm(0, k) -= h;
      const double fd = (toy_loss(tp, arm, reward) - toy_loss(tm, arm, reward)) / (2.0 * h);
      worst_fd = std::max(worst_fd, rel_error(g(0, k), fd));
    }
    const double factor = 3.7;
    const ag::Matrix g2 = toy_grad(theta, arm, factor * reward);
    for (int k = 0; k < 3; ++k) worst_linear = std::max(worst_linear, rel_error(g2(0, k), factor * g(0, k)));
  }
  out.check(worst_fd <= 1e-4, "gradient matches central differences (max rel err " + fmt(worst_fd) + ")");
  out.check(worst_linear <= 1e-5, "gradient scales linearly with reward (max rel err " + fmt(worst_linear) + ")");
  return out;
}

// Shared synthetic setup for 3 and 4 --------------------------------------

struct Synthetic {
  TempDir dir{"accept"};
  DatasetManifest manifest;
  DatasetSplits splits;
  std::map<std::string, std::string> captions;
  Tokenizer tokenizer;

  Synthetic() {
    SyntheticSpec spec;
    spec.seed = 0;
    spec.subjects = 2;
    spec.stimuli = 16;
    manifest = generate_synthetic_dataset(spec, dir.path() / "data");
    splits = build_splits(manifest);
    std::vector<std::string> corpus;
    for (const auto& [id, entry] : manifest.stimuli) {
      captions[id] = manifest.original_caption(id);
      corpus.push_back(captions[id]);
    }
    tokenizer = Tokenizer::from_corpus(corpus);
  }

  static ModelConfig tiny() {
    ModelConfig c;
    c.embed_dim = 32;
    c.heads = 4;
    c.layers = 2;
    c.max_text_length = 16;
    return c;
  }

  BrainToTextModel model() const {
    BrainToTextModel m(tiny(), tokenizer);
    for (const auto& s : manifest.subjects) m.register_subject(s);
    return m;
  }
};

double dataset_ce(BrainToTextModel& model, const Synthetic& data) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : data.splits.train) {
    const auto targets = caption_targets(model.tokenizer(), data.captions.at(s.stimulus_id),
                                         model.config().max_text_length);
    const SequenceNll nll = sequence_nll(model.language_model(), model.encode(s.subject_id, s.voxels), targets);
    sum += nll.total.scalar();
    count += nll.count;
  }
  return sum / static_cast<double>(count);
}

// 3 -------------------------------------------------------------------------

Outcome criterion3() {
  Outcome out;
  Synthetic data;
  const TrainConfig config = TrainConfig::defaults_for_stage(1);

  BrainToTextModel a = data.model();
  const double initial = dataset_ce(a, data);
  const TrainResult ra = train_stage1(a, data.splits.train, data.captions, config);
  const double final_ce = dataset_ce(a, data);
  out.check(final_ce < 0.3 * initial, "final CE " + fmt(final_ce) + " < 0.3 x initial CE " + fmt(initial) +
                                          " after " + std::to_string(config.epochs) + " epochs");

  BrainToTextModel b = data.model();
  const TrainResult rb = train_stage1(b, data.splits.train, data.captions, config);
  bool identical = ra.epochs.size() == rb.epochs.size();
  for (std::size_t i = 0; identical && i < ra.epochs.size(); ++i) {
    identical = ra.epochs[i].ce_loss == rb.epochs[i].ce_loss && ra.epochs[i].total_loss == rb.epochs[i].total_loss;
  }
  out.check(identical, "identical seeds give bit-identical loss curves");
  return out;
}

// 4 -------------------------------------------------------------------------

// Rigged reward: the fraction of sampled tokens (end token excluded) equal to one target token.
class TokenFractionReward : public RewardSource {
 public:
  explicit TokenFractionReward(TokenId target) : target_(target) {}
  std::string id() const override { return "token-fraction"; }
  RawRewards score(const RewardRequest& request) override {
    int hits = 0, total = 0;
    for (TokenId t : request.sampled_tokens) {
      if (t == Tokenizer::kEos) continue;
      ++total;
      if (t == target_) ++hits;
    }
    RawRewards r;
    r.object_accuracy = total == 0 ? 0.0 : static_cast<double>(hits) / total;
    return r;
  }

 private:
  TokenId target_;
};

std::map<std::string, ag::Matrix> parameters_of(const Checkpoint& ckpt) {
  std::map<std::string, ag::Matrix> out;
  for (const auto& name : ckpt.names()) {
    if (name.rfind("param.", 0) == 0) out[name] = ckpt.tensor(name);
  }
  return out;
}

bool same_parameters(const Checkpoint& a, const Checkpoint& b) {
  const auto pa = parameters_of(a), pb = parameters_of(b);
  if (pa.size() != pb.size()) return false;
  for (const auto& [name, m] : pa) {
    const auto it = pb.find(name);
    if (it == pb.end() || it->second.rows() != m.rows() || it->second.cols() != m.cols()) return false;
    if (!(it->second.array() == m.array()).all()) return false;
  }
  return true;
}

Outcome criterion4() {
  Outcome out;
  Synthetic data;
  TempDir work("accept4");

  TrainConfig warm = TrainConfig::defaults_for_stage(1);
  warm.epochs = 20;
  BrainToTextModel base = data.model();
  train_stage1(base, data.splits.train, data.captions, warm);
  const fs::path init = work / "init.ckpt";
  base.save_checkpoint(init);

  TrainConfig rigged = TrainConfig::defaults_for_stage(2);
  rigged.learning_rate = 1e-3;
  rigged.factors = {1.0, 0.0, 0.0};
  rigged.baseline = "batch-mean";
  const TokenId target = data.tokenizer.id("and");
  TokenFractionReward reward(target);
  BrainToTextModel policy = BrainToTextModel::load_checkpoint(init);
  const TrainResult r = train_stage2(policy, data.splits.train, data.captions, reward, rigged);
  const double first = r.epochs.front().object_accuracy, last = r.epochs.back().object_accuracy;
  out.check(r.epochs.size() == 10 && last > first,
            "mean sampled reward rises from " + fmt(first) + " (epoch 1) to " + fmt(last) + " (epoch 10)");

  TrainConfig zero = TrainConfig::defaults_for_stage(2);
  zero.factors = {0.0, 0.0, 0.0};
  zero.checkpoint_every = 1;
  TrainConfig pure = zero;
  pure.stage = 1;
  BrainToTextModel m2 = BrainToTextModel::load_checkpoint(init);
  TokenFractionReward unused(target);
  train_stage2(m2, data.splits.train, data.captions, unused, zero, TrainOptions{work / "zero", nullptr, {}});
  BrainToTextModel m1 = BrainToTextModel::load_checkpoint(init);
  train_stage1(m1, data.splits.train, data.captions, pure, TrainOptions{work / "pure", nullptr, {}});
  bool trajectory = true;
  for (int e = 1; e < zero.epochs; ++e) {
    const std::string name = "epoch_" + std::to_string(e) + ".ckpt";
    trajectory = trajectory && same_parameters(Checkpoint::load(work / "zero" / name),
                                               Checkpoint::load(work / "pure" / name));
  }
  trajectory = trajectory && same_parameters(Checkpoint::load(work / "zero" / "checkpoint.ckpt"),
                                             Checkpoint::load(work / "pure" / "checkpoint.ckpt"));
  out.check(trajectory, "alpha = beta = gamma = 0 reproduces the pure-CE parameter trajectory bit for bit (" +
                            std::to_string(zero.epochs) + " epochs)");
  return out;
}

// 5 -------------------------------------------------------------------------

Outcome criterion5() {
  Outcome out;
  TempDir work("accept5");
  const ModelConfig config;  // l = 10, d = 64, 8 heads, 32 layers
  const std::vector<std::string> words = {"a", "cat", "on", "the", "mat"};
  BrainToTextModel model(config, Tokenizer(words));
  const std::vector<std::pair<std::string, std::size_t>> subjects = {{"subj01", 50}, {"subj02", 80}, {"subj05", 7}};
  for (const auto& [id, n] : subjects) model.register_subject({id, n, "nsdgeneral"});

  std::mt19937_64 rng(5);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::map<std::string, std::vector<float>> inputs;
  bool shapes = true;
  for (const auto& [id, n] : subjects) {
    std::vector<float> v(n);
    for (auto& x : v) x = normal(rng);
    inputs[id] = v;
    const PrefixEmbedding p = model.encode_fmri(id, v);
    shapes = shapes && p.rows() == 2 * config.prefix_length && p.cols() == config.embed_dim;
  }
  out.check(shapes, "encode_fmri returns (20, 64) for subjects with N_s in {50, 80, 7}");

  const fs::path path = work / "model.ckpt";
  model.save_checkpoint(path);
  BrainToTextModel loaded = BrainToTextModel::load_checkpoint(path);
  bool params_equal = true;
  auto pa = model.parameters();
  auto pb = loaded.parameters();
  params_equal = pa.size() == pb.size();
  for (std::size_t i = 0; params_equal && i < pa.size(); ++i) {
    params_equal = pa[i].name == pb[i].name && (pa[i].param->value().array() == pb[i].param->value().array()).all();
  }
  bool outputs_equal = true;
  for (const auto& [id, n] : subjects) {
    outputs_equal = outputs_equal &&
                    (model.encode_fmri(id, inputs[id]).values().array() ==
                     loaded.encode_fmri(id, inputs[id]).values().array())
                        .all();
  }
  loaded.save_checkpoint(work / "again.ckpt");
  const bool bytes_equal = read_text_file(path) == read_text_file(work / "again.ckpt");
  out.check(params_equal && outputs_equal && bytes_equal,
            "checkpoint round trip is bit-exact (parameters, encodings and re-saved bytes)");

  const ag::Matrix before = model.encode_fmri("subj02", inputs["subj02"]).values();
  std::vector<float> perturbed = inputs["subj01"];
  for (auto& x : perturbed) x += 3.0f * normal(rng);
  (void)model.encode_fmri("subj01", perturbed);
  const ag::Matrix after = model.encode_fmri("subj02", inputs["subj02"]).values();

  for (auto& p : model.parameters()) p.param->zero_grad();
  ag::backward(ag::sum(model.encode("subj01", perturbed)));
  bool isolated_grad = true;
  bool own_grad = false;
  for (auto& p : model.parameters()) {
    if (p.name.rfind("adapter.subj02.", 0) == 0 || p.name.rfind("adapter.subj05.", 0) == 0) {
      isolated_grad = isolated_grad && (!p.param->has_grad() || p.param->grad().isZero(0.0));
    }
    if (p.name.rfind("adapter.subj01.", 0) == 0 && p.param->has_grad() && !p.param->grad().isZero(0.0)) {
      own_grad = true;
    }
  }
  out.check((before.array() == after.array()).all() && isolated_grad && own_grad,
            "perturbing subject A leaves subject B's encoding and adapter gradients untouched");
  return out;
}

// 6 -------------------------------------------------------------------------

Image random_image(std::mt19937_64& rng, int w, int h, int c) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(w, h, c);
  for (auto& v : img.data) v = u(rng);
  return img;
}

Image formula_image(int w, int h, int a, int b, int m) {
  Image img(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) img.at(x, y, 0) = static_cast<float>((x * a + y * b) % m) / static_cast<float>(m - 1);
  }
  return img;
}

Image checkerboard(int side, int cell, bool inverse) {
  Image img(side, side, 1);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const float v = static_cast<float>(((x / cell) + (y / cell)) % 2);
      img.at(x, y, 0) = inverse ? 1.0f - v : v;
    }
  }
  return img;
}

double brute_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    sab += a[i] * b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
  }
  return (n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb));
}

double brute_two_way(const std::vector<Eigen::VectorXd>& r, const std::vector<Eigen::VectorXd>& g, bool cosine) {
  auto sim = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (cosine) return a.dot(b) / (a.norm() * b.norm());
    std::vector<double> va(a.data(), a.data() + a.size()), vb(b.data(), b.data() + b.size());
    return brute_pearson(va, vb);
  };
  double score = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (i == j) continue;
      const double own = sim(r[i], g[i]), other = sim(r[i], g[j]);
      score += own > other ? 1.0 : (own == other ? 0.5 : 0.0);
      ++pairs;
    }
  }
  return 100.0 * score / pairs;
}

Outcome criterion6() {
  Outcome out;
  std::mt19937_64 rng(6);
  const Image img = random_image(rng, 40, 30, 3);
  const Eigen::VectorXd feat = Eigen::VectorXd::Random(64);
  out.check(pixcorr(img, img) == 1.0 && ssim(img, img) == 1.0 && feature_distance(feat, feat) == 0.0 &&
                feature_distance(feat, feat, DistanceMetric::kEuclidean) == 0.0,
            "identity: pixcorr = 1.0, ssim = 1.0, feature_distance = 0.0 exactly");

  std::vector<Eigen::VectorXd> same(20);
  for (auto& v : same) v = Eigen::VectorXd::Random(32);
  out.check(two_way_identification(same, same, Comparator::kCorrelation) == 100.0 &&
                two_way_identification(same, same, Comparator::kCosine) == 100.0,
            "two-way identification is 100% when recon equals gt");

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> r(200), g(200);
  for (int i = 0; i < 200; ++i) {
    r[i].resize(64);
    g[i].resize(64);
    for (int k = 0; k < 64; ++k) {
      r[i][k] = normal(rng);
      g[i][k] = normal(rng);
    }
  }
  const double chance = two_way_identification(r, g, Comparator::kCorrelation);
  out.check(std::abs(chance - 50.0) <= 5.0, "independent features (n = 200) score " + fmt(chance) + "% (50 +- 5)");

  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 9);
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = normal(rng);
      b[i] = normal(rng);
    }
    worst = std::max(worst, std::abs(pearson(a, b) - brute_pearson(a, b)));

    Image x(n, 1, 1), y(n, 1, 1);
    for (int i = 0; i < n; ++i) {
      x.data[i] = static_cast<float>(a[i]);
      y.data[i] = static_cast<float>(b[i]);
    }
    std::vector<double> xa(x.data.begin(), x.data.end()), ya(y.data.begin(), y.data.end());
    worst = std::max(worst, std::abs(pixcorr(x, y) - brute_pearson(xa, ya)));

    Eigen::VectorXd va = Eigen::Map<Eigen::VectorXd>(a.data(), n), vb = Eigen::Map<Eigen::VectorXd>(b.data(), n);
    worst = std::max(worst, std::abs(feature_distance(va, vb) - std::max(0.0, 1.0 - brute_pearson(a, b))));
    worst = std::max(worst, std::abs(feature_distance(va, vb, DistanceMetric::kEuclidean) - (va - vb).norm()));

    const int m = 2 + static_cast<int>(rng() % 9);
    std::vector<Eigen::VectorXd> fr(m), fg(m);
    for (int i = 0; i < m; ++i) {
      fr[i] = Eigen::VectorXd::Random(n + 1);
      fg[i] = Eigen::VectorXd::Random(n + 1);
    }
    worst = std::max(worst, std::abs(two_way_identification(fr, fg, Comparator::kCorrelation) -
                                     brute_two_way(fr, fg, false)));
    worst = std::max(worst,
                     std::abs(two_way_identification(fr, fg, Comparator::kCosine) - brute_two_way(fr, fg, true)));
  }
  // SSIM reference values from scikit-image (tests/oracles/ssim_oracle.py).
  const double s1 = ssim(formula_image(16, 16, 7, 3, 11), formula_image(16, 16, 5, 2, 13));
  const double s2 = ssim(formula_image(23, 17, 3, 4, 9), formula_image(23, 17, 2, 7, 10));
  const double s3 = ssim(checkerboard(24, 4, false), checkerboard(24, 4, true));
  const double s4 = ssim(checkerboard(24, 4, false), checkerboard(24, 3, false));
  worst = std::max({worst, std::abs(s1 - -0.013427742616), std::abs(s2 - -0.020038864158),
                    std::abs(s3 - -0.897110427905), std::abs(s4 - 0.171914841867)});
  out.check(worst <= 1e-6, "pearson, pixcorr, feature_distance, two-way and ssim match oracles (max dev " +
                               fmt(worst) + ")");
  return out;
}

// 7 -------------------------------------------------------------------------

Outcome criterion7() {
  Outcome out;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  bool endpoints = true;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int dim = 1 + static_cast<int>(rng() % 64);
    EmbeddingVector t(dim), b(dim);
    for (int k = 0; k < dim; ++k) {
      t[k] = normal(rng);
      b[k] = normal(rng);
    }
    const EmbeddingVector f0 = fuse_embeddings(t, b, {0.0, false});
    const EmbeddingVector f1 = fuse_embeddings(t, b, {1.0, false});
    endpoints = endpoints && (f0.array() == b.array()).all() && (f1.array() == t.array()).all();
    const double w = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const EmbeddingVector fw = fuse_embeddings(t, b, {w, false});
    worst = std::max(worst, (fw - (f0 + w * (f1 - f0))).cwiseAbs().maxCoeff());
  }
  out.check(endpoints, "w = 0 returns the base embedding and w = 1 the text embedding exactly");
  out.check(worst <= 1e-6, "fusion is linear in w on 1000 random pairs (max dev " + fmt(worst) + ")");

  HashedEmbeddingBackend embedder(64, 0);
  MockReconstructionAdapter adapter;
  Image gt(24, 24, 3);
  for (auto& v : gt.data) v = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
  const std::string latent = encode_mock_latent(gt, 8);
  const EmbeddingVector base = embedder.embed_image(gt);
  const EmbeddingVector text = embedder.embed_text("a red kite above a green tree");
  const ReconstructionSettings settings{"full", 48, 3};
  const Image fused = reconstruct(adapter, latent, fuse_embeddings(text, base, {0.0, false}), settings);
  const Image plain = reconstruct(adapter, latent, base, settings);
  out.check(encode_ppm(fused) == encode_ppm(plain), "mock reconstruction with w = 0 is byte-identical to no fusion");
  return out;
}

// 8 -------------------------------------------------------------------------

Outcome criterion8() {
  Outcome out;
  // Published cross-subject means: PixCorr, SSIM, Alex(2), Alex(5), Incep, CLIP, Eff, SwAV.
  const std::vector<std::pair<std::string, std::array<std::optional<double>, kMetricCount>>> table = {
      {"LDM", {std::nullopt, std::nullopt, 83.0, 83.0, 76.0, 77.0, std::nullopt, std::nullopt}},
      {"LDM+Ours", {std::nullopt, std::nullopt, 81.1, 88.3, 85.6, 86.2, std::nullopt, std::nullopt}},
      {"BrainDiffuser", {.254, .356, 94.2, 96.2, 87.2, 91.5, .775, .423}},
      {"BrainDiffuser+Ours", {.260, .371, 93.9, 96.4, 92.4, 92.2, .710, .409}},
      {"MindEye", {.309, .323, 94.7, 97.8, 93.8, 94.1, .645, .367}},
      {"MindEye+Ours", {.305, .354, 94.8, 97.8, 94.3, 93.8, .637, .360}},
  };
  // Four subject tables spread around the published means (offsets sum to zero).
  const double offsets[4] = {0.75, -0.25, -1.0, 0.5};
  std::vector<MetricTable> subjects;
  for (int s = 0; s < 4; ++s) {
    MetricTable t{"subj0" + std::to_string(s + 1), {}};
    for (const auto& [method, values] : table) {
      MetricRow row{method, {}};
      for (std::size_t k = 0; k < kMetricCount; ++k) {
        if (!values[k]) continue;
        const double step = metric_is_percentage(static_cast<Metric>(k)) ? 0.4 : 0.002;
        row.values[k] = *values[k] + offsets[s] * step;
      }
      t.rows.push_back(row);
    }
    subjects.push_back(t);
  }

  TempDir work("accept8");
  std::vector<std::string> args = {"report"};
  for (const auto& t : subjects) {
    const fs::path p = work / (t.name + ".json");
    write_text_file_atomic(p, report_to_json(assemble_report({t})));
    args.push_back("--input");
    args.push_back(p.string());
  }
  args.push_back("--out");
  args.push_back((work / "table.txt").string());
  std::ostringstream sink, err;
  const int code = cli::dispatch(args, sink, err);
  out.check(code == 0, "report command exits 0 (" + std::to_string(code) + ")");
  const EvalReport report = report_from_json(read_text_file(work / "table.json"));
  const std::string text = read_text_file(work / "table.txt");

  const std::string golden = "| BrainDiffuser | .254 | .356 | 94.2% | 96.2% | 87.2% | 91.5% | .775 | .423 |";
  out.check(text.find(golden) != std::string::npos, "rendered mean row reads " + golden);

  bool exact = report.subjects.size() == 4 && report.mean.rows.size() == table.size();
  for (std::size_t r = 0; exact && r < table.size(); ++r) {
    for (std::size_t k = 0; k < kMetricCount; ++k) {
      const auto& got = report.mean.rows[r].values[k];
      if (!table[r].second[k]) {
        exact = exact && !got;
        continue;
      }
      double sum = 0.0;
      for (const auto& t : subjects) sum += *t.rows[r].values[k];
      exact = exact && got && *got == sum / 4.0;
    }
  }
  out.check(exact, "cross-subject mean equals the arithmetic mean of the subject rows exactly");
  return out;
}

// 9 -------------------------------------------------------------------------

Outcome criterion9() {
  Outcome out;
  TempDir work("accept9");
  const fs::path cwd = fs::current_path();
  fs::current_path(work.path());
  write_text_file_atomic("pipeline.json", R"({
  "model": {"embed_dim": 32, "heads": 4, "layers": 2, "max_text_length": 16},
  "train": {"stage1": {"epochs": 40, "learning_rate": 0.003}},
  "evaluation": {"resolution": 64}
})");
  const std::vector<std::vector<std::string>> steps = {
      {"gen-synthetic", "--out-dir", "data", "--seed", "0", "--stimuli", "16", "--config", "pipeline.json"},
      {"enhance-captions", "--manifest", "data/manifest.json", "--backend", "echo", "--out", "captions/store.jsonl",
       "--config", "pipeline.json"},
      {"train", "--stage", "1", "--config", "pipeline.json", "--manifest", "data/manifest.json", "--captions",
       "captions/store.jsonl", "--out-dir", "stage1"},
      {"train", "--stage", "2", "--config", "pipeline.json", "--manifest", "data/manifest.json", "--captions",
       "captions/store.jsonl", "--init-checkpoint", "stage1/checkpoint.ckpt", "--out-dir", "stage2"},
      {"decode", "--config", "pipeline.json", "--checkpoint", "stage2/checkpoint.ckpt", "--manifest",
       "data/manifest.json", "--out", "decoded/decodings.jsonl"},
      {"reconstruct", "--config", "pipeline.json", "--adapter", "mock-recon", "--decodings",
       "decoded/decodings.jsonl", "--baseline", "data/baseline/features.jsonl", "--fusion-weight", "0.5",
       "--out-dir", "recon"},
      {"evaluate", "--config", "pipeline.json", "--recon", "recon", "--gt", "data/gt_test", "--out",
       "eval/report.txt"},
  };
  const std::vector<std::string> outputs = {"data", "captions", "stage1", "stage2", "decoded", "recon", "eval"};
  bool all_ok = true;
  std::ostringstream sink, err;
  for (const auto& step : steps) {
    const int code = cli::dispatch(step, sink, err);
    all_ok = all_ok && code == 0;
    if (code != 0) out.notes.push_back("step '" + step[0] + "' exited " + std::to_string(code) + ": " + err.str());
  }
  out.check(all_ok, "gen-synthetic, enhance-captions, train 1, train 2, decode, reconstruct, evaluate exit 0");

  bool manifests = true;
  for (const auto& o : outputs) manifests = manifests && fs::exists(fs::path(o) / kRunManifestName);
  out.check(manifests, "every output directory holds a run manifest");

  bool replays = true;
  for (const auto& o : outputs) {
    std::ostringstream rout, rerr;
    const int code = cli::dispatch({"replay", (fs::path(o) / kRunManifestName).string()}, rout, rerr);
    if (code != 0) {
      replays = false;
      out.notes.push_back("replay of " + o + " exited " + std::to_string(code) + ": " + rerr.str());
    }
  }
  out.check(replays, "replaying every run manifest reproduces identical artifacts");
  fs::current_path(cwd);
  return out;
}

struct Criterion {
  int number;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "Reward oracle equivalence", 10, criterion1},
      {2, "REINFORCE gradient check", 5, criterion2},
      {3, "Stage-1 learnability", 120, criterion3},
      {4, "Stage-2 reward ascent", 180, criterion4},
      {5, "Architecture shape suite", 30, criterion5},
      {6, "Metric correctness", 30, criterion6},
      {7, "Fusion contract", 10, criterion7},
      {8, "Report fidelity", 5, criterion8},
      {9, "End-to-end synthetic pipeline", 300, criterion9},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome.check(false, std::string("threw: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    outcome.check(seconds < c.budget_seconds, "runtime " + fmt(seconds) + " s < " + fmt(c.budget_seconds) + " s");
    if (!outcome.pass) ++failures;
    std::cout << (outcome.pass ? "PASS" : "FAIL") << " criterion " << c.number << ": " << c.name << "\n";
    for (const auto& note : outcome.notes) std::cout << "    " << note << "\n";
    std::cout.flush();
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
