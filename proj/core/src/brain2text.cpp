#include "neurocap/brain2text.hpp"

#include "neurocap/error.hpp"
#include "neurocap/text_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace neurocap {

using json = nlohmann::json;

void ModelConfig::validate() const {
  if (prefix_length <= 0) throw ConfigError("model.prefix_length must be positive");
  if (embed_dim <= 0) throw ConfigError("model.embed_dim must be positive");
  if (heads <= 0) throw ConfigError("model.heads must be positive");
  if (layers < 0) throw ConfigError("model.layers must be >= 0");
  if (embed_dim % heads != 0) {
    throw ConfigError("model.embed_dim (" + std::to_string(embed_dim) + ") must be divisible by model.heads (" +
                      std::to_string(heads) + ")");
  }
  if (max_text_length < 1) throw ConfigError("model.max_text_length must be >= 1");
  if (mlp_ratio <= 0) throw ConfigError("model.mlp_ratio must be positive");
  if (lm_heads <= 0 || embed_dim % lm_heads != 0) {
    throw ConfigError("model.lm_heads must divide model.embed_dim");
  }
  if (lm_layers < 0) throw ConfigError("model.lm_layers must be >= 0");
}

std::string ModelConfig::to_json() const {
  const json j = {{"prefix_length", prefix_length},
                  {"embed_dim", embed_dim},
                  {"heads", heads},
                  {"layers", layers},
                  {"max_text_length", max_text_length},
                  {"mlp_ratio", mlp_ratio},
                  {"per_subject_constant", per_subject_constant},
                  {"freeze_lm", freeze_lm},
                  {"lm_backend", lm_backend},
                  {"lm_layers", lm_layers},
                  {"lm_heads", lm_heads},
                  {"seed", seed}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelConfig c;
    c.prefix_length = j.at("prefix_length").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.layers = j.at("layers").get<int>();
    c.max_text_length = j.at("max_text_length").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.per_subject_constant = j.at("per_subject_constant").get<bool>();
    c.freeze_lm = j.at("freeze_lm").get<bool>();
    c.lm_backend = j.at("lm_backend").get<std::string>();
    c.lm_layers = j.at("lm_layers").get<int>();
    c.lm_heads = j.at("lm_heads").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model config: ") + e.what());
  }
}

PrefixEmbedding::PrefixEmbedding(ag::Matrix values) : values_(std::move(values)) {
  if (!values_.allFinite()) throw DataError("prefix embedding has non-finite entries");
}

namespace {

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

TokenId argmax(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<TokenId>(best);
}

}  // namespace

TokenSequence decode_text(LanguageModelBackend& backend, const PrefixEmbedding& prefix,
                          const DecodeStrategy& strategy, const DecodeOptions& options) {
  if (options.max_length < 1) throw ConfigError("decode: max_length must be >= 1");
  if (prefix.cols() != backend.embed_dim()) {
    throw DataError("decode: prefix width " + std::to_string(prefix.cols()) + " does not match backend width " +
                    std::to_string(backend.embed_dim()));
  }
  TokenSequence seq;

  if (const auto* beam = std::get_if<BeamDecoding>(&strategy)) {
    if (beam->width < 1) throw ConfigError("decode: beam width must be >= 1");
    struct Hypothesis {
      std::vector<TokenId> tokens;
      std::vector<double> log_probs;
      double score = 0.0;
      bool finished = false;
    };
    std::vector<Hypothesis> beams(1);
    for (int step = 0; step < options.max_length; ++step) {
      std::vector<Hypothesis> candidates;
      for (const auto& h : beams) {
        if (h.finished) {
          candidates.push_back(h);
          continue;
        }
        const Eigen::VectorXd lp = log_softmax(backend.next_logits(prefix.values(), h.tokens));
        for (Eigen::Index t = 0; t < lp.size(); ++t) {
          if (!std::isfinite(lp(t))) continue;
          Hypothesis next = h;
          next.tokens.push_back(static_cast<TokenId>(t));
          next.log_probs.push_back(lp(t));
          next.score += lp(t);
          next.finished = t == Tokenizer::kEos;
          candidates.push_back(std::move(next));
        }
      }
      // Stable sort keeps lower token ids first among equal scores.
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
      candidates.resize(std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(beam->width)));
      beams = std::move(candidates);
      if (std::all_of(beams.begin(), beams.end(), [](const Hypothesis& h) { return h.finished; })) break;
    }
    seq.tokens = std::move(beams.front().tokens);
    seq.log_probs = std::move(beams.front().log_probs);
  } else {
    const auto* sample = std::get_if<SampleDecoding>(&strategy);
    if (sample && !(sample->temperature > 0.0)) throw ConfigError("decode: temperature must be > 0");
    std::mt19937_64 rng(sample ? sample->seed : 0);
    for (int step = 0; step < options.max_length; ++step) {
      Eigen::VectorXd logits = backend.next_logits(prefix.values(), seq.tokens);
      if (sample) logits /= sample->temperature;
      const Eigen::VectorXd lp = log_softmax(logits);
      TokenId next = 0;
      if (sample) {
        const double u = uniform01(rng);
        double cum = 0.0;
        next = static_cast<TokenId>(lp.size() - 1);
        for (Eigen::Index t = 0; t < lp.size(); ++t) {
          cum += std::exp(lp(t));
          if (u < cum) {
            next = static_cast<TokenId>(t);
            break;
          }
        }
        // Never land on a zero-probability token through rounding in the tail.
        while (!std::isfinite(lp(next)) || std::exp(lp(next)) == 0.0) --next;
      } else {
        next = argmax(lp);
      }
      seq.tokens.push_back(next);
      seq.log_probs.push_back(lp(next));
      if (options.record_distributions) seq.step_log_distributions.push_back(lp);
      if (next == Tokenizer::kEos) break;
    }
  }
  seq.text = backend.tokenizer().decode(seq.tokens);
  return seq;
}

std::unique_ptr<LanguageModelBackend> make_language_model(const ModelConfig& config, Tokenizer tokenizer) {
  if (config.lm_backend != "mock-gpt") {
    throw ConfigError("unknown language model backend '" + config.lm_backend + "' (available: mock-gpt)");
  }
  MockGptConfig lm;
  lm.layers = config.lm_layers;
  lm.heads = config.lm_heads;
  lm.max_positions = 2 * config.prefix_length + config.max_text_length + 1;
  lm.seed = config.seed;
  return std::make_unique<MockGptBackend>(std::move(tokenizer), config.embed_dim, lm);
}

BrainToTextModel::BrainToTextModel(ModelConfig config, std::unique_ptr<LanguageModelBackend> lm)
    : config_(std::move(config)), lm_(std::move(lm)) {
  config_.validate();
  if (!lm_) throw ConfigError("brain2text: no language model backend");
  if (lm_->embed_dim() != config_.embed_dim) {
    throw ConfigError("brain2text: embed_dim " + std::to_string(config_.embed_dim) +
                      " does not match the language model width " + std::to_string(lm_->embed_dim()));
  }
  std::mt19937_64 rng(config_.seed ^ 0x7072656669780aULL);
  const Eigen::Index l = config_.prefix_length, d = config_.embed_dim;
  shared_constant_ = ag::Parameter(nn::random_normal(l, d, 0.1, rng));
  positions_ = ag::Parameter(nn::random_normal(2 * l, d, 0.02, rng));
  for (int i = 0; i < config_.layers; ++i) mapper_.emplace_back(d, config_.heads, config_.mlp_ratio, rng);
}

BrainToTextModel::BrainToTextModel(ModelConfig config, Tokenizer tokenizer)
    : BrainToTextModel(config, make_language_model(config, std::move(tokenizer))) {}

void BrainToTextModel::register_subject(const SubjectConfig& subject) {
  if (subject.voxel_count == 0) throw ConfigError("subject '" + subject.subject_id + "' has no voxels");
  if (adapters_.count(subject.subject_id)) {
    throw ConfigError("subject '" + subject.subject_id + "' is already registered");
  }
  // Seeded from the subject id so registration order does not matter.
  std::mt19937_64 rng(config_.seed ^ fnv1a64(subject.subject_id));
  const Eigen::Index l = config_.prefix_length, d = config_.embed_dim;
  adapters_.emplace(subject.subject_id,
                    nn::Linear(static_cast<Eigen::Index>(subject.voxel_count), l * d, rng));
  if (config_.per_subject_constant) {
    subject_constants_.emplace(subject.subject_id, ag::Parameter(nn::random_normal(l, d, 0.1, rng)));
  }
  subjects_.push_back(subject);
}

ag::Var BrainToTextModel::encode(const std::string& subject_id, std::span<const float> voxels) const {
  auto it = adapters_.find(subject_id);
  if (it == adapters_.end()) throw DataError("subject '" + subject_id + "' is not registered");
  const nn::Linear& adapter = it->second;
  if (static_cast<Eigen::Index>(voxels.size()) != adapter.in_features()) {
    throw DataError("subject '" + subject_id + "' expects " + std::to_string(adapter.in_features()) +
                    " voxels, got " + std::to_string(voxels.size()));
  }
  ag::Matrix input(1, adapter.in_features());
  for (std::size_t i = 0; i < voxels.size(); ++i) input(0, static_cast<Eigen::Index>(i)) = voxels[i];

  const Eigen::Index l = config_.prefix_length, d = config_.embed_dim;
  const ag::Var z = ag::reshape(adapter(ag::constant(std::move(input))), l, d);
  const ag::Var constant =
      config_.per_subject_constant ? subject_constants_.at(subject_id).var() : shared_constant_.var();
  const std::vector<ag::Var> parts = {z, constant};
  ag::Var x = ag::add(ag::concat_rows(parts), positions_.var());
  for (const auto& block : mapper_) x = block(x, /*causal=*/false);
  return x;
}

PrefixEmbedding BrainToTextModel::encode_fmri(const std::string& subject_id, std::span<const float> voxels) const {
  return PrefixEmbedding(encode(subject_id, voxels).value());
}

nn::ParameterList BrainToTextModel::parameters() {
  nn::ParameterList out;
  for (auto& [id, adapter] : adapters_) adapter.collect("adapter." + id, out);
  if (config_.per_subject_constant) {
    for (auto& [id, p] : subject_constants_) out.push_back({"prefix.constant." + id, &p});
  } else {
    out.push_back({"prefix.constant", &shared_constant_});
  }
  out.push_back({"prefix.position", &positions_});
  for (std::size_t i = 0; i < mapper_.size(); ++i) mapper_[i].collect("mapper.block" + std::to_string(i), out);
  for (auto& p : lm_->parameters()) out.push_back(p);
  return out;
}

nn::ParameterList BrainToTextModel::trainable_parameters(bool freeze_adapters) {
  nn::ParameterList out;
  for (auto& p : parameters()) {
    if (config_.freeze_lm && p.name.rfind("lm.", 0) == 0) continue;
    if (freeze_adapters && p.name.rfind("adapter.", 0) == 0) continue;
    out.push_back(p);
  }
  return out;
}

Checkpoint BrainToTextModel::to_checkpoint() {
  Checkpoint ckpt;
  ckpt.put_bytes("model.config", config_.to_json());
  ckpt.put_bytes("model.tokenizer", lm_->tokenizer().serialize());
  json subjects = json::array();
  for (const auto& s : subjects_) {
    subjects.push_back({{"subject_id", s.subject_id}, {"voxel_count", s.voxel_count}, {"mask_name", s.mask_name}});
  }
  ckpt.put_bytes("model.subjects", subjects.dump());
  for (const auto& p : parameters()) ckpt.put_tensor("param." + p.name, p.param->value());
  return ckpt;
}

BrainToTextModel BrainToTextModel::from_checkpoint(const Checkpoint& ckpt) {
  const ModelConfig config = ModelConfig::from_json(ckpt.bytes("model.config"));
  BrainToTextModel model(config, Tokenizer::deserialize(ckpt.bytes("model.tokenizer")));
  try {
    for (const auto& s : json::parse(ckpt.bytes("model.subjects"))) {
      model.register_subject(SubjectConfig{s.at("subject_id").get<std::string>(),
                                           s.at("voxel_count").get<std::size_t>(),
                                           s.at("mask_name").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: malformed subject list: ") + e.what());
  }
  std::set<std::string> expected;
  for (auto& p : model.parameters()) {
    const std::string key = "param." + p.name;
    expected.insert(key);
    if (!ckpt.has(key)) throw DataError("checkpoint is missing parameter '" + p.name + "'");
    const ag::Matrix& stored = ckpt.tensor(key);
    if (stored.rows() != p.param->value().rows() || stored.cols() != p.param->value().cols()) {
      throw DataError("checkpoint parameter '" + p.name + "' has the wrong shape");
    }
    p.param->value() = stored;
  }
  for (const auto& name : ckpt.names()) {
    if (name.rfind("param.", 0) == 0 && !expected.count(name)) {
      throw DataError("checkpoint has unexpected parameter '" + name.substr(6) + "'");
    }
  }
  return model;
}

void BrainToTextModel::save_checkpoint(const std::filesystem::path& path) { to_checkpoint().save(path); }

BrainToTextModel BrainToTextModel::load_checkpoint(const std::filesystem::path& path) {
  return from_checkpoint(Checkpoint::load(path));
}

void write_decodings(const std::vector<DecodingRecord>& records, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : records) {
    json j = {{"subject_id", r.subject_id},
              {"stimulus_id", r.stimulus_id},
              {"text", r.text},
              {"checkpoint_id", r.checkpoint_id}};
    out += j.dump() + "\n";
  }
  write_text_file_atomic(path, out);
}

std::vector<DecodingRecord> read_decodings(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("decodings file not found: " + path.string());
  std::vector<DecodingRecord> out;
  std::istringstream in(read_text_file(path));
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("subject_id").get<std::string>(), j.at("stimulus_id").get<std::string>(),
                     j.at("text").get<std::string>(), j.value("checkpoint_id", std::string())});
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(number) + ": malformed decoding record: " + e.what());
    }
  }
  return out;
}

std::vector<DecodingRecord> decode_test_set(BrainToTextModel& model, std::span<const FmriSample> test_samples,
                                           const std::string& subject_id, const DecodeStrategy& strategy,
                                           const std::string& checkpoint_id) {
  if (!model.has_subject(subject_id)) throw DataError("unknown subject '" + subject_id + "'");
  DecodeOptions options;
  options.max_length = model.config().max_text_length;
  std::vector<DecodingRecord> out;
  for (const auto& sample : test_samples) {
    if (sample.subject_id != subject_id) continue;
    const PrefixEmbedding prefix = model.encode_fmri(subject_id, sample.voxels);
    const TokenSequence seq = decode_text(model.language_model(), prefix, strategy, options);
    out.push_back({subject_id, sample.stimulus_id, seq.text, checkpoint_id});
  }
  return out;
}

}  // namespace neurocap
