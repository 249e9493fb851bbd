#include "neurocap/config.hpp"

#include "neurocap/error.hpp"
#include "neurocap/text_util.hpp"

#include <json.hpp>

namespace neurocap {

using json = nlohmann::ordered_json;

namespace {

json train_shared_defaults() {
  const TrainConfig t;
  return {{"batch_size", t.batch_size},
          {"alpha", t.factors.alpha},
          {"beta", t.factors.beta},
          {"gamma", t.factors.gamma},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"weight_decay", t.weight_decay},
          {"grad_clip", t.grad_clip},
          {"temperature", t.temperature},
          {"baseline", t.baseline},
          {"samples_per_example", t.samples_per_example},
          {"image_reward_every", t.image_reward_every},
          {"freeze_adapters", t.freeze_adapters},
          {"fail_fast", t.fail_fast},
          {"checkpoint_every", t.checkpoint_every},
          {"workers", t.workers},
          {"seed", t.seed}};
}

json stage_defaults(int stage) {
  const TrainConfig t = TrainConfig::defaults_for_stage(stage);
  return {{"learning_rate", t.learning_rate}, {"epochs", t.epochs}};
}

const json& default_config() {
  static const json config = [] {
    const ModelConfig m;
    const CaptionSettings c;
    const RewardSettings r;
    const DecodeSettings d;
    const FusionConfig f;
    const ReconstructionConfig rc;
    const EvalConfig e;
    json train = train_shared_defaults();
    train["stage1"] = stage_defaults(1);
    train["stage2"] = stage_defaults(2);
    return json{
        {"schema_version", PipelineConfig::kSchemaVersion},
        {"model",
         {{"prefix_length", m.prefix_length},
          {"embed_dim", m.embed_dim},
          {"heads", m.heads},
          {"layers", m.layers},
          {"max_text_length", m.max_text_length},
          {"mlp_ratio", m.mlp_ratio},
          {"per_subject_constant", m.per_subject_constant},
          {"freeze_lm", m.freeze_lm},
          {"lm_backend", m.lm_backend},
          {"lm_layers", m.lm_layers},
          {"lm_heads", m.lm_heads},
          {"seed", m.seed}}},
        {"train", train},
        {"captions",
         {{"backend", c.backend},
          {"prompt", c.prompt},
          {"max_tokens", c.max_tokens},
          {"parallelism", c.parallelism},
          {"max_attempts", c.max_attempts},
          {"initial_backoff_ms", c.initial_backoff_ms}}},
        {"rewards",
         {{"stoplist", r.stoplist},
          {"embedding_dim", r.embedding_dim},
          {"embedding_seed", r.embedding_seed},
          {"reconstruction_size", r.reconstruction_size}}},
        {"decode",
         {{"strategy", d.strategy}, {"temperature", d.temperature}, {"beam_width", d.beam_width}, {"seed", d.seed}}},
        {"fusion", {{"weight", f.weight}, {"renormalize", f.renormalize}}},
        {"reconstruction", {{"adapter", rc.adapter}, {"size", rc.size}, {"seed", rc.seed}}},
        {"evaluation",
         {{"method", e.method}, {"resolution", e.resolution}, {"workers", e.workers}, {"extractor_seed", 0}}}};
  }();
  return config;
}

// The keys a node may contain. Stage sections accept every shared train key.
const json& schema_for(const std::string& path, const json& defaults_node) {
  static const json stage_schema = [] {
    json s = train_shared_defaults();
    s.update(stage_defaults(1));
    return s;
  }();
  if (path == "train.stage1" || path == "train.stage2") return stage_schema;
  return defaults_node;
}

void check_value(const json& value, const json& schema, const std::string& path) {
  const auto fail = [&](const std::string& what) {
    throw ConfigError("config key '" + path + "' " + what);
  };
  if (schema.is_object()) {
    if (!value.is_object()) fail("must be an object");
    for (const auto& [key, child] : value.items()) {
      const std::string child_path = path.empty() ? key : path + "." + key;
      if (!schema.contains(key)) throw ConfigError("unknown config key '" + child_path + "'");
      check_value(child, schema_for(child_path, schema.at(key)), child_path);
    }
    return;
  }
  if (schema.is_boolean() && !value.is_boolean()) fail("must be true or false");
  if (schema.is_string() && !value.is_string()) fail("must be a string");
  if (schema.is_number_integer() || schema.is_number_unsigned()) {
    if (!value.is_number_integer() && !value.is_number_unsigned()) fail("must be an integer");
    if (schema.is_number_unsigned() && value.is_number_integer() && value.get<long long>() < 0) {
      fail("must be >= 0");
    }
  }
  if (schema.is_number_float() && !value.is_number()) fail("must be a number");
}

json expanded_stage(const json& train, int stage) {
  json out;
  for (const auto& [key, value] : train.items()) {
    if (key != "stage1" && key != "stage2") out[key] = value;
  }
  out.update(train.at(stage == 1 ? "stage1" : "stage2"));
  return out;
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  return j.at(section).at(key).get<T>();
}

}  // namespace

DecodeStrategy DecodeSettings::to_strategy() const {
  if (strategy == "greedy") return GreedyDecoding{};
  if (strategy == "sample") return SampleDecoding{temperature, seed};
  if (strategy == "beam") return BeamDecoding{beam_width};
  throw ConfigError("decode.strategy must be greedy, sample or beam, got '" + strategy + "'");
}

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  c.resolved_ = default_config().dump();
  return c;
}

PipelineConfig PipelineConfig::parse(const std::string& text, const std::string& source) {
  json user;
  if (trim(text).empty()) {
    user = json::object();
  } else {
    try {
      user = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(source + ": not valid JSON: " + e.what());
    }
  }
  if (!user.is_object()) throw ConfigError(source + ": config must be a JSON object");
  if (user.contains("schema_version") && user.at("schema_version") != kSchemaVersion) {
    throw ConfigError(source + ": unsupported schema_version " + user.at("schema_version").dump() +
                      " (expected " + std::to_string(kSchemaVersion) + ")");
  }
  try {
    check_value(user, default_config(), "");
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  json merged = default_config();
  merged.merge_patch(user);
  PipelineConfig c;
  c.resolved_ = merged.dump();
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse(read_text_file(path), path.string());
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;
  }
  json patch = v;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  check_value(patch, default_config(), "");
  json merged = json::parse(resolved_);
  merged.merge_patch(patch);
  resolved_ = merged.dump();
  validate();
}

void PipelineConfig::validate() const {
  model().validate();
  train(1).validate();
  train(2).validate();
  fusion().validate();
  (void)decode().to_strategy();
  const auto c = captions();
  if (c.backend != "echo" && c.backend != "http") throw ConfigError("captions.backend must be echo or http");
  if (c.max_tokens < 1 || c.parallelism < 1 || c.max_attempts < 1 || c.initial_backoff_ms < 0) {
    throw ConfigError("captions: max_tokens, parallelism and max_attempts must be >= 1");
  }
  if (rewards().embedding_dim < 1) throw ConfigError("rewards.embedding_dim must be >= 1");
  if (reconstruction().size < 8) throw ConfigError("reconstruction.size must be >= 8");
  if (evaluation().resolution < 11) throw ConfigError("evaluation.resolution must be >= 11");
}

ModelConfig PipelineConfig::model() const {
  const json j = json::parse(resolved_);
  return ModelConfig::from_json(j.at("model").dump());
}

TrainConfig PipelineConfig::train(int stage) const {
  if (stage != 1 && stage != 2) throw ConfigError("train stage must be 1 or 2");
  json t = expanded_stage(json::parse(resolved_).at("train"), stage);
  t["stage"] = stage;
  return TrainConfig::from_json(t.dump());
}

CaptionSettings PipelineConfig::captions() const {
  const json j = json::parse(resolved_);
  CaptionSettings c;
  c.backend = get<std::string>(j, "captions", "backend");
  c.prompt = get<std::string>(j, "captions", "prompt");
  c.max_tokens = get<int>(j, "captions", "max_tokens");
  c.parallelism = get<int>(j, "captions", "parallelism");
  c.max_attempts = get<int>(j, "captions", "max_attempts");
  c.initial_backoff_ms = get<int>(j, "captions", "initial_backoff_ms");
  return c;
}

RewardSettings PipelineConfig::rewards() const {
  const json j = json::parse(resolved_);
  RewardSettings r;
  r.stoplist = get<std::string>(j, "rewards", "stoplist");
  r.embedding_dim = get<int>(j, "rewards", "embedding_dim");
  r.embedding_seed = get<std::uint64_t>(j, "rewards", "embedding_seed");
  r.reconstruction_size = get<int>(j, "rewards", "reconstruction_size");
  return r;
}

DecodeSettings PipelineConfig::decode() const {
  const json j = json::parse(resolved_);
  DecodeSettings d;
  d.strategy = get<std::string>(j, "decode", "strategy");
  d.temperature = get<double>(j, "decode", "temperature");
  d.beam_width = get<int>(j, "decode", "beam_width");
  d.seed = get<std::uint64_t>(j, "decode", "seed");
  return d;
}

FusionConfig PipelineConfig::fusion() const {
  const json j = json::parse(resolved_);
  return FusionConfig{get<double>(j, "fusion", "weight"), get<bool>(j, "fusion", "renormalize")};
}

ReconstructionConfig PipelineConfig::reconstruction() const {
  const json j = json::parse(resolved_);
  return ReconstructionConfig{get<std::string>(j, "reconstruction", "adapter"), get<int>(j, "reconstruction", "size"),
                              get<std::uint64_t>(j, "reconstruction", "seed")};
}

EvalConfig PipelineConfig::evaluation() const {
  const json j = json::parse(resolved_);
  EvalConfig e;
  e.method = get<std::string>(j, "evaluation", "method");
  e.resolution = get<int>(j, "evaluation", "resolution");
  e.workers = get<int>(j, "evaluation", "workers");
  return e;
}

std::uint64_t PipelineConfig::extractor_seed() const {
  return get<std::uint64_t>(json::parse(resolved_), "evaluation", "extractor_seed");
}

std::string PipelineConfig::to_json() const {
  json j = json::parse(resolved_);
  json& train = j.at("train");
  const json s1 = expanded_stage(train, 1), s2 = expanded_stage(train, 2);
  train["stage1"] = s1;
  train["stage2"] = s2;
  return j.dump(2);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  const auto walk = [&out](const auto& self, const json& node, const std::string& path) -> void {
    for (const auto& [key, value] : node.items()) {
      const std::string p = path.empty() ? key : path + "." + key;
      if (value.is_object()) self(self, value, p);
      else out.push_back(p);
    }
  };
  walk(walk, default_config(), "");
  return out;
}

}  // namespace neurocap
