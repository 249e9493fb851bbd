#include "neurocap/training.hpp"

#include "neurocap/error.hpp"
#include "neurocap/parallel.hpp"
#include "neurocap/text_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>

namespace neurocap {

namespace fs = std::filesystem;
using json = nlohmann::json;

TrainConfig TrainConfig::defaults_for_stage(int stage) {
  TrainConfig c;
  c.stage = stage;
  if (stage == 2) {
    c.learning_rate = 2e-6;
    c.epochs = 10;
  }
  return c;
}

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("train.stage must be 1 or 2");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1, got " + std::to_string(epochs));
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  factors.validate();
  if (!(temperature > 0.0)) throw ConfigError("train.temperature must be > 0");
  if (baseline != "none" && baseline != "batch-mean") {
    throw ConfigError("train.baseline must be \"none\" or \"batch-mean\", got \"" + baseline + "\"");
  }
  if (samples_per_example < 1) throw ConfigError("train.samples_per_example must be >= 1");
  if (image_reward_every < 1) throw ConfigError("train.image_reward_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (workers < 1) throw ConfigError("train.workers must be >= 1");
  if (!(weight_decay >= 0.0) || !(eps > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: invalid optimizer hyperparameters");
  }
}

AdamWConfig TrainConfig::optimizer() const {
  return AdamWConfig{learning_rate, beta1, beta2, eps, weight_decay};
}

std::string TrainConfig::to_json() const {
  const json j = {{"stage", stage},
                  {"learning_rate", learning_rate},
                  {"epochs", epochs},
                  {"batch_size", batch_size},
                  {"alpha", factors.alpha},
                  {"beta", factors.beta},
                  {"gamma", factors.gamma},
                  {"beta1", beta1},
                  {"beta2", beta2},
                  {"eps", eps},
                  {"weight_decay", weight_decay},
                  {"grad_clip", grad_clip},
                  {"temperature", temperature},
                  {"baseline", baseline},
                  {"samples_per_example", samples_per_example},
                  {"image_reward_every", image_reward_every},
                  {"freeze_adapters", freeze_adapters},
                  {"fail_fast", fail_fast},
                  {"checkpoint_every", checkpoint_every},
                  {"workers", workers},
                  {"seed", seed}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    TrainConfig c;
    c.stage = j.at("stage").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.factors.alpha = j.at("alpha").get<double>();
    c.factors.beta = j.at("beta").get<double>();
    c.factors.gamma = j.at("gamma").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.temperature = j.at("temperature").get<double>();
    c.baseline = j.at("baseline").get<std::string>();
    c.samples_per_example = j.at("samples_per_example").get<int>();
    c.image_reward_every = j.at("image_reward_every").get<int>();
    c.freeze_adapters = j.at("freeze_adapters").get<bool>();
    c.fail_fast = j.at("fail_fast").get<bool>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.workers = j.at("workers").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed train config: ") + e.what());
  }
}

std::vector<TokenId> caption_targets(const Tokenizer& tokenizer, std::string_view caption, int max_length) {
  std::vector<TokenId> ids = tokenizer.encode(caption);
  const std::size_t keep = static_cast<std::size_t>(std::max(0, max_length - 1));
  if (ids.size() > keep) ids.resize(keep);
  ids.push_back(Tokenizer::kEos);
  return ids;
}

SequenceNll sequence_nll(LanguageModelBackend& backend, const ag::Var& prefix, std::span<const TokenId> targets) {
  std::size_t n = 0;
  while (n < targets.size() && targets[n] != Tokenizer::kPad) ++n;
  for (std::size_t i = n; i < targets.size(); ++i) {
    if (targets[i] != Tokenizer::kPad) throw DataError("ce_loss: padding must only trail the target sequence");
  }
  if (n == 0) return {ag::scalar_constant(0.0), 0};
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= backend.vocab_size()) {
      throw DataError("ce_loss: target token id " + std::to_string(targets[i]) + " is out of vocabulary");
    }
  }
  const ag::Var logits = backend.logits(prefix, targets.subspan(0, n - 1));
  const ag::Var picked = ag::pick(ag::log_softmax_rows(logits), targets.subspan(0, n));
  return {ag::scale(ag::sum(picked), -1.0), n};
}

ag::Var ce_loss(LanguageModelBackend& backend, const ag::Var& prefix, std::span<const TokenId> targets) {
  const SequenceNll nll = sequence_nll(backend, prefix, targets);
  if (nll.count == 0) throw DataError("ce_loss: empty target sequence");
  return ag::scale(nll.total, 1.0 / static_cast<double>(nll.count));
}

ag::Var ce_loss_batch(LanguageModelBackend& backend, std::span<const ag::Var> prefixes,
                      std::span<const std::vector<TokenId>> padded_targets) {
  if (prefixes.size() != padded_targets.size() || prefixes.empty()) {
    throw DataError("ce_loss_batch: need one target sequence per prefix");
  }
  ag::Var total;
  std::size_t count = 0;
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const SequenceNll nll = sequence_nll(backend, prefixes[i], padded_targets[i]);
    if (nll.count == 0) continue;
    total = total.valid() ? ag::add(total, nll.total) : nll.total;
    count += nll.count;
  }
  if (count == 0) throw DataError("ce_loss_batch: no target tokens");
  return ag::scale(total, 1.0 / static_cast<double>(count));
}

ag::Var sequence_log_probs(LanguageModelBackend& backend, const ag::Var& prefix, std::span<const TokenId> tokens,
                           double temperature) {
  if (tokens.empty()) throw DataError("sequence_log_probs: empty sequence");
  if (!(temperature > 0.0)) throw ConfigError("sequence_log_probs: temperature must be > 0");
  ag::Var logits = backend.logits(prefix, tokens.subspan(0, tokens.size() - 1));
  if (temperature != 1.0) logits = ag::scale(logits, 1.0 / temperature);
  return ag::pick(ag::log_softmax_rows(logits), tokens);
}

ag::Var reinforce_loss(const ag::Var& token_log_probs, double reward, double baseline) {
  if (!std::isfinite(reward) || !std::isfinite(baseline)) throw DataError("reinforce_loss: reward must be finite");
  return ag::scale(ag::sum(token_log_probs), -(reward - baseline));
}

double reinforce_loss(const TokenSequence& sequence, double reward, double baseline) {
  if (sequence.log_probs.size() != sequence.tokens.size() || sequence.tokens.empty()) {
    throw DataError("reinforce_loss: sequence has no recorded log-probabilities");
  }
  if (!std::isfinite(reward) || !std::isfinite(baseline)) throw DataError("reinforce_loss: reward must be finite");
  double s = 0.0;
  for (double lp : sequence.log_probs) s += lp;
  return -(reward - baseline) * s;
}

std::map<std::string, std::string> enhanced_captions(const std::map<std::string, CaptionRecord>& records) {
  std::map<std::string, std::string> out;
  for (const auto& [id, r] : records) {
    if (r.status == "enhanced") out.emplace(id, r.enhanced_caption);
  }
  return out;
}

std::string epoch_record_to_json(const EpochRecord& r, int stage) {
  json j = {{"epoch", r.epoch}, {"ce_loss", r.ce_loss}};
  if (stage == 2) {
    j["total_loss"] = r.total_loss;
    j["object_accuracy"] = r.object_accuracy;
    j["text_image"] = r.text_image;
    j["image_image"] = r.image_image;
    j["rewarded"] = r.rewarded;
    j["skipped"] = r.skipped;
  }
  return j.dump();
}

std::string batch_record_to_json(const BatchRecord& r) {
  const json j = {{"epoch", r.epoch}, {"batch", r.batch}, {"ce", r.ce},
                  {"l1", r.l1},       {"l2", r.l2},       {"l3", r.l3},
                  {"total", r.total}, {"alpha", r.factors.alpha}, {"beta", r.factors.beta},
                  {"gamma", r.factors.gamma}};
  return j.dump();
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix(splitmix(splitmix(seed ^ splitmix(stream)) ^ a) ^ b);
}

// Fisher-Yates with an explicit generator so the order is the same on every platform.
std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t state = seed;
  for (std::size_t i = n; i > 1; --i) {
    state = splitmix(state);
    const std::size_t j = static_cast<std::size_t>(state % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::string sample_key(const FmriSample& s) {
  return s.subject_id + "/" + s.stimulus_id + "/" + std::to_string(s.trial_index);
}

struct TrainState {
  int epochs_done = 0;
  long global_batch = 0;
  std::vector<EpochRecord> epochs;
  std::vector<BatchRecord> batches;
  std::map<std::string, double> image_reward_cache;
  std::vector<std::string> trace;
};

json epoch_to_json(const EpochRecord& r) {
  return {r.epoch, r.ce_loss, r.total_loss, r.object_accuracy, r.text_image, r.image_image, r.rewarded, r.skipped};
}

EpochRecord epoch_from_json(const json& j) {
  return EpochRecord{j[0].get<int>(),    j[1].get<double>(), j[2].get<double>(), j[3].get<double>(),
                     j[4].get<double>(), j[5].get<double>(), j[6].get<int>(),    j[7].get<int>()};
}

std::string state_to_json(const TrainState& s, int stage) {
  json j = {{"stage", stage}, {"epochs_done", s.epochs_done}, {"global_batch", s.global_batch}};
  j["epochs"] = json::array();
  for (const auto& e : s.epochs) j["epochs"].push_back(epoch_to_json(e));
  j["batches"] = json::array();
  for (const auto& b : s.batches) {
    j["batches"].push_back({b.epoch, b.batch, b.ce, b.l1, b.l2, b.l3, b.total, b.factors.alpha, b.factors.beta,
                            b.factors.gamma});
  }
  j["image_reward_cache"] = s.image_reward_cache;
  j["trace"] = s.trace;
  return j.dump();
}

TrainState state_from_json(const std::string& text, int stage) {
  try {
    const json j = json::parse(text);
    if (j.at("stage").get<int>() != stage) {
      throw ConfigError("resume checkpoint belongs to stage " + std::to_string(j.at("stage").get<int>()) +
                        ", not stage " + std::to_string(stage));
    }
    TrainState s;
    s.epochs_done = j.at("epochs_done").get<int>();
    s.global_batch = j.at("global_batch").get<long>();
    for (const auto& e : j.at("epochs")) s.epochs.push_back(epoch_from_json(e));
    for (const auto& b : j.at("batches")) {
      s.batches.push_back(BatchRecord{b[0].get<int>(), b[1].get<long>(), b[2].get<double>(), b[3].get<double>(),
                                      b[4].get<double>(), b[5].get<double>(), b[6].get<double>(),
                                      RewardFactors{b[7].get<double>(), b[8].get<double>(), b[9].get<double>()}});
    }
    s.image_reward_cache = j.at("image_reward_cache").get<std::map<std::string, double>>();
    s.trace = j.at("trace").get<std::vector<std::string>>();
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed training state in checkpoint: ") + e.what());
  }
}

void write_logs(const fs::path& dir, const TrainState& s, int stage) {
  std::string epochs;
  for (const auto& e : s.epochs) epochs += epoch_record_to_json(e, stage) + "\n";
  write_text_file_atomic(dir / "loss_log.jsonl", epochs);
  if (stage == 2) {
    std::string batches;
    for (const auto& b : s.batches) batches += batch_record_to_json(b) + "\n";
    write_text_file_atomic(dir / "batch_log.jsonl", batches);
    std::string trace;
    for (const auto& t : s.trace) trace += t + "\n";
    write_text_file_atomic(dir / "reward_trace.jsonl", trace);
  }
}

Checkpoint make_checkpoint(BrainToTextModel& model, const AdamW& optimizer, const TrainState& state,
                           const TrainConfig& config) {
  Checkpoint ckpt = model.to_checkpoint();
  optimizer.save_state(ckpt);
  ckpt.put_bytes("train.state", state_to_json(state, config.stage));
  ckpt.put_bytes("train.config", config.to_json());
  return ckpt;
}

struct Sampled {
  TokenSequence sequence;
  RawRewards rewards;
  bool ok = false;
  std::string error;
};

TrainResult run_training(BrainToTextModel& model, std::span<const FmriSample> train,
                         const std::map<std::string, std::string>& captions, RewardSource* rewards,
                         const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train.empty()) throw DataError("training set is empty");

  std::set<std::string> missing;
  for (const auto& s : train) {
    if (!captions.count(s.stimulus_id)) missing.insert(s.stimulus_id);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw DataError("no enhanced caption for " + std::to_string(missing.size()) + " train stimuli: " + list);
  }

  LanguageModelBackend& lm = model.language_model();
  const int max_len = model.config().max_text_length;
  std::vector<std::vector<TokenId>> targets;
  targets.reserve(train.size());
  for (const auto& s : train) targets.push_back(caption_targets(lm.tokenizer(), captions.at(s.stimulus_id), max_len));

  const nn::ParameterList params = model.trainable_parameters(config.freeze_adapters);
  AdamW optimizer(params, config.optimizer());

  TrainState state;
  if (options.resume) {
    if (!options.resume->has("train.state")) throw DataError("resume checkpoint has no training state");
    state = state_from_json(options.resume->bytes("train.state"), config.stage);
    optimizer.load_state(*options.resume);
  }
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);

  const RewardFactors& f = config.factors;
  const std::size_t n = train.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const int m = config.samples_per_example;
  int epochs_this_call = 0;

  for (int epoch = state.epochs_done + 1; epoch <= config.epochs; ++epoch) {
    if (options.stop_after_epochs && epochs_this_call >= *options.stop_after_epochs) break;
    const auto order = shuffled(n, derive_seed(config.seed, 1, static_cast<std::uint64_t>(epoch)));
    EpochRecord rec;
    rec.epoch = epoch;
    double ce_sum = 0.0, total_sum = 0.0, r1_sum = 0.0, r2_sum = 0.0, r3_sum = 0.0;
    long batches_in_epoch = 0;

    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      const long g = state.global_batch;
      optimizer.zero_grad();

      std::vector<ag::Var> prefixes;
      std::vector<std::vector<TokenId>> batch_targets;
      for (std::size_t k = start; k < end; ++k) {
        const FmriSample& s = train[order[k]];
        prefixes.push_back(model.encode(s.subject_id, s.voxels));
        batch_targets.push_back(targets[order[k]]);
      }
      const ag::Var ce = ce_loss_batch(lm, prefixes, batch_targets);
      ag::Var total = ce;
      BatchRecord br;
      br.epoch = epoch;
      br.batch = g;
      br.factors = f;

      if (rewards) {
        const std::size_t count = (end - start) * static_cast<std::size_t>(m);
        std::vector<Sampled> sampled(count);
        const bool refresh = g % config.image_reward_every == 0;
        auto draw = [&](std::size_t idx) {
          const std::size_t local = idx / static_cast<std::size_t>(m);
          sampled[idx].sequence = decode_text(
              lm, PrefixEmbedding(prefixes[local].value()),
              SampleDecoding{config.temperature, derive_seed(config.seed, 2, static_cast<std::uint64_t>(g), idx)},
              DecodeOptions{max_len, false});
        };
        const std::size_t workers = lm.concurrency_safe() ? static_cast<std::size_t>(config.workers) : 1;
        parallel_for(count, workers, draw);

        auto score = [&](std::size_t idx) {
          const FmriSample& s = train[order[start + idx / static_cast<std::size_t>(m)]];
          RewardRequest req;
          req.subject_id = s.subject_id;
          req.stimulus_id = s.stimulus_id;
          req.reference_text = captions.at(s.stimulus_id);
          req.sampled_text = sampled[idx].sequence.text;
          req.sampled_tokens = sampled[idx].sequence.tokens;
          req.want_image_image = f.gamma > 0.0 && (refresh || !state.image_reward_cache.count(sample_key(s)));
          try {
            sampled[idx].rewards = rewards->score(req);
            sampled[idx].ok = true;
          } catch (const Error& e) {
            if (config.fail_fast || e.kind() == ErrorKind::kConfig || e.kind() == ErrorKind::kInternal) throw;
            sampled[idx].error = e.what();
          }
        };
        parallel_for(count, rewards->concurrency_safe() ? static_cast<std::size_t>(config.workers) : 1, score);

        // Gather in sample order: cache updates, baselines, trace.
        std::vector<std::array<double, 3>> r(count, {0.0, 0.0, 0.0});
        std::array<double, 3> baseline = {0.0, 0.0, 0.0};
        int ok = 0;
        for (std::size_t idx = 0; idx < count; ++idx) {
          const FmriSample& s = train[order[start + idx / static_cast<std::size_t>(m)]];
          const std::string key = sample_key(s);
          RewardTraceRecord trace{epoch, g, s.subject_id, s.stimulus_id, {}};
          if (!sampled[idx].ok) {
            ++rec.skipped;
            json j = json::parse(reward_trace_to_json(trace));
            j["error"] = sampled[idx].error;
            state.trace.push_back(j.dump());
            continue;
          }
          const RawRewards& raw = sampled[idx].rewards;
          double ii = 0.0;
          bool ii_available = true;
          if (raw.image_image) {
            ii = *raw.image_image;
            state.image_reward_cache[key] = ii;
          } else if (auto it = state.image_reward_cache.find(key); it != state.image_reward_cache.end()) {
            ii = it->second;
          } else {
            ii_available = false;
          }
          trace.rewards = composite_reward(raw.object_accuracy, raw.text_image, ii, f, ii_available);
          state.trace.push_back(reward_trace_to_json(trace));
          r[idx] = {raw.object_accuracy, raw.text_image, ii};
          for (int k = 0; k < 3; ++k) baseline[k] += r[idx][k];
          ++ok;
          ++rec.rewarded;
          r1_sum += raw.object_accuracy;
          r2_sum += raw.text_image;
          r3_sum += ii;
        }
        if (config.baseline == "batch-mean" && ok > 0) {
          for (double& b : baseline) b /= ok;
        } else {
          baseline = {0.0, 0.0, 0.0};
        }

        const std::array<double, 3> factor = {f.alpha, f.beta, f.gamma};
        const bool any_factor = factor[0] > 0.0 || factor[1] > 0.0 || factor[2] > 0.0;
        std::array<ag::Var, 3> terms;
        std::array<double, 3> values = {0.0, 0.0, 0.0};
        if (ok > 0) {
          const double inv = 1.0 / ok;
          for (std::size_t idx = 0; idx < count; ++idx) {
            if (!sampled[idx].ok) continue;
            const auto& seq = sampled[idx].sequence;
            ag::Var lp;
            if (any_factor) {
              lp = sequence_log_probs(lm, prefixes[idx / static_cast<std::size_t>(m)], seq.tokens,
                                      config.temperature);
            }
            for (int k = 0; k < 3; ++k) {
              if (factor[k] > 0.0) {
                const ag::Var term = ag::scale(reinforce_loss(lp, r[idx][k], baseline[k]), inv);
                terms[k] = terms[k].valid() ? ag::add(terms[k], term) : term;
              } else {
                values[k] += inv * reinforce_loss(seq, r[idx][k], baseline[k]);
              }
            }
          }
          for (int k = 0; k < 3; ++k) {
            if (!terms[k].valid()) continue;
            values[k] = terms[k].scalar();
            total = ag::add(total, ag::scale(terms[k], factor[k]));
          }
        }
        br.l1 = values[0];
        br.l2 = values[1];
        br.l3 = values[2];
      }

      ag::backward(total);
      clip_grad_norm(params, config.grad_clip);
      optimizer.step();

      br.ce = ce.scalar();
      br.total = total.scalar();
      if (rewards) state.batches.push_back(br);
      ce_sum += br.ce;
      total_sum += br.total;
      ++batches_in_epoch;
      ++state.global_batch;
    }

    rec.ce_loss = ce_sum / static_cast<double>(batches_in_epoch);
    rec.total_loss = total_sum / static_cast<double>(batches_in_epoch);
    if (rec.rewarded > 0) {
      rec.object_accuracy = r1_sum / rec.rewarded;
      rec.text_image = r2_sum / rec.rewarded;
      rec.image_image = r3_sum / rec.rewarded;
    }
    state.epochs.push_back(rec);
    state.epochs_done = epoch;
    ++epochs_this_call;

    if (!options.out_dir.empty()) {
      write_logs(options.out_dir, state, config.stage);
      if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch < config.epochs) {
        make_checkpoint(model, optimizer, state, config)
            .save(options.out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"));
      }
    }
  }

  TrainResult result;
  result.epochs = state.epochs;
  result.batches = state.batches;
  if (!options.out_dir.empty()) {
    result.checkpoint = options.out_dir / "checkpoint.ckpt";
    make_checkpoint(model, optimizer, state, config).save(result.checkpoint);
  }
  return result;
}

}  // namespace

TrainResult train_stage1(BrainToTextModel& model, std::span<const FmriSample> train,
                         const std::map<std::string, std::string>& captions, const TrainConfig& config,
                         const TrainOptions& options) {
  if (config.stage != 1) throw ConfigError("train_stage1 needs train.stage = 1");
  return run_training(model, train, captions, nullptr, config, options);
}

TrainResult train_stage2(BrainToTextModel& model, std::span<const FmriSample> train,
                         const std::map<std::string, std::string>& captions, RewardSource& rewards,
                         const TrainConfig& config, const TrainOptions& options) {
  if (config.stage != 2) throw ConfigError("train_stage2 needs train.stage = 2");
  return run_training(model, train, captions, &rewards, config, options);
}

}  // namespace neurocap
