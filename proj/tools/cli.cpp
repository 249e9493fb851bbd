#include "cli.hpp"

#include "neurocap/brain2text.hpp"
#include "neurocap/caption.hpp"
#include "neurocap/checkpoint.hpp"
#include "neurocap/config.hpp"
#include "neurocap/dataset.hpp"
#include "neurocap/embedding.hpp"
#include "neurocap/error.hpp"
#include "neurocap/evaluation.hpp"
#include "neurocap/fusion.hpp"
#include "neurocap/rewards.hpp"
#include "neurocap/run_manifest.hpp"
#include "neurocap/text_util.hpp"
#include "neurocap/training.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

namespace neurocap::cli {

namespace fs = std::filesystem;

namespace {

const char* kExitCodeHelp =
    "Exit codes: 0 success, 2 config or usage error, 3 data error, 4 backend error, 5 internal error.";

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Pipeline config file (JSON); missing keys take their defaults");
  app->add_option("--set", c.sets, "Override one config key as KEY=VALUE, e.g. train.stage1.epochs=50 (repeatable)");
}

PipelineConfig resolve_config(const Common& c) {
  PipelineConfig config = c.config.empty() ? PipelineConfig::defaults() : PipelineConfig::load(c.config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return config;
}

std::string absolute_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

class RunRecorder {
 public:
  RunRecorder(std::string command, const std::vector<std::string>& args, const PipelineConfig& config) {
    manifest_.command = std::move(command);
    manifest_.argv = args;
    manifest_.config_json = config.to_json();
    manifest_.working_directory = fs::current_path().string();
    manifest_.started_at = utc_timestamp();
  }

  RunManifest& manifest() { return manifest_; }
  void input(const std::string& name, const fs::path& p) { manifest_.inputs[name] = absolute_string(p); }

  // Every file under the output directory is an artifact.
  fs::path finish_directory(const fs::path& dir) {
    manifest_.output = absolute_string(dir);
    manifest_.artifacts = collect_artifacts(dir);
    manifest_.finished_at = utc_timestamp();
    return write_run_manifest(manifest_, dir);
  }

  // Only the named files are artifacts; the manifest goes next to them.
  fs::path finish_files(const fs::path& primary, const std::vector<fs::path>& files) {
    const fs::path dir = fs::absolute(primary).parent_path();
    manifest_.output = absolute_string(primary);
    manifest_.artifacts.clear();
    for (const auto& f : files) {
      manifest_.artifacts[fs::relative(fs::absolute(f), dir).generic_string()] = file_crc32_hex(f);
    }
    manifest_.finished_at = utc_timestamp();
    return write_run_manifest(manifest_, dir);
  }

 private:
  RunManifest manifest_;
};

std::unique_ptr<ReconstructionAdapter> make_reconstruction_adapter(const std::string& id) {
  if (id == "mock-recon") return std::make_unique<MockReconstructionAdapter>();
  throw ConfigError("unknown reconstruction adapter '" + id + "' (available: mock-recon)");
}

std::shared_ptr<HashedEmbeddingBackend> make_embedder(const RewardSettings& r) {
  return std::make_shared<HashedEmbeddingBackend>(r.embedding_dim, r.embedding_seed);
}

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v <= 0) throw ConfigError(flag + " expects positive integers separated by commas");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError(flag + " must not be empty");
  return out;
}

// gen-synthetic ------------------------------------------------------------

struct GenOptions {
  Common common;
  std::string out_dir;
  std::uint64_t seed = 0;
  int subjects = 2;
  std::string voxels = "50,80";
  int stimuli = 20;
  int test_stimuli = -1;
  int trials = 3;
  int image_size = 32;
  double noise = 0.1;
  std::string vocab;
  double baseline_noise = 0.5;
};

void add_gen(CLI::App& app, GenOptions& o) {
  auto* c = app.add_subcommand("gen-synthetic", "Write a synthetic dataset (manifest, voxels, captions, images) "
                                                 "and a mock baseline for reconstruction");
  add_common(c, o.common);
  c->add_option("--out-dir", o.out_dir, "Output directory")->required();
  c->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  c->add_option("--subjects", o.subjects, "Number of subjects")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--voxels", o.voxels, "Voxel counts, one per subject or one for all (comma separated)")
      ->capture_default_str();
  c->add_option("--stimuli", o.stimuli, "Number of stimuli")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--test-stimuli", o.test_stimuli, "Shared test stimuli; -1 for stimuli/5")->capture_default_str();
  c->add_option("--trials", o.trials, "Trials per (subject, stimulus)")->capture_default_str()->check(
      CLI::PositiveNumber);
  c->add_option("--image-size", o.image_size, "Stimulus image side length")->capture_default_str();
  c->add_option("--noise", o.noise, "Voxel trial noise standard deviation")->capture_default_str();
  c->add_option("--vocab", o.vocab, "Object nouns (comma separated); default built-in list");
  c->add_option("--baseline-noise", o.baseline_noise, "Noise level of the mock baseline features")
      ->capture_default_str();
}

int run_gen(const GenOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  const PipelineConfig config = resolve_config(o.common);
  SyntheticSpec spec;
  spec.seed = o.seed;
  spec.subjects = o.subjects;
  spec.voxel_counts = parse_size_list(o.voxels, "--voxels");
  spec.stimuli = o.stimuli;
  spec.test_stimuli = o.test_stimuli;
  spec.trials = o.trials;
  spec.image_size = o.image_size;
  spec.noise = o.noise;
  if (!o.vocab.empty()) {
    std::stringstream in(o.vocab);
    std::string w;
    while (std::getline(in, w, ',')) {
      if (!trim(w).empty()) spec.vocab.push_back(trim(w));
    }
  }
  RunRecorder rec("gen-synthetic", args, config);
  const DatasetManifest manifest = generate_synthetic_dataset(spec, o.out_dir);
  auto embedder = make_embedder(config.rewards());
  write_synthetic_baseline(manifest, *embedder, fs::path(o.out_dir) / "baseline", o.seed, o.baseline_noise);
  rec.manifest().seeds["dataset"] = o.seed;
  rec.manifest().seeds["baseline"] = o.seed;
  rec.manifest().backends["embedding"] = embedder->id();
  rec.finish_directory(o.out_dir);
  out << "wrote " << manifest.subjects.size() << " subjects, " << manifest.stimuli.size() << " stimuli to "
      << o.out_dir << "\n";
  return kExitOk;
}

// enhance-captions ---------------------------------------------------------

struct EnhanceCliOptions {
  Common common;
  std::string manifest;
  std::string backend;
  std::string prompt_file;
  std::string out;
  int parallelism = 0;
  int max_tokens = 0;
};

void add_enhance(CLI::App& app, EnhanceCliOptions& o) {
  auto* c = app.add_subcommand("enhance-captions",
                               "Replace each stimulus caption with a detailed description from a captioning backend");
  add_common(c, o.common);
  c->add_option("--manifest", o.manifest, "Dataset manifest")->required();
  c->add_option("--backend", o.backend,
                "Captioning backend: echo (returns the original caption) or http (NEUROCAP_CAPTION_ENDPOINT, "
                "NEUROCAP_CAPTION_TOKEN); default captions.backend");
  c->add_option("--prompt-file", o.prompt_file, "File holding the prompt; default the built-in prompt");
  c->add_option("--out", o.out, "Caption store (line-delimited JSON); existing records are kept")->required();
  c->add_option("--parallelism", o.parallelism, "Concurrent requests; default captions.parallelism");
  c->add_option("--max-tokens", o.max_tokens, "Token limit per caption; default captions.max_tokens");
}

int run_enhance(const EnhanceCliOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  PipelineConfig config = resolve_config(o.common);
  if (!o.backend.empty()) config.set("captions.backend", "\"" + o.backend + "\"");
  if (o.parallelism > 0) config.set("captions.parallelism", std::to_string(o.parallelism));
  if (o.max_tokens > 0) config.set("captions.max_tokens", std::to_string(o.max_tokens));
  const CaptionSettings settings = config.captions();

  const DatasetManifest manifest = load_manifest(o.manifest);
  std::unique_ptr<CaptioningBackend> backend;
  if (settings.backend == "echo") {
    backend = FixtureCaptioningBackend::from_manifest(manifest);
  } else {
    backend = HttpCaptioningBackend::from_environment();
  }

  CaptionStoreOptions store_options;
  if (!o.prompt_file.empty()) {
    if (!fs::exists(o.prompt_file)) throw ConfigError("prompt file not found: " + o.prompt_file);
    store_options.prompt = trim(read_text_file(o.prompt_file));
  } else if (!settings.prompt.empty()) {
    store_options.prompt = settings.prompt;
  }
  if (store_options.prompt.empty()) throw ConfigError("caption prompt must not be empty");
  store_options.parallelism = static_cast<std::size_t>(settings.parallelism);
  store_options.enhance.max_tokens = static_cast<std::size_t>(settings.max_tokens);
  store_options.enhance.retry.max_attempts = settings.max_attempts;
  store_options.enhance.retry.initial_backoff = std::chrono::milliseconds(settings.initial_backoff_ms);

  RunRecorder rec("enhance-captions", args, config);
  rec.input("manifest", o.manifest);
  if (!o.prompt_file.empty()) rec.input("prompt_file", o.prompt_file);
  rec.manifest().backends["captioning"] = backend->id();
  if (!fs::path(o.out).parent_path().empty()) fs::create_directories(fs::path(o.out).parent_path());
  const CaptionStoreSummary summary = build_caption_store(manifest, *backend, o.out, store_options);
  rec.finish_files(o.out, {o.out});
  out << "enhanced " << summary.enhanced << ", failed " << summary.failed << ", already done " << summary.skipped
      << "\n";
  return summary.failed > 0 ? kExitBackend : kExitOk;
}

// train --------------------------------------------------------------------

struct TrainCliOptions {
  Common common;
  int stage = 1;
  std::string manifest;
  std::string captions;
  std::string init_checkpoint;
  std::string resume;
  std::string out_dir;
  std::optional<double> alpha, beta, gamma, lr;
  std::optional<int> epochs, batch_size, workers;
  std::optional<std::uint64_t> seed;
};

void add_train(CLI::App& app, TrainCliOptions& o) {
  auto* c = app.add_subcommand("train", "Train the brain-to-text model (stage 1: cross-entropy; stage 2: "
                                        "cross-entropy plus reward co-training)");
  add_common(c, o.common);
  c->add_option("--stage", o.stage, "Training stage, 1 or 2")->required()->check(CLI::IsMember({1, 2}));
  c->add_option("--manifest", o.manifest, "Dataset manifest")->required();
  c->add_option("--captions", o.captions, "Caption store from enhance-captions")->required();
  c->add_option("--init-checkpoint", o.init_checkpoint, "Stage-1 checkpoint to start stage 2 from");
  c->add_option("--resume", o.resume, "Continue an interrupted run from one of its checkpoints");
  c->add_option("--out-dir", o.out_dir, "Output directory for checkpoints and logs")->required();
  c->add_option("--alpha", o.alpha, "Object-accuracy reward factor (train.stageN.alpha)");
  c->add_option("--beta", o.beta, "Text-image reward factor (train.stageN.beta)");
  c->add_option("--gamma", o.gamma, "Image-image reward factor (train.stageN.gamma)");
  c->add_option("--epochs", o.epochs, "Epochs (train.stageN.epochs)");
  c->add_option("--lr", o.lr, "Learning rate (train.stageN.learning_rate)");
  c->add_option("--batch-size", o.batch_size, "Batch size (train.stageN.batch_size)");
  c->add_option("--workers", o.workers, "Threads for sampling and scoring (train.stageN.workers)");
  c->add_option("--seed", o.seed, "Training seed (train.stageN.seed)");
}

int run_train(const TrainCliOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  if (o.stage == 2 && o.init_checkpoint.empty()) throw ConfigError("train --stage 2 requires --init-checkpoint");
  PipelineConfig config = resolve_config(o.common);
  const std::string section = "train.stage" + std::to_string(o.stage) + ".";
  const auto set_num = [&](const std::string& key, const auto& value) {
    if (value) config.set(section + key, format_double(static_cast<double>(*value)));
  };
  set_num("alpha", o.alpha);
  set_num("beta", o.beta);
  set_num("gamma", o.gamma);
  set_num("learning_rate", o.lr);
  if (o.epochs) config.set(section + "epochs", std::to_string(*o.epochs));
  if (o.batch_size) config.set(section + "batch_size", std::to_string(*o.batch_size));
  if (o.workers) config.set(section + "workers", std::to_string(*o.workers));
  if (o.seed) config.set(section + "seed", std::to_string(*o.seed));
  const TrainConfig train_config = config.train(o.stage);

  const DatasetManifest manifest = load_manifest(o.manifest);
  if (!fs::exists(o.captions)) throw DataError("caption store not found: " + o.captions);
  const auto captions = enhanced_captions(latest_caption_records(o.captions));
  const DatasetSplits splits = build_splits(manifest);

  RunRecorder rec("train", args, config);
  rec.input("manifest", o.manifest);
  rec.input("captions", o.captions);
  rec.manifest().seeds["train"] = train_config.seed;

  std::optional<Checkpoint> resume;
  if (!o.resume.empty()) {
    resume = Checkpoint::load(o.resume);
    rec.input("resume", o.resume);
  }

  BrainToTextModel model = [&] {
    if (resume) return BrainToTextModel::from_checkpoint(*resume);
    if (o.stage == 2) {
      rec.input("init_checkpoint", o.init_checkpoint);
      return BrainToTextModel::load_checkpoint(o.init_checkpoint);
    }
    std::set<std::string> ids;
    for (const auto& s : splits.train) ids.insert(s.stimulus_id);
    std::vector<std::string> corpus;
    for (const auto& id : ids) {
      if (const auto it = captions.find(id); it != captions.end()) corpus.push_back(it->second);
    }
    BrainToTextModel m(config.model(), Tokenizer::from_corpus(corpus));
    for (const auto& subject : manifest.subjects) m.register_subject(subject);
    return m;
  }();
  if (o.stage == 2 && resume) rec.input("init_checkpoint", o.init_checkpoint);
  rec.manifest().seeds["model"] = model.config().seed;
  rec.manifest().backends["language_model"] = model.config().lm_backend;

  TrainOptions options;
  options.out_dir = o.out_dir;
  options.resume = resume ? &*resume : nullptr;

  TrainResult result;
  if (o.stage == 1) {
    result = train_stage1(model, splits.train, captions, train_config, options);
  } else {
    const RewardSettings rs = config.rewards();
    const ReconstructionConfig rc = config.reconstruction();
    auto embedder = make_embedder(rs);
    std::shared_ptr<ReconstructionAdapter> adapter = make_reconstruction_adapter(rc.adapter);
    const Stoplist stoplist = rs.stoplist.empty() ? default_stoplist() : load_stoplist(rs.stoplist);
    if (!rs.stoplist.empty()) rec.input("stoplist", rs.stoplist);
    TripleRewardSource rewards(manifest, embedder, adapter, nullptr, stoplist,
                               ReconstructionSettings{"low", rs.reconstruction_size, rc.seed});
    rec.manifest().backends["embedding"] = embedder->id();
    rec.manifest().backends["reconstruction"] = adapter->id();
    rec.manifest().backends["rewards"] = rewards.id();
    rec.manifest().seeds["reconstruction"] = rc.seed;
    result = train_stage2(model, splits.train, captions, rewards, train_config, options);
  }
  rec.finish_directory(o.out_dir);
  if (!result.epochs.empty()) {
    const EpochRecord& first = result.epochs.front();
    const EpochRecord& last = result.epochs.back();
    out << "stage " << o.stage << ": " << last.epoch << " epochs, ce " << format_double(first.ce_loss) << " -> "
        << format_double(last.ce_loss) << "\n";
  }
  out << "checkpoint " << result.checkpoint.string() << "\n";
  return kExitOk;
}

// decode -------------------------------------------------------------------

struct DecodeCliOptions {
  Common common;
  std::string checkpoint;
  std::string manifest;
  std::vector<std::string> subjects;
  std::string out;
  std::string strategy;
  std::optional<double> temperature;
  std::optional<int> beam_width;
  std::optional<std::uint64_t> seed;
};

void add_decode(CLI::App& app, DecodeCliOptions& o) {
  auto* c = app.add_subcommand("decode", "Decode text for every trial-averaged test sample");
  add_common(c, o.common);
  c->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  c->add_option("--manifest", o.manifest, "Dataset manifest")->required();
  c->add_option("--subject", o.subjects, "Subject to decode (repeatable); default every subject in the checkpoint");
  c->add_option("--out", o.out, "Output decodings (line-delimited JSON)")->required();
  c->add_option("--strategy", o.strategy, "greedy, sample or beam (decode.strategy)");
  c->add_option("--temperature", o.temperature, "Sampling temperature (decode.temperature)");
  c->add_option("--beam-width", o.beam_width, "Beam width (decode.beam_width)");
  c->add_option("--seed", o.seed, "Sampling seed (decode.seed)");
}

int run_decode(const DecodeCliOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  PipelineConfig config = resolve_config(o.common);
  if (!o.strategy.empty()) config.set("decode.strategy", "\"" + o.strategy + "\"");
  if (o.temperature) config.set("decode.temperature", format_double(*o.temperature));
  if (o.beam_width) config.set("decode.beam_width", std::to_string(*o.beam_width));
  if (o.seed) config.set("decode.seed", std::to_string(*o.seed));
  const DecodeSettings settings = config.decode();

  if (!fs::exists(o.checkpoint)) throw DataError("checkpoint not found: " + o.checkpoint);
  BrainToTextModel model = BrainToTextModel::load_checkpoint(o.checkpoint);
  const std::string checkpoint_id = file_crc32_hex(o.checkpoint);
  const DatasetManifest manifest = load_manifest(o.manifest);
  const DatasetSplits splits = build_splits(manifest);

  std::vector<std::string> subjects = o.subjects;
  if (subjects.empty()) {
    for (const auto& s : model.subjects()) {
      for (const auto& ms : manifest.subjects) {
        if (ms.subject_id == s.subject_id) subjects.push_back(s.subject_id);
      }
    }
  }
  RunRecorder rec("decode", args, config);
  rec.input("checkpoint", o.checkpoint);
  rec.input("manifest", o.manifest);
  rec.manifest().seeds["decode"] = settings.seed;
  rec.manifest().backends["language_model"] = model.config().lm_backend;

  std::vector<DecodingRecord> records;
  for (const auto& subject : subjects) {
    auto part = decode_test_set(model, splits.test, subject, settings.to_strategy(), checkpoint_id);
    records.insert(records.end(), part.begin(), part.end());
  }
  if (!fs::path(o.out).parent_path().empty()) fs::create_directories(fs::path(o.out).parent_path());
  write_decodings(records, o.out);
  rec.finish_files(o.out, {o.out});
  out << "decoded " << records.size() << " samples for " << subjects.size() << " subjects\n";
  return kExitOk;
}

// reconstruct --------------------------------------------------------------

struct ReconstructCliOptions {
  Common common;
  std::string adapter;
  std::string decodings;
  std::string baseline;
  std::optional<double> fusion_weight;
  bool sweep = false;
  bool renormalize = false;
  std::optional<int> size;
  std::string out_dir;
};

void add_reconstruct(CLI::App& app, ReconstructCliOptions& o) {
  auto* c = app.add_subcommand("reconstruct", "Fuse decoded-text embeddings with a baseline's semantic features "
                                              "and render images through a reconstruction adapter");
  add_common(c, o.common);
  c->add_option("--adapter", o.adapter, "Reconstruction adapter id (reconstruction.adapter); available: mock-recon");
  c->add_option("--decodings", o.decodings, "Decodings from the decode command")->required();
  c->add_option("--baseline", o.baseline, "Baseline features (line-delimited JSON with latent files)")->required();
  c->add_option("--fusion-weight", o.fusion_weight, "Share w of the text embedding in [0, 1] (fusion.weight)");
  c->add_flag("--sweep", o.sweep, "Render every weight in {0, 0.25, 0.5, 0.75, 1} into w_<weight>/ subdirectories");
  c->add_flag("--renormalize", o.renormalize, "Rescale fused embeddings to the baseline norm (fusion.renormalize)");
  c->add_option("--size", o.size, "Output image side length (reconstruction.size)");
  c->add_option("--out-dir", o.out_dir, "Output directory: <subject>/<stimulus>.ppm plus .json sidecars")
      ->required();
}

int run_reconstruct(const ReconstructCliOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  PipelineConfig config = resolve_config(o.common);
  if (!o.adapter.empty()) config.set("reconstruction.adapter", "\"" + o.adapter + "\"");
  if (o.fusion_weight) config.set("fusion.weight", format_double(*o.fusion_weight));
  if (o.renormalize) config.set("fusion.renormalize", "true");
  if (o.size) config.set("reconstruction.size", std::to_string(*o.size));
  const FusionConfig fusion = config.fusion();
  const ReconstructionConfig rc = config.reconstruction();

  auto adapter = make_reconstruction_adapter(rc.adapter);
  auto embedder = make_embedder(config.rewards());
  const auto decodings = read_decodings(o.decodings);
  if (!fs::exists(o.baseline)) throw DataError("baseline file not found: " + o.baseline);
  const auto baseline = read_baseline(o.baseline);
  std::map<std::pair<std::string, std::string>, const BaselineRecord*> by_key;
  for (const auto& b : baseline) by_key[{b.subject_id, b.stimulus_id}] = &b;

  RunRecorder rec("reconstruct", args, config);
  rec.input("decodings", o.decodings);
  rec.input("baseline", o.baseline);
  rec.manifest().seeds["reconstruction"] = rc.seed;
  rec.manifest().backends["reconstruction"] = adapter->id();
  rec.manifest().backends["embedding"] = embedder->id();

  const std::vector<double> weights = o.sweep ? fusion_sweep_weights() : std::vector<double>{fusion.weight};
  ReconstructionSettings settings{"full", rc.size, rc.seed};
  std::size_t written = 0;
  for (const double w : weights) {
    const fs::path root = o.sweep ? fs::path(o.out_dir) / ("w_" + format_double(w)) : fs::path(o.out_dir);
    const FusionConfig fc{w, fusion.renormalize};
    for (const auto& d : decodings) {
      const auto it = by_key.find({d.subject_id, d.stimulus_id});
      if (it == by_key.end()) {
        throw DataError("no baseline features for subject '" + d.subject_id + "', stimulus '" + d.stimulus_id + "'");
      }
      const BaselineRecord& b = *it->second;
      const EmbeddingVector fused = fuse_embeddings(embedder->embed_text(d.text), b.embedding, fc);
      const std::string latent = b.latent_file.empty() ? std::string() : read_text_file(b.latent_file);
      const Image image = reconstruct(*adapter, latent, fused, settings);
      ReconstructionProvenance prov{d.subject_id, d.stimulus_id, adapter->id(), w, fc.renormalize,
                                    d.checkpoint_id, settings.to_map()};
      write_reconstruction(image, prov, root / d.subject_id);
      ++written;
    }
  }
  rec.finish_directory(o.out_dir);
  out << "wrote " << written << " reconstructions to " << o.out_dir << "\n";
  return kExitOk;
}

// evaluate / report --------------------------------------------------------

fs::path json_sibling(const fs::path& text_out) { return fs::path(text_out).replace_extension(".json"); }

std::vector<fs::path> write_report(const EvalReport& report, const fs::path& out) {
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  const fs::path json_out = json_sibling(out);
  if (json_out == out) {
    write_text_file_atomic(out, report_to_json(report));
    return {out};
  }
  write_text_file_atomic(out, render_text(report));
  write_text_file_atomic(json_out, report_to_json(report));
  return {out, json_out};
}

struct EvaluateCliOptions {
  Common common;
  std::string recon;
  std::string gt;
  std::string out;
  std::string method;
  std::optional<int> resolution, workers;
};

void add_evaluate(CLI::App& app, EvaluateCliOptions& o) {
  auto* c = app.add_subcommand("evaluate", "Score reconstructions against ground-truth images");
  add_common(c, o.common);
  c->add_option("--recon", o.recon, "Reconstructions: one subdirectory per subject, or images directly")->required();
  c->add_option("--gt", o.gt, "Ground-truth directory of <stimulus>.ppm files")->required();
  c->add_option("--out", o.out, "Text report; a .json twin is written beside it")->required();
  c->add_option("--method", o.method, "Method name for the report row (evaluation.method)");
  c->add_option("--resolution", o.resolution, "Pixel-metric resolution (evaluation.resolution)");
  c->add_option("--workers", o.workers, "Threads (evaluation.workers)");
}

int run_evaluate(const EvaluateCliOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  PipelineConfig config = resolve_config(o.common);
  if (!o.method.empty()) config.set("evaluation.method", "\"" + o.method + "\"");
  if (o.resolution) config.set("evaluation.resolution", std::to_string(*o.resolution));
  if (o.workers) config.set("evaluation.workers", std::to_string(*o.workers));
  if (!fs::is_directory(o.recon)) throw DataError("reconstruction directory not found: " + o.recon);
  if (!fs::is_directory(o.gt)) throw DataError("ground-truth directory not found: " + o.gt);

  const auto extractors = make_mock_extractors(config.extractor_seed());
  RunRecorder rec("evaluate", args, config);
  rec.input("recon", o.recon);
  rec.input("gt", o.gt);
  rec.manifest().seeds["extractors"] = config.extractor_seed();
  for (const auto& [key, e] : extractors) rec.manifest().backends["extractor." + key] = e->id();

  const EvalReport report = evaluate_suite(o.recon, o.gt, extractors, config.evaluation());
  const auto files = write_report(report, o.out);
  rec.finish_files(o.out, files);
  out << render_text(report);
  return kExitOk;
}

struct ReportCliOptions {
  Common common;
  std::vector<std::string> inputs;
  std::string out;
};

void add_report(CLI::App& app, ReportCliOptions& o) {
  auto* c = app.add_subcommand("report", "Merge JSON reports (one per method) into one table");
  add_common(c, o.common);
  c->add_option("--input", o.inputs, "JSON report from evaluate (repeatable)")->required();
  c->add_option("--out", o.out, "Merged text report; a .json twin is written beside it")->required();
}

int run_report(const ReportCliOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  const PipelineConfig config = resolve_config(o.common);
  RunRecorder rec("report", args, config);
  std::vector<EvalReport> reports;
  for (std::size_t i = 0; i < o.inputs.size(); ++i) {
    if (!fs::exists(o.inputs[i])) throw DataError("report not found: " + o.inputs[i]);
    reports.push_back(report_from_json(read_text_file(o.inputs[i])));
    rec.input("input." + std::to_string(i), o.inputs[i]);
  }
  const EvalReport merged = merge_reports(reports);
  const auto files = write_report(merged, o.out);
  rec.finish_files(o.out, files);
  out << render_text(merged);
  return kExitOk;
}

// replay -------------------------------------------------------------------

struct ReplayCliOptions {
  std::string manifest;
  std::string into;
};

void add_replay(CLI::App& app, ReplayCliOptions& o) {
  auto* c = app.add_subcommand("replay", "Re-run a recorded command from its run manifest and compare outputs");
  c->add_option("manifest", o.manifest, "run_manifest.json of the original run")->required();
  c->add_option("--into", o.into, "Directory for the replayed outputs; default <manifest dir>.replay");
}

std::string output_flag(const std::string& command) {
  static const std::map<std::string, std::string> flags = {
      {"gen-synthetic", "--out-dir"}, {"enhance-captions", "--out"}, {"train", "--out-dir"},
      {"decode", "--out"},           {"reconstruct", "--out-dir"},  {"evaluate", "--out"},
      {"report", "--out"}};
  const auto it = flags.find(command);
  if (it == flags.end()) throw DataError("run manifest names an unknown command '" + command + "'");
  return it->second;
}

bool writes_directory(const std::string& command) { return output_flag(command) == "--out-dir"; }

int run_replay(const ReplayCliOptions& o, std::ostream& out, std::ostream& err) {
  const fs::path manifest_path = fs::absolute(o.manifest);
  const RunManifest original = read_run_manifest(manifest_path);
  const fs::path into = fs::absolute(o.into.empty() ? fs::path(manifest_path.parent_path().string() + ".replay")
                                                     : fs::path(o.into));
  if (fs::exists(into) && !fs::is_empty(into)) {
    throw ConfigError("replay target " + into.string() + " exists and is not empty");
  }
  const std::string flag = output_flag(original.command);
  const fs::path new_output = writes_directory(original.command) ? into : into / fs::path(original.output).filename();

  const fs::path config_file = fs::temp_directory_path() /
                               ("neurocap-replay-" + hex64(fnv1a64(original.to_json() + into.string())) + ".json");
  write_text_file_atomic(config_file, original.config_json);

  std::vector<std::string> args{original.command};
  bool replaced = false;
  for (std::size_t i = 0; i < original.argv.size(); ++i) {
    const std::string& a = original.argv[i];
    if (a == "--config" || a == "--set") {
      ++i;
      continue;
    }
    if (a.rfind("--config=", 0) == 0 || a.rfind("--set=", 0) == 0) continue;
    if (a == flag) {
      args.push_back(flag);
      args.push_back(new_output.string());
      ++i;
      replaced = true;
      continue;
    }
    if (a.rfind(flag + "=", 0) == 0) {
      args.push_back(flag);
      args.push_back(new_output.string());
      replaced = true;
      continue;
    }
    args.push_back(a);
  }
  if (!replaced) throw DataError("run manifest argv lacks the output flag " + flag);
  args.push_back("--config");
  args.push_back(config_file.string());

  const fs::path cwd = fs::current_path();
  int code = kExitInternal;
  try {
    if (!original.working_directory.empty()) fs::current_path(original.working_directory);
    std::ostringstream sink;
    code = dispatch(args, sink, err);
  } catch (...) {
    fs::current_path(cwd);
    fs::remove(config_file);
    throw;
  }
  fs::current_path(cwd);
  fs::remove(config_file);
  if (code != kExitOk) {
    err << "replayed command exited with " << code << "\n";
    return code;
  }

  const RunManifest replayed = read_run_manifest(into / kRunManifestName);
  std::vector<std::string> diffs;
  for (const auto& [path, crc] : original.artifacts) {
    const auto it = replayed.artifacts.find(path);
    if (it == replayed.artifacts.end()) diffs.push_back(path + " (missing)");
    else if (it->second != crc) diffs.push_back(path + " (" + crc + " != " + it->second + ")");
  }
  for (const auto& [path, crc] : replayed.artifacts) {
    if (!original.artifacts.count(path)) diffs.push_back(path + " (unexpected)");
  }
  if (!diffs.empty()) {
    std::string msg = "replay differs from the original run in " + std::to_string(diffs.size()) + " artifacts:";
    for (const auto& d : diffs) msg += "\n  " + d;
    throw DataError(msg);
  }
  out << "replay identical: " << original.artifacts.size() << " artifacts in " << into.string() << "\n";
  return kExitOk;
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"gen-synthetic", "enhance-captions", "train", "decode",
                                                 "reconstruct",   "evaluate",         "report", "replay"};
  return names;
}

std::string suggest_subcommand(const std::string& name) {
  std::string best;
  std::size_t best_distance = 3;
  for (const auto& s : subcommands()) {
    const std::size_t d = edit_distance(name, s);
    if (d < best_distance) {
      best = s;
      best_distance = d;
    }
  }
  return best;
}

int exit_code_for(const std::exception& e) {
  if (const auto* ne = dynamic_cast<const Error*>(&e)) return static_cast<int>(ne->kind());
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitData;
  return kExitInternal;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("neurocap: brain-to-text decoding, reward co-training, text-bridged reconstruction and evaluation",
               "neurocap");
  app.footer(std::string(kExitCodeHelp) + "\nConfig keys: see docs/config.md or any run_manifest.json.");
  app.require_subcommand(1);

  GenOptions gen;
  EnhanceCliOptions enhance;
  TrainCliOptions train;
  DecodeCliOptions decode;
  ReconstructCliOptions recon;
  EvaluateCliOptions evaluate;
  ReportCliOptions report;
  ReplayCliOptions replay;
  add_gen(app, gen);
  add_enhance(app, enhance);
  add_train(app, train);
  add_decode(app, decode);
  add_reconstruct(app, recon);
  add_evaluate(app, evaluate);
  add_report(app, report);
  add_replay(app, replay);
  for (auto* sub : app.get_subcommands({})) sub->footer(kExitCodeHelp);

  if (!args.empty() && !args[0].empty() && args[0][0] != '-' &&
      std::find(subcommands().begin(), subcommands().end(), args[0]) == subcommands().end()) {
    err << "error: unknown subcommand '" << args[0] << "'";
    const std::string suggestion = suggest_subcommand(args[0]);
    if (!suggestion.empty()) err << "; did you mean '" << suggestion << "'?";
    err << "\n\n" << app.help();
    return kExitConfig;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  const std::vector<std::string> sub_args(args.begin() + 1, args.end());
  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-synthetic") return run_gen(gen, sub_args, out);
    if (name == "enhance-captions") return run_enhance(enhance, sub_args, out);
    if (name == "train") return run_train(train, sub_args, out);
    if (name == "decode") return run_decode(decode, sub_args, out);
    if (name == "reconstruct") return run_reconstruct(recon, sub_args, out);
    if (name == "evaluate") return run_evaluate(evaluate, sub_args, out);
    if (name == "report") return run_report(report, sub_args, out);
    if (name == "replay") return run_replay(replay, out, err);
    throw InternalError("unhandled subcommand " + name);
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << "error: " << e.what() << "\n";
    return code;
  }
}

}  // namespace neurocap::cli
