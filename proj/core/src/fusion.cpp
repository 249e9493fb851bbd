#include "neurocap/fusion.hpp"

#include "neurocap/error.hpp"
#include "neurocap/text_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

namespace neurocap {

namespace fs = std::filesystem;
using json = nlohmann::json;

void FusionConfig::validate() const {
  if (!(weight >= 0.0 && weight <= 1.0)) {
    throw ConfigError("fusion weight must lie in [0, 1], got " + format_double(weight));
  }
}

EmbeddingVector fuse_embeddings(const EmbeddingVector& text_embedding, const EmbeddingVector& base_embedding,
                                const FusionConfig& config) {
  config.validate();
  if (text_embedding.size() != base_embedding.size()) {
    throw DataError("fuse_embeddings: dimension mismatch (text " + std::to_string(text_embedding.size()) +
                    ", base " + std::to_string(base_embedding.size()) + ")");
  }
  if (!text_embedding.allFinite() || !base_embedding.allFinite()) {
    throw DataError("fuse_embeddings: non-finite input");
  }
  if (config.weight == 0.0) return base_embedding;
  if (config.weight == 1.0 && !config.renormalize) return text_embedding;
  EmbeddingVector fused = (1.0 - config.weight) * base_embedding + config.weight * text_embedding;
  if (config.renormalize) {
    const double n = fused.norm();
    if (n > 0.0) fused *= base_embedding.norm() / n;
  }
  return fused;
}

std::vector<double> fusion_sweep_weights() { return {0.0, 0.25, 0.5, 0.75, 1.0}; }

std::map<std::string, std::string> ReconstructionSettings::to_map() const {
  return {{"fidelity", fidelity}, {"size", std::to_string(size)}, {"seed", std::to_string(seed)}};
}

namespace {

constexpr char kLatentMagic[8] = {'M', 'O', 'C', 'K', 'L', 'A', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_mock_latent(const Image& image, int side) {
  const Image small = quantize8(resize_area(image, side, side));
  std::string out(kLatentMagic, sizeof(kLatentMagic));
  put_u32(out, static_cast<std::uint32_t>(side));
  put_u32(out, static_cast<std::uint32_t>(side));
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = small.at(x, y, small.channels == 1 ? 0 : c);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
      }
    }
  }
  return out;
}

Image decode_mock_latent(const std::string& blob) {
  if (blob.size() < 16 || std::memcmp(blob.data(), kLatentMagic, sizeof(kLatentMagic)) != 0) {
    throw DataError("mock-recon: latent is not a MOCKLAT1 blob");
  }
  const std::uint32_t w = get_u32(blob, 8), h = get_u32(blob, 12);
  if (w == 0 || h == 0 || w > 4096 || h > 4096 || blob.size() != 16 + static_cast<std::size_t>(w) * h * 3) {
    throw DataError("mock-recon: MOCKLAT1 latent has inconsistent size");
  }
  Image img(static_cast<int>(w), static_cast<int>(h), 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = static_cast<float>(static_cast<unsigned char>(blob[16 + i])) / 255.0f;
  }
  return img;
}

Image MockReconstructionAdapter::reconstruct(const std::string& low_level_latent,
                                             std::span<const EmbeddingVector> embeddings,
                                             const ReconstructionSettings& settings) {
  if (settings.fidelity != "full" && settings.fidelity != "low") {
    throw ConfigError("mock-recon: unknown fidelity '" + settings.fidelity + "'");
  }
  if (settings.size < 8) throw ConfigError("mock-recon: size must be >= 8");
  const int side = settings.fidelity == "low" ? std::max(8, settings.size / 4) : settings.size;

  Image out = low_level_latent.empty() ? Image(side, side, 3, 0.5f)
                                       : resize_bilinear(decode_mock_latent(low_level_latent), side, side);

  std::mt19937_64 rng(settings.seed ^ 0x7265636f6eULL);
  std::uniform_real_distribution<double> freq(0.5, 4.0), phase(0.0, 2.0 * std::numbers::pi);
  for (const auto& e : embeddings) {
    if (e.size() == 0 || !e.allFinite()) throw DataError("mock-recon: empty or non-finite embedding");
    const double n = e.norm();
    if (n == 0.0) continue;
    const Eigen::VectorXd u = e / n;
    struct Wave {
      double fx, fy, ph[3];
    };
    std::vector<Wave> waves(static_cast<std::size_t>(u.size()));
    for (auto& w : waves) {
      w.fx = freq(rng);
      w.fy = freq(rng);
      for (double& p : w.ph) p = phase(rng);
    }
    for (int y = 0; y < side; ++y) {
      const double v = static_cast<double>(y) / side;
      for (int x = 0; x < side; ++x) {
        const double s = static_cast<double>(x) / side;
        for (int c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (Eigen::Index k = 0; k < u.size(); ++k) {
            const Wave& w = waves[static_cast<std::size_t>(k)];
            acc += u(k) * std::sin(2.0 * std::numbers::pi * (w.fx * s + w.fy * v) + w.ph[c]);
          }
          out.at(x, y, c) += static_cast<float>(0.35 * acc);
        }
      }
    }
  }
  for (float& px : out.data) px = std::clamp(px, 0.0f, 1.0f);
  return quantize8(out);
}

Image reconstruct(ReconstructionAdapter& adapter, const std::string& low_level_latent, const EmbeddingVector& fused,
                  const ReconstructionSettings& settings) {
  const std::vector<EmbeddingVector> embeddings = {fused};
  try {
    return adapter.reconstruct(low_level_latent, embeddings, settings);
  } catch (const Error& e) {
    const std::string msg = "adapter '" + adapter.id() + "': " + e.what();
    switch (e.kind()) {
      case ErrorKind::kConfig: throw ConfigError(msg);
      case ErrorKind::kData: throw DataError(msg);
      default: throw BackendError(msg);
    }
  } catch (const std::exception& e) {
    throw BackendError("adapter '" + adapter.id() + "' failed: " + e.what());
  }
}

void write_reconstruction(const Image& image, const ReconstructionProvenance& provenance, const fs::path& dir) {
  fs::create_directories(dir);
  write_image(image, dir / (provenance.stimulus_id + ".ppm"));
  const json j = {{"subject_id", provenance.subject_id},     {"stimulus_id", provenance.stimulus_id},
                  {"adapter_id", provenance.adapter_id},     {"fusion_weight", provenance.fusion_weight},
                  {"renormalize", provenance.renormalize},   {"checkpoint_id", provenance.checkpoint_id},
                  {"settings", provenance.settings}};
  write_text_file_atomic(dir / (provenance.stimulus_id + ".json"), j.dump(2) + "\n");
}

ReconstructionProvenance read_provenance(const fs::path& sidecar) {
  try {
    const json j = json::parse(read_text_file(sidecar));
    ReconstructionProvenance p;
    p.subject_id = j.at("subject_id").get<std::string>();
    p.stimulus_id = j.at("stimulus_id").get<std::string>();
    p.adapter_id = j.at("adapter_id").get<std::string>();
    p.fusion_weight = j.at("fusion_weight").get<double>();
    p.renormalize = j.at("renormalize").get<bool>();
    p.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    p.settings = j.at("settings").get<std::map<std::string, std::string>>();
    return p;
  } catch (const json::exception& e) {
    throw DataError("malformed provenance sidecar " + sidecar.string() + ": " + e.what());
  }
}

std::vector<BaselineRecord> read_baseline(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read baseline features " + path.string());
  std::vector<BaselineRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      BaselineRecord r;
      r.subject_id = j.at("subject_id").get<std::string>();
      r.stimulus_id = j.at("stimulus_id").get<std::string>();
      const auto values = j.at("embedding").get<std::vector<double>>();
      r.embedding = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
      const std::string latent = j.value("latent", std::string());
      if (!latent.empty()) r.latent_file = path.parent_path() / latent;
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed baseline record: " + e.what());
    }
  }
  return out;
}

void write_baseline(const std::vector<BaselineRecord>& records, const fs::path& path) {
  std::string text;
  for (const auto& r : records) {
    json j = {{"subject_id", r.subject_id},
              {"stimulus_id", r.stimulus_id},
              {"embedding", std::vector<double>(r.embedding.data(), r.embedding.data() + r.embedding.size())}};
    if (!r.latent_file.empty()) j["latent"] = r.latent_file.lexically_relative(path.parent_path()).generic_string();
    text += j.dump() + "\n";
  }
  write_text_file_atomic(path, text);
}

fs::path write_synthetic_baseline(const DatasetManifest& manifest, EmbeddingBackend& embedder, const fs::path& out_dir,
                                  std::uint64_t seed, double noise) {
  fs::create_directories(out_dir / "latents");
  std::vector<BaselineRecord> records;
  for (const auto& subject : manifest.subjects) {
    for (const auto& stim : manifest.test_ids) {
      const Image gt = read_image(manifest.image_path(stim));
      std::mt19937_64 rng(seed ^ fnv1a64(subject.subject_id + "/" + stim));
      std::normal_distribution<double> dist(0.0, 1.0);

      BaselineRecord r;
      r.subject_id = subject.subject_id;
      r.stimulus_id = stim;
      r.embedding = embedder.embed_image(gt);
      const double scale = noise * r.embedding.norm() / std::sqrt(static_cast<double>(r.embedding.size()));
      for (Eigen::Index i = 0; i < r.embedding.size(); ++i) r.embedding(i) += scale * dist(rng);

      Image blurred = resize_area(gt, 8, 8);
      for (float& px : blurred.data) px = std::clamp(px + static_cast<float>(0.05 * dist(rng)), 0.0f, 1.0f);
      r.latent_file = out_dir / "latents" / (subject.subject_id + "_" + stim + ".mlat");
      write_text_file_atomic(r.latent_file, encode_mock_latent(blurred, 8));
      records.push_back(std::move(r));
    }
  }
  const fs::path features = out_dir / "features.jsonl";
  write_baseline(records, features);
  return features;
}

}  // namespace neurocap
