#pragma once

#include "neurocap/dataset.hpp"
#include "neurocap/embedding.hpp"
#include "neurocap/image.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace neurocap {

struct FusionConfig {
  double weight = 0.5;       // w: share of the text embedding
  bool renormalize = false;  // rescale the result to the base embedding's norm

  void validate() const;
};

// (1 - w) * base + w * text, optionally rescaled to |base|.
EmbeddingVector fuse_embeddings(const EmbeddingVector& text_embedding, const EmbeddingVector& base_embedding,
                                const FusionConfig& config);

// The weights emitted by the sweep helper.
std::vector<double> fusion_sweep_weights();

struct ReconstructionSettings {
  std::string fidelity = "full";  // "full" or "low"
  int size = 64;                  // output side length at full fidelity
  std::uint64_t seed = 0;

  std::map<std::string, std::string> to_map() const;
};

// Bridge to an external image generator. The low-level latent is an opaque,
// adapter-owned blob; embeddings steer the high-level semantics.
class ReconstructionAdapter {
 public:
  virtual ~ReconstructionAdapter() = default;

  virtual std::string id() const = 0;
  virtual Image reconstruct(const std::string& low_level_latent, std::span<const EmbeddingVector> embeddings,
                            const ReconstructionSettings& settings) = 0;
  virtual int concurrency_limit() const { return 1; }
};

// Deterministic renderer: the latent (if any) is upsampled into a base image
// and every embedding adds a sinusoidal fingerprint of its direction.
// Accepts an empty latent or a MOCKLAT1 blob; anything else is rejected.
class MockReconstructionAdapter : public ReconstructionAdapter {
 public:
  std::string id() const override { return "mock-recon"; }
  Image reconstruct(const std::string& low_level_latent, std::span<const EmbeddingVector> embeddings,
                    const ReconstructionSettings& settings) override;
  int concurrency_limit() const override { return 8; }
};

// MOCKLAT1 blob: magic, u32 width, u32 height, width*height*3 u8 RGB.
std::string encode_mock_latent(const Image& image, int side);
Image decode_mock_latent(const std::string& blob);

// Calls the adapter with one embedding and attaches the adapter id to any failure.
Image reconstruct(ReconstructionAdapter& adapter, const std::string& low_level_latent,
                  const EmbeddingVector& fused, const ReconstructionSettings& settings);

struct ReconstructionProvenance {
  std::string subject_id;
  std::string stimulus_id;
  std::string adapter_id;
  double fusion_weight = 0.5;
  bool renormalize = false;
  std::string checkpoint_id;
  std::map<std::string, std::string> settings;
};

// Writes <dir>/<stimulus>.ppm and the sidecar <dir>/<stimulus>.json.
void write_reconstruction(const Image& image, const ReconstructionProvenance& provenance,
                          const std::filesystem::path& dir);
ReconstructionProvenance read_provenance(const std::filesystem::path& sidecar);

// What an existing method provides per test sample: its high-level semantic
// embedding and a low-level latent blob file.
struct BaselineRecord {
  std::string subject_id;
  std::string stimulus_id;
  EmbeddingVector embedding;
  std::filesystem::path latent_file;  // empty: no latent
};

// Line-delimited JSON, latent paths relative to the file's directory.
std::vector<BaselineRecord> read_baseline(const std::filesystem::path& path);
void write_baseline(const std::vector<BaselineRecord>& records, const std::filesystem::path& path);

// Mock baseline for the synthetic pipeline: noisy image embeddings of the
// ground truth and 8x8 MOCKLAT1 latents, one record per (subject, test stimulus).
// Writes <out_dir>/features.jsonl and <out_dir>/latents/.
std::filesystem::path write_synthetic_baseline(const DatasetManifest& manifest, EmbeddingBackend& embedder,
                                               const std::filesystem::path& out_dir, std::uint64_t seed,
                                               double noise = 0.5);

}  // namespace neurocap
