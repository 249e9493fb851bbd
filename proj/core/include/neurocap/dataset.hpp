#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace neurocap {

struct SubjectConfig {
  std::string subject_id;
  std::size_t voxel_count = 0;  // N_s
  std::string mask_name = "nsdgeneral";
};

// One voxel vector for one subject viewing one stimulus. Voxels are assumed
// z-scored upstream; ingestion only checks they are finite.
struct FmriSample {
  static constexpr int kAveragedTrial = -1;

  std::string subject_id;
  std::string stimulus_id;
  int trial_index = 0;
  std::vector<float> voxels;
};

struct StimulusEntry {
  std::filesystem::path caption_file;  // absolute after load
  std::filesystem::path image_file;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory containing the manifest file
  std::vector<SubjectConfig> subjects;
  std::map<std::string, std::vector<std::filesystem::path>> recordings;  // subject -> voxel containers
  std::map<std::string, StimulusEntry> stimuli;
  std::map<std::string, std::vector<std::string>> train_ids;  // subject -> stimulus ids
  std::vector<std::string> test_ids;                          // shared by every subject

  const SubjectConfig& subject(const std::string& id) const;
  std::string original_caption(const std::string& stimulus_id) const;
  const std::filesystem::path& image_path(const std::string& stimulus_id) const;
  // Every stimulus id referenced by a split, sorted and unique.
  std::vector<std::string> split_stimulus_ids() const;
};

struct DatasetSplits {
  std::vector<FmriSample> train;  // individual trials
  std::vector<FmriSample> test;   // one trial-averaged sample per (subject, test stimulus)
};

// Manifest schema (JSON, paths relative to the manifest's directory):
//   { "schema_version": 1,
//     "subjects": [ { "subject_id", "voxel_count", "mask_name", "recordings": [path...] } ],
//     "stimuli":  [ { "stimulus_id", "caption": path, "image": path } ],
//     "splits":   { "train": { subject_id: [stimulus_id...] }, "test": [stimulus_id...] } }
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

FmriSample average_test_trials(std::span<const FmriSample> samples);
DatasetSplits build_splits(const DatasetManifest& manifest);

// Voxel container: magic "NCVOXEL1", then records of
//   u16 subject_len, subject bytes, u16 stimulus_len, stimulus bytes,
//   i32 trial, u32 length, length x f32 (all little-endian).
std::vector<FmriSample> read_voxel_container(const std::filesystem::path& path);
void write_voxel_container(const std::filesystem::path& path, std::span<const FmriSample> samples);

struct SyntheticSpec {
  std::uint64_t seed = 0;
  int subjects = 2;
  std::vector<std::size_t> voxel_counts = {50, 80};  // one per subject, or one for all
  int stimuli = 20;
  int test_stimuli = -1;  // -1: max(1, stimuli / 5)
  int trials = 3;
  std::vector<std::string> vocab;  // object nouns; empty: built-in list
  int objects_per_stimulus = 2;
  int image_size = 32;
  double noise = 0.1;
};

std::vector<std::string> default_synthetic_vocab();

// Voxels are a fixed per-subject random linear map of a per-stimulus
// semantic code (which objects and colors appear) plus trial noise. Captions
// and images are rendered from the same code. Writes manifest.json, captions/,
// images/, gt_test/ and fmri/ under out_dir and returns the loaded manifest.
DatasetManifest generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace neurocap
