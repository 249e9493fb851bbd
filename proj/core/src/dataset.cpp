#include "neurocap/dataset.hpp"

#include "neurocap/error.hpp"
#include "neurocap/image.hpp"
#include "neurocap/text_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <random>
#include <set>
#include <sstream>

namespace neurocap {

namespace fs = std::filesystem;
using json = nlohmann::json;

const SubjectConfig& DatasetManifest::subject(const std::string& id) const {
  for (const auto& s : subjects) {
    if (s.subject_id == id) return s;
  }
  throw DataError("unknown subject '" + id + "'");
}

std::string DatasetManifest::original_caption(const std::string& stimulus_id) const {
  auto it = stimuli.find(stimulus_id);
  if (it == stimuli.end()) throw DataError("unknown stimulus '" + stimulus_id + "'");
  return trim(read_text_file(it->second.caption_file));
}

const fs::path& DatasetManifest::image_path(const std::string& stimulus_id) const {
  auto it = stimuli.find(stimulus_id);
  if (it == stimuli.end()) throw DataError("unknown stimulus '" + stimulus_id + "'");
  return it->second.image_file;
}

std::vector<std::string> DatasetManifest::split_stimulus_ids() const {
  std::set<std::string> ids(test_ids.begin(), test_ids.end());
  for (const auto& [subj, list] : train_ids) ids.insert(list.begin(), list.end());
  return {ids.begin(), ids.end()};
}

namespace {

template <typename T>
T require(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw DataError("manifest: missing key '" + where + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError("manifest: key '" + where + key + "' has the wrong type");
  }
}

fs::path resolve(const fs::path& root, const std::string& rel) {
  fs::path p(rel);
  return p.is_absolute() ? p : root / p;
}

std::string relative_to(const fs::path& p, const fs::path& root) {
  return fs::relative(p, root).generic_string();
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw DataError("manifest " + path.string() + ": invalid JSON: " + e.what());
  }
  const auto version = require<int>(doc, "schema_version", "");
  if (version != 1) throw DataError("manifest: unsupported schema_version " + std::to_string(version));

  DatasetManifest m;
  m.root = fs::absolute(path).parent_path();

  const auto subjects = require<json>(doc, "subjects", "");
  if (!subjects.is_array()) throw DataError("manifest: key 'subjects' must be a list");
  std::set<std::string> seen_subjects;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const std::string where = "subjects[" + std::to_string(i) + "].";
    SubjectConfig s;
    s.subject_id = require<std::string>(subjects[i], "subject_id", where);
    const auto count = require<long long>(subjects[i], "voxel_count", where);
    if (count <= 0) throw DataError("manifest: '" + where + "voxel_count' must be positive");
    s.voxel_count = static_cast<std::size_t>(count);
    s.mask_name = subjects[i].value("mask_name", std::string("nsdgeneral"));
    if (!seen_subjects.insert(s.subject_id).second) {
      throw DataError("manifest: duplicate subject_id '" + s.subject_id + "'");
    }
    std::vector<fs::path> files;
    for (const auto& rel : subjects[i].value("recordings", json::array())) {
      fs::path file = resolve(m.root, rel.get<std::string>());
      if (!fs::exists(file)) {
        throw DataError("manifest: recording for subject '" + s.subject_id + "' not found: " + file.string());
      }
      files.push_back(std::move(file));
    }
    m.recordings[s.subject_id] = std::move(files);
    m.subjects.push_back(std::move(s));
  }

  const auto stimuli = require<json>(doc, "stimuli", "");
  if (!stimuli.is_array()) throw DataError("manifest: key 'stimuli' must be a list");
  for (std::size_t i = 0; i < stimuli.size(); ++i) {
    const std::string where = "stimuli[" + std::to_string(i) + "].";
    const auto id = require<std::string>(stimuli[i], "stimulus_id", where);
    StimulusEntry e;
    e.caption_file = resolve(m.root, require<std::string>(stimuli[i], "caption", where));
    e.image_file = resolve(m.root, require<std::string>(stimuli[i], "image", where));
    if (!fs::exists(e.caption_file)) {
      throw DataError("manifest: stimulus '" + id + "' references missing caption file " +
                      e.caption_file.string());
    }
    if (!fs::exists(e.image_file)) {
      throw DataError("manifest: stimulus '" + id + "' references missing image file " +
                      e.image_file.string());
    }
    if (!m.stimuli.emplace(id, std::move(e)).second) {
      throw DataError("manifest: duplicate stimulus_id '" + id + "'");
    }
  }

  const auto splits = require<json>(doc, "splits", "");
  const auto train = require<json>(splits, "train", "splits.");
  if (!train.is_object()) throw DataError("manifest: key 'splits.train' must be an object");
  for (const auto& [subj, ids] : train.items()) {
    if (!seen_subjects.count(subj)) {
      throw DataError("manifest: 'splits.train." + subj + "' names an unknown subject");
    }
    auto& list = m.train_ids[subj];
    for (const auto& id : ids) {
      const auto sid = id.get<std::string>();
      if (!m.stimuli.count(sid)) {
        throw DataError("manifest: 'splits.train." + subj + "' references unknown stimulus '" + sid + "'");
      }
      list.push_back(sid);
    }
  }
  for (const auto& id : require<json>(splits, "test", "splits.")) {
    const auto sid = id.get<std::string>();
    if (!m.stimuli.count(sid)) {
      throw DataError("manifest: 'splits.test' references unknown stimulus '" + sid + "'");
    }
    m.test_ids.push_back(sid);
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  const fs::path root = fs::absolute(path).parent_path();
  json doc;
  doc["schema_version"] = 1;
  doc["subjects"] = json::array();
  for (const auto& s : m.subjects) {
    json files = json::array();
    if (auto it = m.recordings.find(s.subject_id); it != m.recordings.end()) {
      for (const auto& f : it->second) files.push_back(relative_to(f, root));
    }
    doc["subjects"].push_back({{"subject_id", s.subject_id},
                               {"voxel_count", s.voxel_count},
                               {"mask_name", s.mask_name},
                               {"recordings", files}});
  }
  doc["stimuli"] = json::array();
  for (const auto& [id, e] : m.stimuli) {
    doc["stimuli"].push_back({{"stimulus_id", id},
                              {"caption", relative_to(e.caption_file, root)},
                              {"image", relative_to(e.image_file, root)}});
  }
  json train = json::object();
  for (const auto& [subj, ids] : m.train_ids) train[subj] = ids;
  doc["splits"] = {{"train", train}, {"test", m.test_ids}};
  write_text_file_atomic(path, doc.dump(2) + "\n");
}

FmriSample average_test_trials(std::span<const FmriSample> samples) {
  if (samples.empty()) throw DataError("average_test_trials: no samples");
  const FmriSample& first = samples.front();
  for (const auto& s : samples) {
    if (s.subject_id != first.subject_id) {
      throw DataError("average_test_trials: mixed subjects '" + first.subject_id + "' and '" +
                      s.subject_id + "'");
    }
    if (s.stimulus_id != first.stimulus_id) {
      throw DataError("average_test_trials: mixed stimuli '" + first.stimulus_id + "' and '" +
                      s.stimulus_id + "'");
    }
    if (s.voxels.size() != first.voxels.size()) {
      throw DataError("average_test_trials: voxel length mismatch for " + first.stimulus_id);
    }
  }
  // Accumulate in double over trials sorted by their values so the result does
  // not depend on input order.
  std::vector<const FmriSample*> ordered;
  for (const auto& s : samples) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(), [](const FmriSample* a, const FmriSample* b) {
    return std::lexicographical_compare(a->voxels.begin(), a->voxels.end(), b->voxels.begin(),
                                        b->voxels.end());
  });
  FmriSample out;
  out.subject_id = first.subject_id;
  out.stimulus_id = first.stimulus_id;
  out.trial_index = FmriSample::kAveragedTrial;
  out.voxels.resize(first.voxels.size());
  const double n = static_cast<double>(samples.size());
  for (std::size_t v = 0; v < out.voxels.size(); ++v) {
    double acc = 0.0;
    for (const FmriSample* s : ordered) acc += s->voxels[v];
    out.voxels[v] = static_cast<float>(acc / n);
  }
  return out;
}

DatasetSplits build_splits(const DatasetManifest& manifest) {
  const std::set<std::string> test(manifest.test_ids.begin(), manifest.test_ids.end());
  for (const auto& [subj, ids] : manifest.train_ids) {
    for (const auto& id : ids) {
      if (test.count(id)) {
        throw DataError("split overlap: stimulus '" + id + "' is both train and test for subject '" +
                        subj + "'");
      }
    }
  }

  // Subjects load independently.
  std::vector<std::future<std::vector<FmriSample>>> loads;
  for (const auto& s : manifest.subjects) {
    const auto files = manifest.recordings.count(s.subject_id) ? manifest.recordings.at(s.subject_id)
                                                               : std::vector<fs::path>{};
    loads.push_back(std::async(std::launch::async, [files, s] {
      std::vector<FmriSample> all;
      for (const auto& f : files) {
        auto part = read_voxel_container(f);
        for (auto& sample : part) {
          if (sample.subject_id != s.subject_id) {
            throw DataError(f.string() + ": record for subject '" + sample.subject_id +
                            "' in a container declared for '" + s.subject_id + "'");
          }
          if (sample.voxels.size() != s.voxel_count) {
            throw DataError(f.string() + ": stimulus '" + sample.stimulus_id + "' has " +
                            std::to_string(sample.voxels.size()) + " voxels, expected " +
                            std::to_string(s.voxel_count));
          }
          all.push_back(std::move(sample));
        }
      }
      return all;
    }));
  }

  DatasetSplits splits;
  for (std::size_t i = 0; i < manifest.subjects.size(); ++i) {
    const auto& subj = manifest.subjects[i].subject_id;
    std::vector<FmriSample> all = loads[i].get();
    std::set<std::string> train;
    if (auto it = manifest.train_ids.find(subj); it != manifest.train_ids.end()) {
      train.insert(it->second.begin(), it->second.end());
    }
    std::map<std::string, std::vector<FmriSample>> test_trials;
    for (auto& sample : all) {
      if (train.count(sample.stimulus_id)) {
        splits.train.push_back(std::move(sample));
      } else if (test.count(sample.stimulus_id)) {
        test_trials[sample.stimulus_id].push_back(std::move(sample));
      }
    }
    for (const auto& id : manifest.test_ids) {
      auto it = test_trials.find(id);
      if (it == test_trials.end()) {
        throw DataError("subject '" + subj + "' has no recordings for test stimulus '" + id + "'");
      }
      splits.test.push_back(average_test_trials(it->second));
    }
  }
  return splits;
}

namespace {

constexpr char kVoxelMagic[8] = {'N', 'C', 'V', 'O', 'X', 'E', 'L', '1'};

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace

std::vector<FmriSample> read_voxel_container(const fs::path& path) {
  const std::string data = read_text_file(path);
  if (data.size() < sizeof(kVoxelMagic) || std::memcmp(data.data(), kVoxelMagic, sizeof(kVoxelMagic)) != 0) {
    throw DataError(path.string() + ": not a voxel container");
  }
  std::size_t pos = sizeof(kVoxelMagic);
  auto take = [&](std::size_t n) {
    if (pos + n > data.size()) throw DataError(path.string() + ": truncated voxel record");
    const std::size_t at = pos;
    pos += n;
    return at;
  };
  auto uint = [&](int bytes) {
    const std::size_t at = take(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[at + i])) << (8 * i);
    }
    return v;
  };
  std::vector<FmriSample> out;
  while (pos < data.size()) {
    FmriSample s;
    const auto subj_len = uint(2);
    s.subject_id = data.substr(take(subj_len), subj_len);
    const auto stim_len = uint(2);
    s.stimulus_id = data.substr(take(stim_len), stim_len);
    s.trial_index = static_cast<std::int32_t>(static_cast<std::uint32_t>(uint(4)));
    const auto length = uint(4);
    s.voxels.resize(length);
    for (std::uint64_t i = 0; i < length; ++i) {
      const auto bits = static_cast<std::uint32_t>(uint(4));
      float f;
      std::memcpy(&f, &bits, sizeof(f));
      if (!std::isfinite(f)) {
        throw DataError(path.string() + ": non-finite voxel in stimulus '" + s.stimulus_id + "'");
      }
      s.voxels[i] = f;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_voxel_container(const fs::path& path, std::span<const FmriSample> samples) {
  std::string out(kVoxelMagic, sizeof(kVoxelMagic));
  for (const auto& s : samples) {
    put_le(out, s.subject_id.size(), 2);
    out += s.subject_id;
    put_le(out, s.stimulus_id.size(), 2);
    out += s.stimulus_id;
    put_le(out, static_cast<std::uint32_t>(s.trial_index), 4);
    put_le(out, s.voxels.size(), 4);
    for (float f : s.voxels) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      put_le(out, bits, 4);
    }
  }
  write_text_file_atomic(path, out);
}

std::vector<std::string> default_synthetic_vocab() {
  return {"bowl", "chair", "lamp", "clock", "vase", "book", "cup", "plant",
          "bottle", "apple", "ball", "shoe", "hat", "kite", "boat", "train"};
}

namespace {

struct Color {
  const char* name;
  float r, g, b;
};

constexpr Color kPalette[] = {
    {"red", 0.85f, 0.15f, 0.15f},  {"green", 0.2f, 0.7f, 0.25f}, {"blue", 0.2f, 0.3f, 0.85f},
    {"yellow", 0.9f, 0.85f, 0.2f}, {"white", 0.95f, 0.95f, 0.95f}, {"black", 0.08f, 0.08f, 0.08f},
};
constexpr int kPaletteSize = static_cast<int>(std::size(kPalette));

std::string article(const std::string& word) {
  return std::string("aeiou").find(word.front()) != std::string::npos ? "an" : "a";
}

void draw_object(Image& img, int slot, int slots, const std::string& noun, const Color& color) {
  const int size = img.width;
  const std::uint64_t h = fnv1a64(noun);
  const int cols = slots <= 2 ? slots : 2;
  const int rows = (slots + cols - 1) / cols;
  const int cell_w = size / cols, cell_h = size / rows;
  const int cx = (slot % cols) * cell_w + cell_w / 2;
  const int cy = (slot / cols) * cell_h + cell_h / 2;
  const int radius = std::max(2, static_cast<int>(std::min(cell_w, cell_h) * (0.25 + 0.15 * ((h >> 8) % 3) / 2.0)));
  const bool round = (h & 1) == 0;
  for (int y = std::max(0, cy - radius); y < std::min(size, cy + radius + 1); ++y) {
    for (int x = std::max(0, cx - radius); x < std::min(size, cx + radius + 1); ++x) {
      const int dx = x - cx, dy = y - cy;
      if (round && dx * dx + dy * dy > radius * radius) continue;
      img.at(x, y, 0) = color.r;
      img.at(x, y, 1) = color.g;
      img.at(x, y, 2) = color.b;
    }
  }
}

}  // namespace

DatasetManifest generate_synthetic_dataset(const SyntheticSpec& spec, const fs::path& out_dir) {
  if (spec.subjects <= 0) throw ConfigError("synthetic dataset: subjects must be positive");
  if (spec.stimuli <= 0) throw ConfigError("synthetic dataset: stimuli must be positive");
  if (spec.trials <= 0) throw ConfigError("synthetic dataset: trials must be positive");
  if (spec.voxel_counts.size() != 1 && spec.voxel_counts.size() != static_cast<std::size_t>(spec.subjects)) {
    throw ConfigError("synthetic dataset: need one voxel count per subject (or a single shared one)");
  }
  const std::vector<std::string> vocab = spec.vocab.empty() ? default_synthetic_vocab() : spec.vocab;
  const int per = spec.objects_per_stimulus;
  if (per <= 0 || per > static_cast<int>(vocab.size())) {
    throw ConfigError("synthetic dataset: objects_per_stimulus must be in [1, vocab size]");
  }
  const int test_count = spec.test_stimuli < 0 ? std::max(1, spec.stimuli / 5) : spec.test_stimuli;
  if (test_count > spec.stimuli) throw ConfigError("synthetic dataset: more test stimuli than stimuli");
  if (spec.image_size < 8) throw ConfigError("synthetic dataset: image_size must be >= 8");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t code_dim = vocab.size() + kPaletteSize;

  DatasetManifest m;
  m.root = fs::absolute(out_dir);
  fs::create_directories(m.root);

  // Per-stimulus semantic codes, captions and images.
  char idbuf[32];
  std::vector<std::string> stim_ids;
  std::vector<std::vector<double>> codes;
  for (int s = 0; s < spec.stimuli; ++s) {
    std::snprintf(idbuf, sizeof(idbuf), "stim%04d", s);
    const std::string id = idbuf;
    std::vector<int> order(vocab.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> code(code_dim, 0.0);
    Image img(spec.image_size, spec.image_size, 3, 0.5f);
    std::string caption;
    for (int k = 0; k < per; ++k) {
      const std::string& noun = vocab[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
      const int color = static_cast<int>(rng() % kPaletteSize);
      code[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = 1.0;
      code[vocab.size() + static_cast<std::size_t>(color)] += 1.0;
      const std::string color_name = kPalette[color].name;
      if (k > 0) caption += " and ";
      caption += article(color_name) + " " + color_name + " " + noun;
      draw_object(img, k, per, noun, kPalette[color]);
    }
    caption += ".";
    caption[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(caption[0])));
    for (float& v : img.data) {
      v = std::clamp(v + static_cast<float>(0.01 * normal(rng)), 0.0f, 1.0f);
    }
    img = quantize8(img);

    StimulusEntry e{m.root / "captions" / (id + ".txt"), m.root / "images" / (id + ".ppm")};
    write_text_file_atomic(e.caption_file, caption + "\n");
    write_image(img, e.image_file);
    m.stimuli[id] = e;
    stim_ids.push_back(id);
    codes.push_back(std::move(code));
  }

  std::vector<int> perm(static_cast<std::size_t>(spec.stimuli));
  for (int i = 0; i < spec.stimuli; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::set<std::string> test_set;
  for (int i = 0; i < test_count; ++i) test_set.insert(stim_ids[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
  m.test_ids.assign(test_set.begin(), test_set.end());
  for (const auto& id : m.test_ids) {
    write_image(read_image(m.stimuli[id].image_file), m.root / "gt_test" / (id + ".ppm"));
  }

  for (int si = 0; si < spec.subjects; ++si) {
    SubjectConfig subj;
    std::snprintf(idbuf, sizeof(idbuf), "subj%02d", si + 1);
    subj.subject_id = idbuf;
    subj.voxel_count = spec.voxel_counts.size() == 1 ? spec.voxel_counts[0]
                                                     : spec.voxel_counts[static_cast<std::size_t>(si)];
    if (subj.voxel_count == 0) throw ConfigError("synthetic dataset: voxel counts must be positive");

    // Fixed random encoding model for this subject.
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(2 * per));
    std::vector<double> weights(subj.voxel_count * code_dim);
    for (double& w : weights) w = normal(rng) * w_scale;

    std::vector<FmriSample> samples;
    auto& train = m.train_ids[subj.subject_id];
    for (std::size_t s = 0; s < stim_ids.size(); ++s) {
      if (!test_set.count(stim_ids[s])) train.push_back(stim_ids[s]);
      for (int t = 0; t < spec.trials; ++t) {
        FmriSample sample{subj.subject_id, stim_ids[s], t, std::vector<float>(subj.voxel_count)};
        for (std::size_t v = 0; v < subj.voxel_count; ++v) {
          double acc = 0.0;
          for (std::size_t c = 0; c < code_dim; ++c) acc += weights[v * code_dim + c] * codes[s][c];
          sample.voxels[v] = static_cast<float>(acc + spec.noise * normal(rng));
        }
        samples.push_back(std::move(sample));
      }
    }
    const fs::path file = m.root / "fmri" / (subj.subject_id + ".ncvx");
    write_voxel_container(file, samples);
    m.recordings[subj.subject_id] = {file};
    m.subjects.push_back(std::move(subj));
  }

  save_manifest(m, m.root / "manifest.json");
  return load_manifest(m.root / "manifest.json");
}

}  // namespace neurocap
