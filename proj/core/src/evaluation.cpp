#include "neurocap/evaluation.hpp"

#include "neurocap/error.hpp"
#include "neurocap/embedding.hpp"
#include "neurocap/fusion.hpp"
#include "neurocap/parallel.hpp"
#include "neurocap/text_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

namespace neurocap {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

Eigen::MatrixXd seeded_gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
  }
  return m;
}

}  // namespace

MockFeatureExtractor::MockFeatureExtractor(std::string id, std::uint64_t seed, int thumbnail_side, int hidden,
                                           int dim)
    : id_(std::move(id)), side_(thumbnail_side) {
  if (thumbnail_side < 1 || hidden < 1 || dim < 1) throw ConfigError("mock extractor: invalid shape");
  std::mt19937_64 rng(seed ^ fnv1a64(id_));
  w1_ = seeded_gaussian(hidden, static_cast<Eigen::Index>(thumbnail_side) * thumbnail_side * 3, rng);
  w2_ = seeded_gaussian(dim, hidden, rng);
}

Eigen::VectorXd MockFeatureExtractor::extract(const Image& image, std::string_view layer) {
  if (!layer.empty() && layer != id_) {
    throw ConfigError("extractor '" + id_ + "' has no layer '" + std::string(layer) + "'");
  }
  const Eigen::VectorXd hidden = (w1_ * image_thumbnail(image, side_)).array().tanh();
  return w2_ * hidden;
}

const std::vector<std::string>& standard_extractor_ids() {
  static const std::vector<std::string> ids = {"alex2", "alex5", "incep", "clip", "eff", "swav"};
  return ids;
}

std::unique_ptr<FeatureExtractorBackend> make_mock_extractor(const std::string& id, std::uint64_t seed) {
  struct Shape {
    int side, hidden, dim;
  };
  static const std::map<std::string, Shape> shapes = {
      {"alex2", {16, 96, 64}}, {"alex5", {12, 64, 48}}, {"incep", {10, 64, 64}},
      {"clip", {16, 64, 64}},  {"eff", {8, 48, 32}},    {"swav", {12, 48, 32}}};
  auto it = shapes.find(id);
  if (it == shapes.end()) throw ConfigError("unknown feature extractor '" + id + "'");
  return std::make_unique<MockFeatureExtractor>(id, seed, it->second.side, it->second.hidden, it->second.dim);
}

std::map<std::string, std::unique_ptr<FeatureExtractorBackend>> make_mock_extractors(std::uint64_t seed) {
  std::map<std::string, std::unique_ptr<FeatureExtractorBackend>> out;
  for (const auto& id : standard_extractor_ids()) out.emplace(id, make_mock_extractor(id, seed));
  return out;
}

std::string to_string(Comparator c) { return c == Comparator::kCosine ? "cosine" : "correlation"; }

Comparator comparator_for(std::string_view extractor_id) {
  return extractor_id == "clip" ? Comparator::kCosine : Comparator::kCorrelation;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DataError("correlation: length mismatch (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
  }
  if (a.size() < 2) throw DataError("correlation: need at least two values");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw DataError("correlation is undefined for a zero-variance input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw DataError(std::string(what) + ": images differ in shape (" + std::to_string(a.width) + "x" +
                    std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " + std::to_string(b.width) +
                    "x" + std::to_string(b.height) + "x" + std::to_string(b.channels) + ")");
  }
}

using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr int kSsimRadius = 5;  // int(3.5 * 1.5 + 0.5)

const std::array<double, 2 * kSsimRadius + 1>& ssim_kernel() {
  static const auto kernel = [] {
    std::array<double, 2 * kSsimRadius + 1> k{};
    double total = 0.0;
    for (int i = -kSsimRadius; i <= kSsimRadius; ++i) {
      k[i + kSsimRadius] = std::exp(-0.5 * i * i / (1.5 * 1.5));
      total += k[i + kSsimRadius];
    }
    for (double& v : k) v /= total;
    return k;
  }();
  return kernel;
}

// Half-sample symmetric extension: d c b a | a b c d | d c b a
int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

Plane gaussian_filter(const Plane& in) {
  const auto& k = ssim_kernel();
  const int h = static_cast<int>(in.rows()), w = static_cast<int>(in.cols());
  Plane tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -kSsimRadius; t <= kSsimRadius; ++t) acc += k[t + kSsimRadius] * in(reflect(y + t, h), x);
      tmp(y, x) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -kSsimRadius; t <= kSsimRadius; ++t) acc += k[t + kSsimRadius] * tmp(y, reflect(x + t, w));
      out(y, x) = acc;
    }
  }
  return out;
}

Plane gray_plane(const Image& img) {
  const Image g = img.channels == 1 ? img : to_gray(img);
  Plane p(g.height, g.width);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) p(y, x) = static_cast<double>(g.at(x, y, 0));
  }
  return p;
}

Image as_rgb(const Image& img) {
  if (img.channels == 3) return img;
  Image out(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.data[i * 3 + c] = img.data[i];
  }
  return out;
}

}  // namespace

double pixcorr(const Image& reconstructed, const Image& ground_truth) {
  require_same_shape(reconstructed, ground_truth, "pixcorr");
  const std::vector<double> a(reconstructed.data.begin(), reconstructed.data.end());
  const std::vector<double> b(ground_truth.data.begin(), ground_truth.data.end());
  return pearson(a, b);
}

double ssim(const Image& reconstructed, const Image& ground_truth) {
  if (reconstructed.width != ground_truth.width || reconstructed.height != ground_truth.height) {
    throw DataError("ssim: images differ in size");
  }
  constexpr int win = 2 * kSsimRadius + 1;
  if (reconstructed.width < win || reconstructed.height < win) {
    throw DataError("ssim: images must be at least " + std::to_string(win) + "x" + std::to_string(win));
  }
  const Plane x = gray_plane(reconstructed), y = gray_plane(ground_truth);
  const Plane ux = gaussian_filter(x), uy = gaussian_filter(y);
  const Plane uxx = gaussian_filter(x * x), uyy = gaussian_filter(y * y), uxy = gaussian_filter(x * y);
  const Plane vx = uxx - ux * ux, vy = uyy - uy * uy, vxy = uxy - ux * uy;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const Plane s = ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  const int h = static_cast<int>(s.rows()), w = static_cast<int>(s.cols());
  double total = 0.0;
  for (int r = kSsimRadius; r < h - kSsimRadius; ++r) {
    for (int c = kSsimRadius; c < w - kSsimRadius; ++c) total += s(r, c);
  }
  return total / (static_cast<double>(h - 2 * kSsimRadius) * (w - 2 * kSsimRadius));
}

double two_way_identification(std::span<const Eigen::VectorXd> recon_features,
                              std::span<const Eigen::VectorXd> gt_features, Comparator comparator) {
  const std::size_t n = recon_features.size();
  if (n != gt_features.size()) throw DataError("two-way identification: list lengths differ");
  if (n < 2) throw DataError("two-way identification needs at least 2 items, got " + std::to_string(n));
  auto sim = [comparator](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (comparator == Comparator::kCosine) return cosine_similarity(a, b);
    return pearson(as_span(a), as_span(b));
  };
  double successes = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double own = sim(recon_features[i], gt_features[i]);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double other = sim(recon_features[i], gt_features[j]);
      if (own > other) successes += 1.0;
      else if (own == other) successes += 0.5;
    }
  }
  return 100.0 * successes / static_cast<double>(n * (n - 1));
}

double feature_distance(const Eigen::VectorXd& recon_features, const Eigen::VectorXd& gt_features,
                        DistanceMetric metric) {
  if (recon_features.size() != gt_features.size()) throw DataError("feature_distance: dimension mismatch");
  if (metric == DistanceMetric::kEuclidean) return (recon_features - gt_features).norm();
  return std::max(0.0, 1.0 - pearson(as_span(recon_features), as_span(gt_features)));
}

std::string_view metric_key(Metric m) {
  static constexpr std::array<std::string_view, kMetricCount> keys = {"pixcorr", "ssim", "alex2", "alex5",
                                                                      "incep",   "clip", "eff",   "swav"};
  return keys[static_cast<std::size_t>(m)];
}

std::string_view metric_label(Metric m) {
  static constexpr std::array<std::string_view, kMetricCount> labels = {
      "PixCorr↑", "SSIM↑", "Alex(2)↑", "Alex(5)↑", "Incep↑", "CLIP↑", "Eff↓", "SwAV↓"};
  return labels[static_cast<std::size_t>(m)];
}

bool metric_is_percentage(Metric m) {
  return m == Metric::kAlex2 || m == Metric::kAlex5 || m == Metric::kIncep || m == Metric::kClip;
}

MetricTable mean_table(std::span<const MetricTable> subjects) {
  MetricTable out;
  out.name = "mean";
  std::vector<std::string> methods;
  for (const auto& t : subjects) {
    for (const auto& r : t.rows) {
      if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    }
  }
  for (const auto& method : methods) {
    MetricRow row;
    row.method = method;
    for (std::size_t c = 0; c < kMetricCount; ++c) {
      double total = 0.0;
      int count = 0;
      bool complete = true;
      for (const auto& t : subjects) {
        auto it = std::find_if(t.rows.begin(), t.rows.end(), [&](const MetricRow& r) { return r.method == method; });
        if (it == t.rows.end()) continue;
        if (!it->values[c]) {
          complete = false;
          break;
        }
        total += *it->values[c];
        ++count;
      }
      if (complete && count > 0) row.values[c] = total / count;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

EvalReport assemble_report(std::vector<MetricTable> subjects, std::map<std::string, std::string> provenance) {
  EvalReport r;
  r.subjects = std::move(subjects);
  r.mean = mean_table(r.subjects);
  r.provenance = std::move(provenance);
  return r;
}

EvalReport merge_reports(std::span<const EvalReport> reports) {
  std::vector<MetricTable> subjects;
  std::map<std::string, std::string> provenance;
  for (const auto& rep : reports) {
    for (const auto& t : rep.subjects) {
      auto it = std::find_if(subjects.begin(), subjects.end(), [&](const MetricTable& s) { return s.name == t.name; });
      if (it == subjects.end()) {
        subjects.push_back(t);
        continue;
      }
      for (const auto& row : t.rows) {
        const bool dup = std::any_of(it->rows.begin(), it->rows.end(),
                                     [&](const MetricRow& r) { return r.method == row.method; });
        if (dup) throw DataError("merge: method '" + row.method + "' appears twice for subject '" + t.name + "'");
        it->rows.push_back(row);
      }
    }
    for (const auto& [k, v] : rep.provenance) {
      auto [pos, inserted] = provenance.emplace(k, v);
      if (!inserted && pos->second != v) pos->second += "; " + v;
    }
  }
  return assemble_report(std::move(subjects), std::move(provenance));
}

std::string format_metric(Metric m, const std::optional<double>& value) {
  if (!value) return "/";
  char buf[64];
  if (metric_is_percentage(m)) {
    std::snprintf(buf, sizeof(buf), "%.1f%%", *value);
    return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.3f", *value);
  std::string s = buf;
  if (s.rfind("0.", 0) == 0) s.erase(0, 1);
  else if (s.rfind("-0.", 0) == 0) s.erase(1, 1);
  return s;
}

std::string render_row(const MetricRow& row) {
  std::string out = "| " + row.method + " |";
  for (std::size_t c = 0; c < kMetricCount; ++c) out += " " + format_metric(static_cast<Metric>(c), row.values[c]) + " |";
  return out;
}

namespace {

std::string render_table(const MetricTable& t) {
  std::string out = "| Method |";
  for (std::size_t c = 0; c < kMetricCount; ++c) out += " " + std::string(metric_label(static_cast<Metric>(c))) + " |";
  out += "\n|---|";
  for (std::size_t c = 0; c < kMetricCount; ++c) out += "---|";
  out += "\n";
  for (const auto& r : t.rows) out += render_row(r) + "\n";
  return out;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json table_to_json(const MetricTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json row = {{"method", r.method}};
    for (std::size_t c = 0; c < kMetricCount; ++c) {
      row[std::string(metric_key(static_cast<Metric>(c)))] = optional_json(r.values[c]);
    }
    rows.push_back(std::move(row));
  }
  return {{"name", t.name}, {"rows", rows}};
}

MetricTable table_from_json(const json& j) {
  MetricTable t;
  t.name = j.at("name").get<std::string>();
  for (const auto& row : j.at("rows")) {
    MetricRow r;
    r.method = row.at("method").get<std::string>();
    for (const auto& [key, value] : row.items()) {
      if (key == "method") continue;
      std::size_t c = 0;
      while (c < kMetricCount && metric_key(static_cast<Metric>(c)) != key) ++c;
      if (c == kMetricCount) throw DataError("report: unknown metric column '" + key + "'");
      if (!value.is_null()) r.values[c] = value.get<double>();
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

}  // namespace

std::string render_text(const EvalReport& report) {
  std::string out = "# Evaluation report\n";
  for (const auto& t : report.subjects) out += "\n## Subject " + t.name + "\n\n" + render_table(t);
  out += "\n## Mean over " + std::to_string(report.subjects.size()) + " subject" +
         (report.subjects.size() == 1 ? "" : "s") + "\n\n" + render_table(report.mean);
  if (!report.provenance.empty()) {
    out += "\n## Provenance\n\n";
    for (const auto& [k, v] : report.provenance) out += "- " + k + ": " + v + "\n";
  }
  return out;
}

std::string report_to_json(const EvalReport& report) {
  json j = {{"schema_version", 1}, {"provenance", report.provenance}};
  j["subjects"] = json::array();
  for (const auto& t : report.subjects) j["subjects"].push_back(table_to_json(t));
  j["mean"] = table_to_json(report.mean);
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("schema_version", 0) != 1) throw DataError("report: unsupported schema_version");
    std::vector<MetricTable> subjects;
    for (const auto& t : j.at("subjects")) subjects.push_back(table_from_json(t));
    // The mean is always recomputed from the subject tables.
    return assemble_report(std::move(subjects),
                           j.value("provenance", std::map<std::string, std::string>{}));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

MetricRow evaluate_pairs(std::span<const Image> reconstructed, std::span<const Image> ground_truth,
                         const std::map<std::string, std::unique_ptr<FeatureExtractorBackend>>& extractors,
                         const EvalConfig& config) {
  if (reconstructed.size() != ground_truth.size()) throw DataError("evaluate: unequal numbers of images");
  const std::size_t n = reconstructed.size();
  if (n == 0) throw DataError("evaluate: no image pairs");
  for (const auto& id : standard_extractor_ids()) {
    if (!extractors.count(id)) throw ConfigError("evaluate: no feature extractor for '" + id + "'");
  }

  std::vector<double> pix(n), ss(n);
  const int res = config.resolution;
  parallel_for(n, static_cast<std::size_t>(config.workers), [&](std::size_t i) {
    const Image r = as_rgb(resize_bilinear(reconstructed[i], res, res));
    const Image g = as_rgb(resize_bilinear(ground_truth[i], res, res));
    pix[i] = pixcorr(r, g);
    ss[i] = ssim(r, g);
  });

  MetricRow row;
  row.method = config.method;
  double pix_mean = 0.0, ss_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pix_mean += pix[i];
    ss_mean += ss[i];
  }
  row[Metric::kPixCorr] = pix_mean / n;
  row[Metric::kSsim] = ss_mean / n;

  const std::array<std::pair<const char*, Metric>, 6> columns = {{{"alex2", Metric::kAlex2},
                                                                  {"alex5", Metric::kAlex5},
                                                                  {"incep", Metric::kIncep},
                                                                  {"clip", Metric::kClip},
                                                                  {"eff", Metric::kEff},
                                                                  {"swav", Metric::kSwav}}};
  for (const auto& [id, metric] : columns) {
    FeatureExtractorBackend& ex = *extractors.at(id);
    std::vector<Eigen::VectorXd> rf(n), gf(n);
    const std::size_t workers = ex.concurrency_safe() ? static_cast<std::size_t>(config.workers) : 1;
    parallel_for(n, workers, [&](std::size_t i) {
      rf[i] = ex.extract(reconstructed[i]);
      gf[i] = ex.extract(ground_truth[i]);
    });
    if (metric == Metric::kEff || metric == Metric::kSwav) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += feature_distance(rf[i], gf[i], DistanceMetric::kCorrelation);
      row[metric] = total / n;
    } else if (n >= 2) {
      row[metric] = two_way_identification(rf, gf, comparator_for(id));
    }
  }
  return row;
}

namespace {

std::map<std::string, fs::path> list_images(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext == ".ppm" || ext == ".pgm") out.emplace(e.path().stem().string(), e.path());
  }
  return out;
}

}  // namespace

EvalReport evaluate_suite(const fs::path& recon_dir, const fs::path& gt_dir,
                          const std::map<std::string, std::unique_ptr<FeatureExtractorBackend>>& extractors,
                          const EvalConfig& config) {
  if (!fs::is_directory(recon_dir)) throw DataError("recon directory not found: " + recon_dir.string());
  if (!fs::is_directory(gt_dir)) throw DataError("ground-truth directory not found: " + gt_dir.string());
  if (config.resolution < 11) throw ConfigError("evaluation resolution must be >= 11");

  const auto gt = list_images(gt_dir);
  if (gt.empty()) throw DataError("no ground-truth images in " + gt_dir.string());

  std::map<std::string, fs::path> subject_dirs;
  for (const auto& e : fs::directory_iterator(recon_dir)) {
    if (e.is_directory()) subject_dirs.emplace(e.path().filename().string(), e.path());
  }
  if (subject_dirs.empty()) subject_dirs.emplace("all", recon_dir);

  std::vector<std::string> problems;
  std::map<std::string, std::map<std::string, fs::path>> recon;
  for (const auto& [subject, dir] : subject_dirs) {
    recon[subject] = list_images(dir);
    for (const auto& [id, path] : gt) {
      if (!recon[subject].count(id)) problems.push_back(subject + "/" + id + " (missing reconstruction)");
    }
    for (const auto& [id, path] : recon[subject]) {
      if (!gt.count(id)) problems.push_back(subject + "/" + id + " (no ground truth)");
    }
  }
  if (!problems.empty()) {
    std::string list;
    for (const auto& p : problems) list += "\n  " + p;
    throw DataError("unpaired stimuli (" + std::to_string(problems.size()) + "):" + list);
  }

  std::vector<Image> gt_images;
  for (const auto& [id, path] : gt) gt_images.push_back(read_image(path));

  std::vector<MetricTable> tables;
  std::set<std::string> adapters, weights, checkpoints;
  for (const auto& [subject, images] : recon) {
    std::vector<Image> recon_images;
    for (const auto& [id, path] : images) {
      recon_images.push_back(read_image(path));
      const fs::path sidecar = fs::path(path).replace_extension(".json");
      if (fs::exists(sidecar)) {
        const auto p = read_provenance(sidecar);
        adapters.insert(p.adapter_id);
        weights.insert(format_double(p.fusion_weight));
        checkpoints.insert(p.checkpoint_id);
      }
    }
    MetricTable t;
    t.name = subject;
    t.rows.push_back(evaluate_pairs(recon_images, gt_images, extractors, config));
    tables.push_back(std::move(t));
  }

  auto join = [](const std::set<std::string>& s) {
    std::string out;
    for (const auto& v : s) out += (out.empty() ? "" : ", ") + v;
    return out;
  };
  std::map<std::string, std::string> provenance = {
      {"resolution", std::to_string(config.resolution)},
      {"ssim", "gray, gaussian sigma 1.5, 11x11, reflect, data_range 1"},
      {"stimuli", std::to_string(gt.size())}};
  for (const auto& id : standard_extractor_ids()) {
    const std::string rule = id == "eff" || id == "swav" ? "correlation distance" : to_string(comparator_for(id));
    provenance["extractor." + id] = extractors.at(id)->id() + " (" + rule + ")";
  }
  if (!adapters.empty()) provenance["adapter"] = join(adapters);
  if (!weights.empty()) provenance["fusion_weight"] = join(weights);
  if (!checkpoints.empty()) provenance["checkpoint"] = join(checkpoints);
  return assemble_report(std::move(tables), std::move(provenance));
}

}  // namespace neurocap
