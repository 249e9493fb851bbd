#pragma once

#include "neurocap/image.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace neurocap {

class FeatureExtractorBackend {
 public:
  virtual ~FeatureExtractorBackend() = default;
  virtual std::string id() const = 0;
  // `layer` may be empty for the backend's default layer.
  virtual Eigen::VectorXd extract(const Image& image, std::string_view layer = {}) = 0;
  virtual bool concurrency_safe() const { return true; }
};

// Seeded random-projection network: thumbnail -> linear -> tanh -> linear.
class MockFeatureExtractor : public FeatureExtractorBackend {
 public:
  MockFeatureExtractor(std::string id, std::uint64_t seed, int thumbnail_side, int hidden, int dim);

  std::string id() const override { return id_; }
  Eigen::VectorXd extract(const Image& image, std::string_view layer = {}) override;

 private:
  std::string id_;
  int side_;
  Eigen::MatrixXd w1_;
  Eigen::MatrixXd w2_;
};

// alex2, alex5, incep, clip, eff, swav
const std::vector<std::string>& standard_extractor_ids();
std::unique_ptr<FeatureExtractorBackend> make_mock_extractor(const std::string& id, std::uint64_t seed = 0);
std::map<std::string, std::unique_ptr<FeatureExtractorBackend>> make_mock_extractors(std::uint64_t seed = 0);

enum class Comparator { kCorrelation, kCosine };
enum class DistanceMetric { kCorrelation, kEuclidean };

std::string to_string(Comparator c);
// Cosine for clip, correlation for the rest.
Comparator comparator_for(std::string_view extractor_id);

// Pearson correlation; DataError when either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

// Pearson correlation over every pixel value; both images must share a shape.
double pixcorr(const Image& reconstructed, const Image& ground_truth);

// Mean SSIM on grayscale (RGB is converted first) with an 11x11 Gaussian
// window (sigma 1.5), reflect padding, population statistics, data range 1,
// C1 = 0.01^2, C2 = 0.03^2; the 5-pixel border is excluded from the mean.
double ssim(const Image& reconstructed, const Image& ground_truth);

// Percentage of ordered pairs (i, j != i) where recon_i is more similar to
// gt_i than to gt_j; ties count half.
double two_way_identification(std::span<const Eigen::VectorXd> recon_features,
                              std::span<const Eigen::VectorXd> gt_features, Comparator comparator);

double feature_distance(const Eigen::VectorXd& recon_features, const Eigen::VectorXd& gt_features,
                        DistanceMetric metric = DistanceMetric::kCorrelation);

// Report columns, in table order.
enum class Metric { kPixCorr, kSsim, kAlex2, kAlex5, kIncep, kClip, kEff, kSwav };
inline constexpr std::size_t kMetricCount = 8;
std::string_view metric_key(Metric m);    // "pixcorr", "ssim", "alex2", ...
std::string_view metric_label(Metric m);  // "PixCorr↑", "SSIM↑", "Alex(2)↑", ...
bool metric_is_percentage(Metric m);

struct MetricRow {
  std::string method;
  std::array<std::optional<double>, kMetricCount> values;

  std::optional<double>& operator[](Metric m) { return values[static_cast<std::size_t>(m)]; }
  const std::optional<double>& operator[](Metric m) const { return values[static_cast<std::size_t>(m)]; }
};

struct MetricTable {
  std::string name;  // subject id, or "mean"
  std::vector<MetricRow> rows;
};

struct EvalReport {
  std::vector<MetricTable> subjects;
  MetricTable mean;
  std::map<std::string, std::string> provenance;
};

// Per method, the column-wise arithmetic mean over the subject tables that
// contain it; a column is missing unless every such subject has it.
MetricTable mean_table(std::span<const MetricTable> subjects);
EvalReport assemble_report(std::vector<MetricTable> subjects, std::map<std::string, std::string> provenance = {});
// Subject tables with the same name are merged row-wise; the mean is recomputed.
EvalReport merge_reports(std::span<const EvalReport> reports);

// ".254" for fractions, "94.2%" for percentages, "/" when missing.
std::string format_metric(Metric m, const std::optional<double>& value);
std::string render_row(const MetricRow& row);
std::string render_text(const EvalReport& report);
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

struct EvalConfig {
  std::string method = "neurocap";
  int resolution = 425;  // pixel metrics are computed at resolution x resolution
  int workers = 1;
};

// Images for one subject, aligned by position.
MetricRow evaluate_pairs(std::span<const Image> reconstructed, std::span<const Image> ground_truth,
                         const std::map<std::string, std::unique_ptr<FeatureExtractorBackend>>& extractors,
                         const EvalConfig& config);

// recon_dir holds one subdirectory per subject (or the images directly, for
// a single unnamed subject); gt_dir holds <stimulus>.ppm files. Every
// stimulus must be present on both sides.
EvalReport evaluate_suite(const std::filesystem::path& recon_dir, const std::filesystem::path& gt_dir,
                          const std::map<std::string, std::unique_ptr<FeatureExtractorBackend>>& extractors,
                          const EvalConfig& config);

}  // namespace neurocap
