#include "neurocap/embedding.hpp"

#include "neurocap/error.hpp"
#include "neurocap/text_util.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace neurocap {

namespace {

constexpr int kThumb = 16;

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
  }
  return m;
}

}  // namespace

Eigen::VectorXd image_thumbnail(const Image& image, int side) {
  if (image.empty()) throw DataError("cannot embed an empty image");
  const Image small = resize_bilinear(image, side, side);
  Eigen::VectorXd out(static_cast<Eigen::Index>(side) * side * 3);
  Eigen::Index k = 0;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = small.channels == 1 ? 0 : c;
        out(k++) = static_cast<double>(small.at(x, y, src)) - 0.5;
      }
    }
  }
  return out;
}

HashedEmbeddingBackend::HashedEmbeddingBackend(Eigen::Index dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim <= 0) throw ConfigError("embedding dim must be positive");
  std::mt19937_64 rng(seed ^ 0x696d6167650aULL);
  const Eigen::Index in = kThumb * kThumb * 3;
  projection_ = gaussian(dim, in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

EmbeddingVector HashedEmbeddingBackend::word_vector(std::string_view word) const {
  std::mt19937_64 rng(seed_ ^ fnv1a64(word));
  return gaussian(dim_, 1, 1.0, rng).col(0);
}

EmbeddingVector HashedEmbeddingBackend::embed_text(std::string_view text) {
  EmbeddingVector v = word_vector("<s>");
  for (const auto& w : split_words(text)) v += word_vector(w);
  return v;
}

EmbeddingVector HashedEmbeddingBackend::embed_image(const Image& image) {
  return projection_ * image_thumbnail(image, kThumb);
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.size() != b.size()) {
    throw DataError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
  }
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw DataError("cosine: zero-norm vector");
  if (!std::isfinite(na) || !std::isfinite(nb)) throw DataError("cosine: non-finite vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

}  // namespace neurocap
