#pragma once

#include "neurocap/image.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <string_view>

namespace neurocap {

// A point in the joint text/image embedding space.
using EmbeddingVector = Eigen::VectorXd;

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;

  virtual std::string id() const = 0;
  virtual Eigen::Index dim() const = 0;
  virtual EmbeddingVector embed_text(std::string_view text) = 0;
  virtual EmbeddingVector embed_image(const Image& image) = 0;
  virtual bool concurrency_safe() const { return true; }
};

// Deterministic stand-in for a joint text/image encoder.
//   text:  sum of seeded Gaussian vectors, one per word, plus a start vector
//          (so the norm is never zero)
//   image: fixed seeded projection of a 16x16 RGB thumbnail, centered at 0.5
class HashedEmbeddingBackend : public EmbeddingBackend {
 public:
  explicit HashedEmbeddingBackend(Eigen::Index dim = 64, std::uint64_t seed = 0);

  std::string id() const override { return "hashed-embed"; }
  Eigen::Index dim() const override { return dim_; }
  EmbeddingVector embed_text(std::string_view text) override;
  EmbeddingVector embed_image(const Image& image) override;

 private:
  EmbeddingVector word_vector(std::string_view word) const;

  Eigen::Index dim_;
  std::uint64_t seed_;
  Eigen::MatrixXd projection_;  // dim x (16*16*3)
};

// Throws DataError when either vector has zero norm or the sizes differ.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// Thumbnail used by the hashed image projection and the mock extractors.
Eigen::VectorXd image_thumbnail(const Image& image, int side);

}  // namespace neurocap
