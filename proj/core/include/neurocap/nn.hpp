#pragma once

#include "neurocap/autograd.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace neurocap::nn {

struct NamedParameter {
  std::string name;
  ag::Parameter* param;
};

using ParameterList = std::vector<NamedParameter>;

// Gaussian init with the given std; deterministic for a given generator state.
ag::Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

class Linear {
 public:
  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng);

  ag::Var operator()(const ag::Var& x) const;
  void collect(const std::string& prefix, ParameterList& out);

  Eigen::Index in_features() const { return weight_.value().rows(); }
  Eigen::Index out_features() const { return weight_.value().cols(); }

 private:
  ag::Parameter weight_;  // in x out
  ag::Parameter bias_;    // 1 x out
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index dim);

  ag::Var operator()(const ag::Var& x) const;
  void collect(const std::string& prefix, ParameterList& out);

 private:
  ag::Parameter gain_;
  ag::Parameter bias_;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(Eigen::Index dim, int heads, std::mt19937_64& rng);

  ag::Var operator()(const ag::Var& x, bool causal) const;
  void collect(const std::string& prefix, ParameterList& out);

 private:
  int heads_ = 1;
  Linear query_, key_, value_, out_;
};

// Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(Eigen::Index dim, int heads, int mlp_ratio, std::mt19937_64& rng);

  ag::Var operator()(const ag::Var& x, bool causal) const;
  void collect(const std::string& prefix, ParameterList& out);

 private:
  LayerNorm ln_attn_, ln_mlp_;
  MultiHeadAttention attn_;
  Linear fc_in_, fc_out_;
};

}  // namespace neurocap::nn
