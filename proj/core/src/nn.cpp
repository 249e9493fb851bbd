#include "neurocap/nn.hpp"

#include "neurocap/error.hpp"

#include <cmath>

namespace neurocap::nn {

ag::Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  ag::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng)
    : weight_(random_normal(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
      bias_(ag::Matrix::Zero(1, out)) {}

ag::Var Linear::operator()(const ag::Var& x) const {
  return ag::add_row(ag::matmul(x, weight_.var()), bias_.var());
}

void Linear::collect(const std::string& prefix, ParameterList& out) {
  out.push_back({prefix + ".weight", &weight_});
  out.push_back({prefix + ".bias", &bias_});
}

LayerNorm::LayerNorm(Eigen::Index dim)
    : gain_(ag::Matrix::Ones(1, dim)), bias_(ag::Matrix::Zero(1, dim)) {}

ag::Var LayerNorm::operator()(const ag::Var& x) const {
  return ag::layer_norm(x, gain_.var(), bias_.var());
}

void LayerNorm::collect(const std::string& prefix, ParameterList& out) {
  out.push_back({prefix + ".gain", &gain_});
  out.push_back({prefix + ".bias", &bias_});
}

MultiHeadAttention::MultiHeadAttention(Eigen::Index dim, int heads, std::mt19937_64& rng)
    : heads_(heads),
      query_(dim, dim, rng),
      key_(dim, dim, rng),
      value_(dim, dim, rng),
      out_(dim, dim, rng) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention: embed dim " + std::to_string(dim) +
                      " is not divisible by heads " + std::to_string(heads));
  }
}

ag::Var MultiHeadAttention::operator()(const ag::Var& x, bool causal) const {
  const Eigen::Index dim = x.cols();
  const Eigen::Index head_dim = dim / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const ag::Var q = query_(x), k = key_(x), v = value_(x);
  std::vector<ag::Var> outputs;
  outputs.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const Eigen::Index c = h * head_dim;
    const ag::Var qh = ag::slice_cols(q, c, head_dim);
    const ag::Var kh = ag::slice_cols(k, c, head_dim);
    const ag::Var vh = ag::slice_cols(v, c, head_dim);
    const ag::Var scores = ag::scale(ag::matmul(qh, ag::transpose(kh)), inv_sqrt);
    outputs.push_back(ag::matmul(ag::softmax_rows(scores, causal), vh));
  }
  return out_(heads_ == 1 ? outputs.front() : ag::concat_cols(outputs));
}

void MultiHeadAttention::collect(const std::string& prefix, ParameterList& out) {
  query_.collect(prefix + ".query", out);
  key_.collect(prefix + ".key", out);
  value_.collect(prefix + ".value", out);
  out_.collect(prefix + ".out", out);
}

TransformerBlock::TransformerBlock(Eigen::Index dim, int heads, int mlp_ratio, std::mt19937_64& rng)
    : ln_attn_(dim),
      ln_mlp_(dim),
      attn_(dim, heads, rng),
      fc_in_(dim, dim * mlp_ratio, rng),
      fc_out_(dim * mlp_ratio, dim, rng) {}

ag::Var TransformerBlock::operator()(const ag::Var& x, bool causal) const {
  const ag::Var h = ag::add(x, attn_(ln_attn_(x), causal));
  return ag::add(h, fc_out_(ag::gelu(fc_in_(ln_mlp_(h)))));
}

void TransformerBlock::collect(const std::string& prefix, ParameterList& out) {
  ln_attn_.collect(prefix + ".ln_attn", out);
  attn_.collect(prefix + ".attn", out);
  ln_mlp_.collect(prefix + ".ln_mlp", out);
  fc_in_.collect(prefix + ".mlp_in", out);
  fc_out_.collect(prefix + ".mlp_out", out);
}

}  // namespace neurocap::nn
