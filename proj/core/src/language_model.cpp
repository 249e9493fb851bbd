#include "neurocap/language_model.hpp"

#include "neurocap/error.hpp"

#include <random>

namespace neurocap {

Eigen::VectorXd LanguageModelBackend::next_logits(const ag::Matrix& prefix,
                                                  std::span<const TokenId> context) {
  const ag::Var out = logits(ag::constant(prefix), context);
  return out.value().row(out.rows() - 1).transpose();
}

MockGptBackend::MockGptBackend(Tokenizer tokenizer, Eigen::Index embed_dim, MockGptConfig config)
    : tokenizer_(std::move(tokenizer)), embed_dim_(embed_dim), config_(config) {
  if (embed_dim <= 0) throw ConfigError("mock-gpt: embed_dim must be positive");
  if (config.layers < 0 || config.max_positions <= 0) throw ConfigError("mock-gpt: invalid config");
  std::mt19937_64 rng(config.seed ^ 0x6d6f636b677074ULL);
  token_embedding_ = ag::Parameter(nn::random_normal(
      static_cast<Eigen::Index>(tokenizer_.size()), embed_dim, 0.1, rng));
  position_embedding_ = ag::Parameter(nn::random_normal(config.max_positions, embed_dim, 0.02, rng));
  for (int i = 0; i < config.layers; ++i) blocks_.emplace_back(embed_dim, config.heads, 4, rng);
  final_norm_ = nn::LayerNorm(embed_dim);
}

ag::Var MockGptBackend::logits(const ag::Var& prefix, std::span<const TokenId> inputs) {
  if (prefix.cols() != embed_dim_) {
    throw DataError("mock-gpt: prefix width " + std::to_string(prefix.cols()) +
                    " does not match embed_dim " + std::to_string(embed_dim_));
  }
  const Eigen::Index length = prefix.rows() + static_cast<Eigen::Index>(inputs.size());
  if (length > config_.max_positions) {
    throw DataError("mock-gpt: sequence of " + std::to_string(length) + " exceeds " +
                    std::to_string(config_.max_positions) + " positions");
  }
  for (TokenId t : inputs) {
    if (t < 0 || static_cast<std::size_t>(t) >= tokenizer_.size()) {
      throw DataError("mock-gpt: token id " + std::to_string(t) + " out of vocabulary");
    }
  }
  ag::Var x = prefix;
  if (!inputs.empty()) {
    const std::vector<ag::Var> parts = {prefix, ag::gather_rows(token_embedding_.var(), inputs)};
    x = ag::concat_rows(parts);
  }
  x = ag::add(x, ag::slice_rows(position_embedding_.var(), 0, length));
  for (const auto& block : blocks_) x = block(x, /*causal=*/true);
  x = final_norm_(x);
  // Only positions from the last prefix row onward predict tokens.
  const ag::Var tail = ag::slice_rows(x, prefix.rows() - 1, static_cast<Eigen::Index>(inputs.size()) + 1);
  return ag::matmul(tail, ag::transpose(token_embedding_.var()));
}

nn::ParameterList MockGptBackend::parameters() {
  nn::ParameterList out;
  out.push_back({"lm.token_embedding", &token_embedding_});
  out.push_back({"lm.position_embedding", &position_embedding_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("lm.block" + std::to_string(i), out);
  final_norm_.collect("lm.final_norm", out);
  return out;
}

}  // namespace neurocap
