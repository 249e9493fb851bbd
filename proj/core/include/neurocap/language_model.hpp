#pragma once

#include "neurocap/autograd.hpp"
#include "neurocap/nn.hpp"
#include "neurocap/tokenizer.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>

namespace neurocap {

// Causal language model conditioned on a (rows x embed_dim) prefix.
class LanguageModelBackend {
 public:
  virtual ~LanguageModelBackend() = default;

  virtual std::string id() const = 0;
  virtual const Tokenizer& tokenizer() const = 0;
  virtual Eigen::Index embed_dim() const = 0;
  std::size_t vocab_size() const { return tokenizer().size(); }

  // Logits of shape (inputs.size() + 1, vocab): row k is the distribution of
  // the token following prefix + inputs[0, k). Differentiable w.r.t. the
  // prefix and the backend's own parameters.
  virtual ag::Var logits(const ag::Var& prefix, std::span<const TokenId> inputs) = 0;

  // Next-token logits after prefix + context.
  Eigen::VectorXd next_logits(const ag::Matrix& prefix, std::span<const TokenId> context);

  virtual nn::ParameterList parameters() { return {}; }
  virtual bool concurrency_safe() const { return true; }
};

struct MockGptConfig {
  int layers = 1;
  int heads = 2;
  int max_positions = 128;
  std::uint64_t seed = 0;
};

// Tiny trainable GPT-style decoder: token + learned position embeddings,
// pre-norm causal blocks, final norm, output head tied to the token table.
class MockGptBackend : public LanguageModelBackend {
 public:
  MockGptBackend(Tokenizer tokenizer, Eigen::Index embed_dim, MockGptConfig config);

  std::string id() const override { return "mock-gpt"; }
  const Tokenizer& tokenizer() const override { return tokenizer_; }
  Eigen::Index embed_dim() const override { return embed_dim_; }
  ag::Var logits(const ag::Var& prefix, std::span<const TokenId> inputs) override;
  nn::ParameterList parameters() override;
  const MockGptConfig& config() const { return config_; }

 private:
  Tokenizer tokenizer_;
  Eigen::Index embed_dim_;
  MockGptConfig config_;
  ag::Parameter token_embedding_;
  ag::Parameter position_embedding_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm final_norm_;
};

}  // namespace neurocap
