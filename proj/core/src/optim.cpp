#include "neurocap/optim.hpp"

#include "neurocap/checkpoint.hpp"
#include "neurocap/error.hpp"

#include <cmath>

namespace neurocap {

AdamW::AdamW(nn::ParameterList params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("AdamW: learning_rate must be > 0");
  for (const auto& p : params_) {
    state_[p.name] = Moments{ag::Matrix::Zero(p.param->value().rows(), p.param->value().cols()),
                             ag::Matrix::Zero(p.param->value().rows(), p.param->value().cols())};
  }
}

void AdamW::step() {
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (auto& p : params_) {
    // Parameters untouched by this step's graph (e.g. another subject's
    // adapter) are skipped entirely, decay included.
    if (!p.param->has_grad()) continue;
    ag::Matrix& w = p.param->value();
    w *= (1.0 - config_.learning_rate * config_.weight_decay);
    Moments& s = state_.at(p.name);
    const ag::Matrix& g = p.param->grad();
    s.m = config_.beta1 * s.m + (1.0 - config_.beta1) * g;
    s.v = config_.beta2 * s.v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    w.array() -= config_.learning_rate * (s.m.array() / bc1) /
                 ((s.v.array() / bc2).sqrt() + config_.eps);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.param->zero_grad();
}

void AdamW::save_state(Checkpoint& ckpt) const {
  ag::Matrix step(1, 1);
  step(0, 0) = static_cast<double>(steps_);
  ckpt.put_tensor("optim.steps", step);
  for (const auto& [name, s] : state_) {
    ckpt.put_tensor("optim.m." + name, s.m);
    ckpt.put_tensor("optim.v." + name, s.v);
  }
}

void AdamW::load_state(const Checkpoint& ckpt) {
  if (!ckpt.has("optim.steps")) throw DataError("checkpoint has no optimizer state");
  steps_ = static_cast<long>(ckpt.tensor("optim.steps")(0, 0));
  for (auto& [name, s] : state_) {
    ag::Matrix m = ckpt.tensor("optim.m." + name);
    ag::Matrix v = ckpt.tensor("optim.v." + name);
    if (m.rows() != s.m.rows() || m.cols() != s.m.cols() || v.rows() != s.v.rows() ||
        v.cols() != s.v.cols()) {
      throw DataError("optimizer state shape mismatch for " + name);
    }
    s.m = std::move(m);
    s.v = std::move(v);
  }
}

double clip_grad_norm(const nn::ParameterList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.param->has_grad()) sq += p.param->grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (const auto& p : params) {
      if (p.param->has_grad()) p.param->grad() *= factor;
    }
  }
  return norm;
}

}  // namespace neurocap
