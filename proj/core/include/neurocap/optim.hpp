#pragma once

#include "neurocap/nn.hpp"

#include <map>
#include <string>

namespace neurocap {

class Checkpoint;

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam. Moment state is keyed by parameter name so it
// can be checkpointed and restored into a freshly built model.
class AdamW {
 public:
  AdamW(nn::ParameterList params, AdamWConfig config);

  void step();
  void zero_grad();

  const AdamWConfig& config() const { return config_; }
  long steps() const { return steps_; }

  void save_state(Checkpoint& ckpt) const;
  void load_state(const Checkpoint& ckpt);

 private:
  struct Moments {
    ag::Matrix m;
    ag::Matrix v;
  };
  nn::ParameterList params_;
  AdamWConfig config_;
  std::map<std::string, Moments> state_;
  long steps_ = 0;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(const nn::ParameterList& params, double max_norm);

}  // namespace neurocap
