#pragma once

#include <cstdint>
#include <vector>

#include "fseg/tensor.hpp"

namespace fseg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. One state object drives a fixed list of
// parameter tensors; moment buffers are matched to the parameters on the
// first step and shape-checked afterwards.
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update using each parameter's accumulated gradient.
  // Throws if a parameter has no gradient buffer.
  void step(std::vector<Tensor>& params);

  std::int64_t step_count() const { return t_; }
  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace fseg
