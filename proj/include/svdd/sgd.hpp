#pragma once

#include <vector>

#include "svdd/tensor.hpp"

namespace svdd::autograd {

struct SgdConfig {
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
};

// Nesterov-momentum SGD with L2 weight decay. Velocity buffers persist for
// the optimizer's lifetime. Update rule per step, per parameter w:
//   g = grad + weight_decay * w
//   v = momentum * v + g
//   w -= lr * (nesterov ? g + momentum * v : v)
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, SgdConfig cfg);

  // Rejects parameters whose grad was never populated.
  void step(double lr);
  void zero_grad();

  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> velocity_;
  SgdConfig cfg_;
};

}  // namespace svdd::autograd
