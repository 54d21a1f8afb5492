#include "svdd/sgd.hpp"

#include <stdexcept>

namespace svdd::autograd {

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, SgdConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) {
    velocity_.emplace_back(static_cast<std::size_t>(p.size()), 0.0f);
  }
}

void SgdOptimizer::step(double lr) {
  const float mu = static_cast<float>(cfg_.momentum);
  const float wd = static_cast<float>(cfg_.weight_decay);
  const float lrf = static_cast<float>(lr);
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    if (!p.has_grad()) {
      throw std::runtime_error("sgd_step: parameter has no populated gradient");
    }
    auto& w = p.value();
    const auto& grad = p.grad();
    auto& v = velocity_[pi];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float g = grad[i] + wd * w[i];
      v[i] = mu * v[i] + g;
      const float d = cfg_.nesterov ? g + mu * v[i] : v[i];
      w[i] -= lrf * d;
    }
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace svdd::autograd
