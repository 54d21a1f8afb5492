#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "svdd/tensor.hpp"

namespace svdd::autograd {

// Central finite-difference gradient checker. A first-class utility (the CLI
// `verify` command runs it), not test-only code.
//
// `build_loss` is called with fresh leaf tensors and must return a scalar:
// it is re-invoked for every perturbed evaluation, so it has to be a pure
// function of the leaf values.
struct FdReport {
  double max_rel_err = 0.0;   // |analytic - fd|_inf / max(|analytic|_inf, |fd|_inf, floor)
  double max_abs_err = 0.0;
  std::int64_t checked = 0;
};

using LossBuilder = std::function<Tensor(Graph&, const std::vector<Tensor>&)>;

// Leaves are filled with uniform values in [lo, hi] from `seed`.
FdReport check_gradients(const LossBuilder& build_loss, const std::vector<Shape>& leaf_shapes,
                         std::uint64_t seed, double h = 1e-3, double lo = -1.0, double hi = 1.0);

// Same check against explicitly provided leaf values.
FdReport check_gradients_at(const LossBuilder& build_loss,
                            const std::vector<std::vector<float>>& leaf_values,
                            const std::vector<Shape>& leaf_shapes, double h = 1e-3);

}  // namespace svdd::autograd
