#include "svdd/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "svdd/rng.hpp"

namespace svdd::autograd {
namespace {

double eval_loss(const LossBuilder& build_loss, const std::vector<std::vector<float>>& values,
                 const std::vector<Shape>& shapes) {
  Graph g;
  std::vector<Tensor> leaves;
  leaves.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    leaves.push_back(Tensor::leaf(shapes[i], values[i], false));
  }
  return static_cast<double>(build_loss(g, leaves).item());
}

}  // namespace

FdReport check_gradients_at(const LossBuilder& build_loss,
                            const std::vector<std::vector<float>>& leaf_values,
                            const std::vector<Shape>& leaf_shapes, double h) {
  if (leaf_values.size() != leaf_shapes.size()) {
    throw std::invalid_argument("check_gradients_at: values/shapes count mismatch");
  }
  // Analytic pass.
  Graph g;
  std::vector<Tensor> leaves;
  for (std::size_t i = 0; i < leaf_values.size(); ++i) {
    leaves.push_back(Tensor::leaf(leaf_shapes[i], leaf_values[i], true));
  }
  Tensor loss = build_loss(g, leaves);
  g.backward(loss);

  FdReport report;
  std::vector<std::vector<float>> values = leaf_values;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const std::vector<float> analytic = leaves[li].has_grad()
                                            ? leaves[li].grad()
                                            : std::vector<float>(values[li].size(), 0.0f);
    std::vector<double> fd(values[li].size());
    for (std::size_t i = 0; i < values[li].size(); ++i) {
      const float orig = values[li][i];
      values[li][i] = static_cast<float>(orig + h);
      const double fp = eval_loss(build_loss, values, leaf_shapes);
      values[li][i] = static_cast<float>(orig - h);
      const double fm = eval_loss(build_loss, values, leaf_shapes);
      values[li][i] = orig;
      fd[i] = (fp - fm) / (2.0 * h);
    }
    double an_inf = 0.0, fd_inf = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      an_inf = std::max(an_inf, std::abs(static_cast<double>(analytic[i])));
      fd_inf = std::max(fd_inf, std::abs(fd[i]));
    }
    const double denom = std::max({an_inf, fd_inf, 1e-6});
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double abs_err = std::abs(static_cast<double>(analytic[i]) - fd[i]);
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
      ++report.checked;
    }
  }
  return report;
}

FdReport check_gradients(const LossBuilder& build_loss, const std::vector<Shape>& leaf_shapes,
                         std::uint64_t seed, double h, double lo, double hi) {
  Rng rng(seed);
  std::vector<std::vector<float>> values;
  for (const auto& s : leaf_shapes) {
    std::vector<float> v(static_cast<std::size_t>(numel(s)));
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    values.push_back(std::move(v));
  }
  return check_gradients_at(build_loss, values, leaf_shapes, h);
}

}  // namespace svdd::autograd
