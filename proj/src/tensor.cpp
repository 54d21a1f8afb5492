#include "svdd/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace svdd::autograd {

#if defined(__GLIBC__)
// Training allocates multi-MB scratch buffers every step; keep them on the
// heap instead of bouncing through mmap/munmap.
namespace {
const int g_malloc_tuning = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return 0;
}();
}  // namespace
#endif

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::leaf(Shape shape, std::vector<float> data, bool requires_grad) {
  for (auto d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive dim in " + shape_str(shape));
  }
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                std::to_string(data.size()));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  node->needs_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<float> data(static_cast<std::size_t>(numel(shape)), 0.0f);
  return leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(float v, bool requires_grad) {
  return leaf({1}, {v}, requires_grad);
}

float Tensor::item() const {
  if (!is_scalar()) {
    throw std::invalid_argument("item: tensor " + shape_str(shape()) + " is not scalar");
  }
  return node_->value[0];
}

void Tensor::ensure_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0f);
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

namespace {
thread_local bool g_no_grad = false;
}

NoGradGuard::NoGradGuard() : prev_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = prev_; }
bool NoGradGuard::active() { return g_no_grad; }

void Graph::record(const char* op_name, std::vector<Tensor> inputs, Tensor output,
                   BackwardFn backward) {
  tape_.push_back(OpRecord{op_name, std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
  if (!loss.valid() || !loss.is_scalar()) {
    throw std::invalid_argument("backward: loss must be a scalar tensor, got " +
                                (loss.valid() ? shape_str(loss.shape()) : std::string("<null>")));
  }
  // Reset intermediate grads (every op output); leaf grads accumulate.
  for (auto& rec : tape_) {
    rec.output.ensure_grad();
    rec.output.zero_grad();
  }
  Tensor root = loss;
  root.ensure_grad();
  root.grad()[0] += 1.0f;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    // Ops not upstream of this root carry an all-zero output gradient and
    // would only add zeros; skipping them keeps multi-root backward cheap.
    const auto& og = it->output.grad();
    bool live = false;
    for (float v : og) {
      if (v != 0.0f) {
        live = true;
        break;
      }
    }
    if (live) it->backward();
  }
}

}  // namespace svdd::autograd
