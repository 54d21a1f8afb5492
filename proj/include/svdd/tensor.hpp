#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace svdd::autograd {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until a backward pass populates it
  bool requires_grad = false;  // leaf that wants a gradient
  bool needs_grad = false;     // requires_grad, or derived from such a leaf
};

// Value-semantic handle onto a node; copies alias the same storage. Tensors
// participating in a graph are confined to one worker at a time.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor leaf(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(float v, bool requires_grad = false);

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool is_scalar() const { return size() == 1; }

  std::vector<float>& value() { return node_->value; }
  const std::vector<float>& value() const { return node_->value; }
  float item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool needs_grad() const { return node_->needs_grad; }

  // Empty until populated by backward(); zero_grad() keeps the buffer.
  std::vector<float>& grad() { return node_->grad; }
  const std::vector<float>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void ensure_grad();  // allocate zeroed buffer
  void zero_grad();

  TensorNode* node() const { return node_.get(); }
  std::shared_ptr<TensorNode> shared_node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// While alive, ops behave as pure forward computations: nothing is recorded
// and outputs carry no gradient needs. Scoped per thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active();

 private:
  bool prev_;
};

// Define-by-run tape: ops append themselves in execution order, backward
// replays in exact reverse order. Gradient contributions accumulate
// additively at fan-out. Rebuilt for every forward pass.
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  // Called by op implementations; `backward` reads output.grad and adds into
  // each input's grad. Ops whose inputs carry no gradient needs are not
  // recorded at all (callers check needs_grad first).
  void record(const char* op_name, std::vector<Tensor> inputs, Tensor output,
              BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and replays the tape reverse-topologically.
  // Leaf gradients accumulate across calls until zero_grad()-ed; gradients of
  // intermediate nodes are reset at the start of every backward pass.
  void backward(const Tensor& loss);

  std::size_t num_ops() const { return tape_.size(); }

 private:
  struct OpRecord {
    const char* name;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<OpRecord> tape_;
};

}  // namespace svdd::autograd
