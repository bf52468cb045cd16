// Dense float64 tensors with a reverse-mode gradient tape.
//
// A Tensor is a cheap shared handle. Operations on tensors that require
// gradients record a backward closure on the result; backward() walks the
// recorded graph once, accumulates gradients into every reachable tensor
// that requires them and then releases the graph.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace casr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Row-major 2-D literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(const std::vector<std::vector<double>>& rows,
                       bool requires_grad = false);
  static Tensor vector(const std::vector<double>& values,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  // Leading extent for 2-D tensors; 1 for vectors.
  std::size_t rows() const;
  // Trailing extent.
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct write access for initializers and optimizers. Never call on a
  // tensor whose graph is still pending a backward pass.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  // Accumulated gradient; zeros when nothing reached this tensor.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // New leaf holding a copy of the data and no history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& shared_node() const { return node_; }

 private:
  friend Tensor make_result(Shape, std::vector<double>,
                            std::initializer_list<const Tensor*>,
                            std::function<void(TensorNode&)>);
  friend Tensor make_result_list(Shape, std::vector<double>,
                                 const std::vector<Tensor>&,
                                 std::function<void(TensorNode&)>);
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  std::shared_ptr<TensorNode> node_;
};

// Builds an op output. History is recorded only when gradients are enabled
// and at least one input requires them.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(TensorNode&)> backward);
Tensor make_result_list(Shape shape, std::vector<double> data,
                        const std::vector<Tensor>& inputs,
                        std::function<void(TensorNode&)> backward);

bool grad_enabled();

// Disables graph recording for its lifetime (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Populates gradients of every requires_grad tensor reachable from `loss`,
// then frees the recorded graph. Accumulation into leaves is additive.
void backward(const Tensor& loss);

}  // namespace casr
