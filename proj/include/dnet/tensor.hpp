#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dnet {

// Shape is a list of positive extents; rank 4 tensors are laid out N x C x H x W,
// row-major (W fastest).
using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

namespace detail {

struct TensorData;

// Backward callback of an op node. Receives d(loss)/d(output) and one
// writable gradient buffer per parent (empty span when that parent does not
// participate in gradients). Implementations accumulate with +=.
using BackwardFn =
    std::function<void(std::span<const double> out_grad, std::span<std::span<double>> parent_grads)>;

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorData>> parents;
  BackwardFn backward_fn;  // unset on leaves
};

}  // namespace detail

// Whether newly created ops record the autograd graph (true by default).
bool grad_enabled();

// Scoped "no autograd" region: forwards inside build plain tensors only.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// A dense 64-bit float array plus an optional gradient and an optional place
// in an autograd graph. Copies share storage (numpy-style aliasing).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int dim(int i) const;
  std::int64_t numel() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;  // requires numel() == 1

  bool requires_grad() const;
  void set_requires_grad(bool v);  // leaves only
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;  // requires has_grad()
  void zero_grad();                      // grad reads as absent afterwards

  // Reverse-mode sweep from this scalar. Gradients of leaf tensors with
  // requires_grad accumulate (+=) across repeated calls; intermediate
  // gradients are transient per sweep.
  void backward() const;

  detail::TensorData* node() const { return d_.get(); }

 private:
  friend Tensor make_from_op(Shape, std::vector<double>, const std::vector<Tensor>&,
                             detail::BackwardFn);
  std::shared_ptr<detail::TensorData> d_;
};

// Builds an op output. Attaches a graph node only when autograd is enabled
// and some parent requires grad; otherwise returns a plain leaf.
Tensor make_from_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& parents,
                    detail::BackwardFn backward);

}  // namespace dnet
