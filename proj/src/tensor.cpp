#include "dnet/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace dnet {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (int e : shape) {
    if (e <= 0)
      throw std::invalid_argument("tensor: extents must be positive, got " + shape_str(shape));
  }
  const std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size())) {
    std::ostringstream os;
    os << "tensor: shape " << shape_str(shape) << " wants " << n << " values, got "
       << values.size();
    throw std::invalid_argument(os.str());
  }
  d_ = std::make_shared<detail::TensorData>();
  d_->shape = std::move(shape);
  d_->values = std::move(values);
  d_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), 0.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return d_->shape; }
int Tensor::rank() const { return static_cast<int>(d_->shape.size()); }

int Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) throw std::out_of_range("tensor: dim index out of range");
  return d_->shape[i];
}

std::int64_t Tensor::numel() const { return shape_numel(d_->shape); }

std::span<const double> Tensor::values() const { return d_->values; }
std::span<double> Tensor::mutable_values() { return d_->values; }

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("tensor: item() needs a single element, shape is " +
                                shape_str(d_->shape));
  return d_->values[0];
}

bool Tensor::requires_grad() const { return d_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (d_->backward_fn)
    throw std::invalid_argument("tensor: requires_grad can only be toggled on leaves");
  d_->requires_grad = v;
}

bool Tensor::is_leaf() const { return !d_->backward_fn; }

bool Tensor::has_grad() const { return !d_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (d_->grad.empty()) throw std::logic_error("tensor: no gradient accumulated");
  return d_->grad;
}

void Tensor::zero_grad() { d_->grad.clear(); }

void Tensor::backward() const {
  if (!defined()) throw std::invalid_argument("backward: undefined tensor");
  if (numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar, shape is " +
                                shape_str(d_->shape));
  using detail::TensorData;
  TensorData* root = d_.get();
  if (!root->requires_grad) return;  // nothing reachable wants gradients

  // Post-order over the parent DAG (iterative; graphs can be hundreds deep).
  std::vector<TensorData*> order;
  std::unordered_set<TensorData*> done;
  struct Frame {
    TensorData* node;
    size_t next;
  };
  std::vector<Frame> stack{{root, 0}};
  done.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorData* p = f.node->parents[f.next++].get();
      if (done.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Gradient buffers: persistent (.grad) for leaves, per-sweep for op nodes.
  std::unordered_map<TensorData*, std::vector<double>> transient;
  auto buffer_of = [&](TensorData* n) -> std::vector<double>& {
    if (!n->backward_fn) {
      if (n->grad.empty()) n->grad.assign(n->values.size(), 0.0);
      return n->grad;
    }
    auto [it, fresh] = transient.try_emplace(n);
    if (fresh) it->second.assign(n->values.size(), 0.0);
    return it->second;
  };

  buffer_of(root)[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorData* node = *it;
    if (!node->backward_fn) continue;
    auto found = transient.find(node);
    if (found == transient.end()) continue;  // no gradient flowed here
    std::vector<std::span<double>> parent_grads;
    parent_grads.reserve(node->parents.size());
    for (const auto& p : node->parents) {
      if (p->requires_grad)
        parent_grads.emplace_back(buffer_of(p.get()));
      else
        parent_grads.emplace_back();
    }
    node->backward_fn(found->second, parent_grads);
  }
}

Tensor make_from_op(Shape shape, std::vector<double> values, const std::vector<Tensor>& parents,
                    detail::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values), false);
  if (!grad_enabled()) return out;
  bool track = false;
  for (const auto& p : parents)
    if (p.requires_grad()) track = true;
  if (!track) return out;
  out.d_->requires_grad = true;
  out.d_->parents.reserve(parents.size());
  for (const auto& p : parents) out.d_->parents.push_back(p.d_);
  out.d_->backward_fn = std::move(backward);
  return out;
}

}  // namespace dnet
