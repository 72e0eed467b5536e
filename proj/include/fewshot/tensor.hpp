/**
 * @file tensor.hpp
 * @brief Dense n-dimensional tensors with reverse-mode automatic differentiation.
 *
 * Tensors are lightweight handles onto shared storage. Every differentiable
 * operation records a node (op kind, parent handles, backward closure) onto the
 * implicit tape formed by the parent links; backward() walks that tape once in
 * reverse topological order and then frees the non-leaf graph. Leaf gradients
 * accumulate across repeated backward calls until zero_grad() is used.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace fewshot {

using Shape = std::vector<int>;

/// Error type for shape mismatches and invalid tensor operations.
struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw TensorError("negative extent in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {
/// Thread-local switch; when false, ops produce plain values with no tape.
inline thread_local bool grad_mode = true;
}  // namespace detail

/// RAII guard disabling graph recording (used by evaluation paths).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_mode_enabled() { return detail::grad_mode; }

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily; same length as data when present
  bool requires_grad = false;
  // Tape record: parents are the op inputs, backward_fn scatters this node's
  // grad into theirs. Both empty for leaves.
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  std::function<void(TensorImpl<T>&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() : impl_(nullptr) {}
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  /// Zero-filled tensor.
  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return from_data(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad);
  }

  static Tensor ones(const Shape& shape, bool requires_grad = false) {
    return from_data(shape, std::vector<T>(shape_numel(shape), T(1)), requires_grad);
  }

  static Tensor full(const Shape& shape, T value, bool requires_grad = false) {
    return from_data(shape, std::vector<T>(shape_numel(shape), value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({1}, std::vector<T>{value}, requires_grad);
  }

  static Tensor from_data(const Shape& shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw TensorError("data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = shape;
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
  }

  /// Uniform values in [lo, hi), deterministic per rng state.
  static Tensor uniform(const Shape& shape, T lo, T hi, std::mt19937_64& rng,
                        bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng));
    return from_data(shape, std::move(data), requires_grad);
  }

  static Tensor normal(const Shape& shape, T mean, T stddev, std::mt19937_64& rng,
                       bool requires_grad = false) {
    std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng));
    return from_data(shape, std::move(data), requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* data_ptr() { return impl_->data.data(); }
  const T* data_ptr() const { return impl_->data.data(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) {
    if (flag && !impl_->is_leaf())
      throw TensorError("requires_grad can only be toggled on leaf tensors");
    impl_->requires_grad = flag;
  }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  std::span<const T> grad() const {
    if (!has_grad()) throw TensorError("tensor has no gradient buffer");
    return impl_->grad;
  }
  void zero_grad() {
    if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), T(0));
  }

  T item() const {
    if (numel() != 1) throw TensorError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
  }

  std::shared_ptr<TensorImpl<T>>& impl() { return impl_; }
  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

  /// Reverse-mode pass from a scalar. Visits every reachable node exactly
  /// once, accumulates leaf gradients, then frees the recorded graph.
  void backward() {
    if (numel() != 1)
      throw TensorError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    // A loss with no gradient-requiring dependencies leaves every grad at
    // zero; nothing to propagate.
    if (!impl_->requires_grad) return;

    // Topological order via iterative post-order DFS over parent links.
    std::vector<TensorImpl<T>*> order;
    std::unordered_set<TensorImpl<T>*> seen;
    struct Frame {
      TensorImpl<T>* node;
      std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({impl_.get(), 0});
    seen.insert(impl_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        TensorImpl<T>* p = f.node->parents[f.next_parent++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }

    impl_->ensure_grad();
    impl_->grad[0] += T(1);

    // Parents precede consumers in `order`; walk it backwards.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorImpl<T>* node = *it;
      if (node->backward_fn) node->backward_fn(*node);
    }

    // Free the tape: non-leaf nodes drop closures, links, and grad buffers.
    for (TensorImpl<T>* node : order) {
      if (!node->is_leaf()) {
        node->backward_fn = nullptr;
        node->parents.clear();
        node->grad.clear();
        node->grad.shrink_to_fit();
      }
    }
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

/// Builds an op node. The backward closure receives the output impl (whose
/// grad is already populated) and must accumulate into the parents' grads.
template <class T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> data,
                  std::vector<Tensor<T>> parents,
                  std::function<void(TensorImpl<T>&)> backward_fn) {
  bool needs_grad = false;
  if (grad_mode) {
    for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  }
  auto out = Tensor<T>::from_data(std::move(shape), std::move(data), needs_grad);
  if (needs_grad) {
    out.impl()->op = op;
    out.impl()->parents.reserve(parents.size());
    for (auto& p : parents)
      if (p.requires_grad()) out.impl()->parents.push_back(p.impl());
    out.impl()->backward_fn = std::move(backward_fn);
  }
  return out;
}

template <class T>
void accumulate(TensorImpl<T>& dst, const std::vector<T>& contribution) {
  dst.ensure_grad();
  for (std::size_t i = 0; i < contribution.size(); ++i) dst.grad[i] += contribution[i];
}

}  // namespace detail

}  // namespace fewshot
