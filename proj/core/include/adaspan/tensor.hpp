#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "adaspan/error.hpp"

namespace adaspan {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;

  T* ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

/// Handle to a dense row-major array. Copies share storage, like a
/// reference-counted array in most autograd libraries; use clone() for a
/// deep copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0), bool requires_grad = false);
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T(0)); }
  static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), T(1)); }
  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Shape{1}, value, requires_grad);
  }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }
  T item() const;
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool flag);

  bool has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }
  std::span<const T> grad() const;
  std::span<T> mutable_grad() { return {impl_->ensure_grad(), impl_->data.size()}; }
  void zero_grad();

  /// Same data, no gradient history.
  BasicTensor detach() const;
  BasicTensor clone() const;

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Ordered record of differentiable operations executed while gradient
/// recording is enabled. One tape per thread.
class GradTape {
 public:
  using Adjoint = std::function<void()>;

  void record(Adjoint adjoint) { entries_.push_back(std::move(adjoint)); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  void clear() noexcept { entries_.clear(); }

  /// Replays adjoints newest-first.
  void replay();

 private:
  std::vector<Adjoint> entries_;
};

GradTape& active_tape();

bool grad_enabled();

/// Disables recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Seeds d(loss)/d(loss) = 1 and replays the active tape. The tape is
/// cleared afterwards unless `retain_tape` is set; a second call without a
/// fresh forward pass raises StaleTape.
template <typename T>
void backward(const BasicTensor<T>& loss, bool retain_tape = false);

/// Running count of scalar multiplies issued by matmul-like kernels
/// (matmul, conv2d, local attention). Used to cross-check FLOP accounting.
std::uint64_t mac_count();
void reset_mac_count();
void add_macs(std::uint64_t n);

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Marks `out` as part of the graph and pushes `adjoint` onto the tape.
template <typename T>
void record(BasicTensor<T>& out, GradTape::Adjoint adjoint) {
  out.impl()->requires_grad = true;
  active_tape().record(std::move(adjoint));
}

}  // namespace detail

}  // namespace adaspan
