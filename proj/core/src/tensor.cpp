#include "adaspan/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace adaspan {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  impl_->data.assign(numel_of(shape), fill);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  if (numel_of(shape) != data.size()) {
    throw Error(ErrorCode::ShapeMismatch, "tensor data has " + std::to_string(data.size()) +
                                              " elements, shape " + shape_str(shape) + " needs " +
                                              std::to_string(numel_of(shape)));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!has_grad()) return {};
  return impl_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (impl_) impl_->grad.clear();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  BasicTensor out;
  out.impl_ = std::make_shared<detail::TensorImpl<T>>();
  out.impl_->shape = impl_->shape;
  out.impl_->data = impl_->data;
  return out;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  auto out = detach();
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

void GradTape::replay() {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

namespace {
thread_local GradTape g_tape;
thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_macs = 0;
}  // namespace

GradTape& active_tape() { return g_tape; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::uint64_t mac_count() { return g_macs; }
void reset_mac_count() { g_macs = 0; }
void add_macs(std::uint64_t n) { g_macs += n; }

template <typename T>
void backward(const BasicTensor<T>& loss, bool retain_tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorCode::NonScalarLoss,
                "backward() needs a single-element loss, got " +
                    (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  auto& tape = active_tape();
  if (tape.empty() || !loss.requires_grad()) {
    throw Error(ErrorCode::StaleTape, "no recorded operations; run a fresh forward pass first");
  }
  auto* g = loss.impl()->ensure_grad();
  g[0] = T(1);
  tape.replay();
  if (!retain_tape) tape.clear();
}

template void backward<float>(const BasicTensor<float>&, bool);
template void backward<double>(const BasicTensor<double>&, bool);

}  // namespace adaspan
