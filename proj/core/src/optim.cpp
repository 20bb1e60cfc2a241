#include "adaspan/optim.hpp"

#include <cmath>
#include <numbers>

namespace adaspan {

double lr_schedule(int epoch, int epochs, int warmup_epochs, double lr0) {
  if (epoch < 0 || epoch >= epochs) {
    throw Error(ErrorCode::EpochOutOfRange, "epoch " + std::to_string(epoch) + " outside [0, " +
                                                std::to_string(epochs) + ")");
  }
  if (warmup_epochs < 0 || warmup_epochs >= epochs) {
    throw Error(ErrorCode::InvalidArgument, "warmup must lie in [0, epochs)");
  }
  if (epoch < warmup_epochs) return lr0 * (epoch + 1) / warmup_epochs;
  const double progress = static_cast<double>(epoch - warmup_epochs) / (epochs - warmup_epochs);
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void nesterov_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr,
                     double momentum, double weight_decay) {
  if (grad.size() != param.size() || velocity.size() != param.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer buffers differ in size");
  }
  const T mu = static_cast<T>(momentum);
  const T wd = static_cast<T>(weight_decay);
  const T step = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i] + wd * param[i];
    velocity[i] = mu * velocity[i] + g;
    param[i] -= step * (g + mu * velocity[i]);
  }
}

template <typename T>
void SgdNesterov<T>::step(std::vector<NamedParam<T>>& params, double lr) {
  for (auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw Error(ErrorCode::MissingGradient, "no gradient for " + p.name);
    }
    auto& v = velocity_[p.name];
    if (v.size() != p.tensor.numel()) v.assign(p.tensor.numel(), T(0));
    const double wd = p.kind == ParamKind::Weight ? weight_decay_ : 0.0;
    nesterov_update<T>(p.tensor.data(), p.tensor.grad(), v, lr, momentum_, wd);
  }
}

template void nesterov_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                     double, double, double);
template void nesterov_update<double>(std::span<double>, std::span<const double>,
                                      std::span<double>, double, double, double);
template class SgdNesterov<float>;
template class SgdNesterov<double>;

}  // namespace adaspan
