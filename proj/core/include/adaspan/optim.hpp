#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "adaspan/model.hpp"

namespace adaspan {

/// Linear warmup from lr0/warmup to lr0, then per-epoch cosine annealing:
///   epoch < warmup:  lr0 (epoch + 1) / warmup
///   otherwise:       lr0/2 (1 + cos(pi (epoch - warmup) / (epochs - warmup)))
double lr_schedule(int epoch, int epochs, int warmup_epochs, double lr0);

/// One Nesterov step on flat buffers:
///   g' = g + wd p;  v = mu v + g';  p -= lr (g' + mu v)
template <typename T>
void nesterov_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr,
                     double momentum, double weight_decay);

/// SGD with Nesterov momentum over named parameters. Weight decay is applied
/// to ParamKind::Weight only; spans and batch-norm affine terms are exempt.
template <typename T>
class SgdNesterov {
 public:
  SgdNesterov(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  /// Raises MissingGradient if a parameter has no populated gradient.
  void step(std::vector<NamedParam<T>>& params, double lr);

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, std::vector<T>> velocity_;
};

}  // namespace adaspan
