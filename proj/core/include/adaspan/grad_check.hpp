#pragma once

#include <functional>
#include <string>
#include <vector>

#include "adaspan/tensor.hpp"

namespace adaspan {

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct NamedTensor {
  std::string name;
  Tensor64 tensor;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Relative errors are measured as |a - n| / max(|a|, |n|, scale_floor).
  double scale_floor = 1e-6;
  /// Check at most this many coordinates per parameter (evenly strided);
  /// 0 checks every coordinate.
  std::size_t max_coords = 0;
};

/// Compares reverse-mode gradients of the scalar `f` with central finite
/// differences for every parameter in `params`. Requires 64-bit precision.
/// Raises NonDeterministicFunction if two unperturbed evaluations differ.
GradCheckReport grad_check(const std::function<Tensor64()>& f, std::vector<NamedTensor> params,
                           const GradCheckOptions& options = {});

std::string format_report(const GradCheckReport& report);

}  // namespace adaspan
