#include "adaspan/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace adaspan {

namespace {

double evaluate(const std::function<Tensor64()>& f) {
  NoGradGuard guard;
  const Tensor64 out = f();
  if (out.numel() != 1) {
    throw Error(ErrorCode::NonScalarLoss, "grad_check function must return a scalar");
  }
  return out.item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor64()>& f, std::vector<NamedTensor> params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = options.tolerance;

  const double base_a = evaluate(f);
  const double base_b = evaluate(f);
  if (std::memcmp(&base_a, &base_b, sizeof(double)) != 0) {
    throw Error(ErrorCode::NonDeterministicFunction,
                "two evaluations at the same point disagree");
  }

  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  active_tape().clear();
  {
    const Tensor64 loss = f();
    backward(loss);
  }

  bool ok = true;
  for (auto& p : params) {
    ParamGradError entry;
    entry.name = p.name;
    const std::size_t n = p.tensor.numel();
    std::vector<double> analytic(n, 0.0);
    if (p.tensor.has_grad()) {
      auto g = p.tensor.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    const std::size_t stride =
        options.max_coords == 0 || n <= options.max_coords ? 1 : n / options.max_coords;
    for (std::size_t i = 0; i < n; i += stride) {
      double& x = p.tensor.data()[i];
      const double saved = x;
      x = saved + options.step;
      const double plus = evaluate(f);
      x = saved - options.step;
      const double minus = evaluate(f);
      x = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double scale =
          std::max({std::abs(analytic[i]), std::abs(numeric), options.scale_floor});
      const double rel = abs_err / scale;
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
      }
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      ++entry.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    ok = ok && entry.max_rel_error <= options.tolerance;
    report.params.push_back(std::move(entry));
  }
  report.passed = ok;
  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream os;
  char buf[256];
  for (const auto& p : report.params) {
    std::snprintf(buf, sizeof(buf), "  %-24s rel %.3e  abs %.3e  (%zu coords)\n", p.name.c_str(),
                  p.max_rel_error, p.max_abs_error, p.checked);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "%s max rel. err %.3e (tol %.1e)\n",
                report.passed ? "PASS" : "FAIL", report.max_rel_error, report.tolerance);
  os << buf;
  return os.str();
}

}  // namespace adaspan
