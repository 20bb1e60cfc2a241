#pragma once

#include <cstddef>
#include <span>

#include "adaspan/tensor.hpp"

namespace adaspan {

// ---------------------------------------------------------------------------
// Elementwise. Binary ops broadcast over trailing dimensions (numpy rules).
// ---------------------------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Raises DivisionByZero if any denominator element is exactly zero.
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, T b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, T b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, T b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, T b);

template <typename T> BasicTensor<T> exp(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a);
/// Gradient is 1 strictly inside (lo, hi) and 0 on and beyond the bounds.
template <typename T> BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi);

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
/// Rows [start, start + count) of a 2-D tensor.
template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t start, std::size_t count);

// ---------------------------------------------------------------------------
// Linear algebra and spatial ops
// ---------------------------------------------------------------------------

template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// y = x * w + bias, x: [B x in], w: [in x out], bias: [out] (may be undefined).
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias);

struct Conv2dGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_extent(std::size_t in) const { return (in + 2 * padding - kernel) / stride + 1; }
  void validate() const;
};

/// im2col of a single [C x H x W] image into [C*k*k x L]; rows are
/// channel-major, then row-major within the window; L = out_H * out_W.
template <typename T>
BasicTensor<T> unfold(const BasicTensor<T>& x, std::size_t kernel, std::size_t stride,
                      std::size_t padding);

/// Adjoint of unfold: scatter-adds columns back onto a [C x H x W] image.
template <typename T>
BasicTensor<T> fold(const BasicTensor<T>& cols, std::size_t channels, std::size_t height,
                    std::size_t width, std::size_t kernel, std::size_t stride,
                    std::size_t padding);

/// Cross-correlation. x: [B x Cin x H x W] (or [Cin x H x W]),
/// weight: [Cout x Cin x k x k].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, std::size_t stride,
                      std::size_t padding);

template <typename T>
struct RunningStats {
  BasicTensor<T> mean;
  BasicTensor<T> var;

  static RunningStats init(std::size_t channels) {
    return {BasicTensor<T>::zeros({channels}), BasicTensor<T>::ones({channels})};
  }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization of [B x C x ...]. Training mode normalizes with
/// batch statistics and folds them into `stats`; eval mode reads `stats`.
template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, RunningStats<T>& stats, bool training,
                          double momentum = kBatchNormMomentum, double eps = kBatchNormEps);

inline constexpr double kMaskedSoftmaxEps = 1e-12;

/// Softmax over the last axis with a multiplicative soft mask:
///   out_i = exp(a_i - max a) M_i / (sum_j exp(a_j - max a) M_j + eps).
/// `mask` is either [k] (shared by every row) or [G x k] with logits
/// [G x N x k] (one mask row per leading group). Gradients flow to both.
template <typename T>
BasicTensor<T> softmax_masked(const BasicTensor<T>& logits, const BasicTensor<T>& mask,
                              double eps = kMaskedSoftmaxEps);

/// Non-overlapping window average over the last two axes.
template <typename T> BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, std::size_t window);

/// [B x C x H x W] -> [B x C].
template <typename T> BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

/// Mean softmax cross-entropy of [B x K] logits against integer labels.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

}  // namespace adaspan
