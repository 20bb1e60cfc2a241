#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "adaspan/tensor.hpp"

namespace adaspan {

/// Learnable span `z` (pixels) and fixed ramp length `ramp` of one head.
struct SpanParam {
  double z = 2.0;
  int ramp = 2;
};

/// Odd side length of the square neighbourhood that covers every head:
///   max_size = ceil(clamp(max(z) + ramp, 0, input_size)), extent = 2 max_size + 1.
int kernel_extent(std::span<const double> z_values, int ramp, std::size_t input_size);

/// Half-width of the neighbourhood, i.e. (kernel_extent - 1) / 2.
int kernel_radius(std::span<const double> z_values, int ramp, std::size_t input_size);

/// Chebyshev distance of every cell of a side x side grid to its centre.
std::vector<int> chebyshev_grid(std::size_t side);

template <typename T>
struct MaskGrid {
  std::size_t side = 0;
  BasicTensor<T> values;  // [side x side], entries in [0, 1]
};

/// M(r, s) = clamp((ramp + z - d) / ramp, 0, 1), d the Chebyshev distance to
/// the centre. `z` is a one-element tensor; the result is differentiable in it.
template <typename T>
MaskGrid<T> create_adaptive_mask(std::size_t extent, const BasicTensor<T>& z, int ramp);

/// Convenience overload for a plain span value (no gradient).
template <typename T>
MaskGrid<T> create_adaptive_mask(std::size_t extent, double z, int ramp);

/// Masks of every head on one shared extent, stacked as [heads x side*side].
/// `spans` holds one z per head. Raises ExtentTooSmall if the extent is
/// narrower than kernel_extent(spans, ramp, input_size).
template <typename T>
BasicTensor<T> stacked_head_masks(const BasicTensor<T>& spans, int ramp, std::size_t extent,
                                  std::size_t input_size = std::numeric_limits<std::size_t>::max());

/// Per-head view of stacked_head_masks.
template <typename T>
std::vector<MaskGrid<T>> head_masks(const BasicTensor<T>& spans, int ramp, std::size_t extent,
                                    std::size_t input_size = std::numeric_limits<std::size_t>::max());

}  // namespace adaspan
