#include "adaspan/adaptive_mask.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "adaspan/ops.hpp"

namespace adaspan {

int kernel_radius(std::span<const double> z_values, int ramp, std::size_t input_size) {
  if (z_values.empty()) throw Error(ErrorCode::EmptySpanList, "need one span per head");
  if (ramp < 1) throw Error(ErrorCode::InvalidArgument, "ramp must be >= 1");
  if (input_size < 1) throw Error(ErrorCode::InvalidArgument, "input_size must be >= 1");
  const double z_max = *std::max_element(z_values.begin(), z_values.end());
  const double reach = std::clamp(z_max + ramp, 0.0, static_cast<double>(input_size));
  return static_cast<int>(std::ceil(reach));
}

int kernel_extent(std::span<const double> z_values, int ramp, std::size_t input_size) {
  return 2 * kernel_radius(z_values, ramp, input_size) + 1;
}

std::vector<int> chebyshev_grid(std::size_t side) {
  const int c = static_cast<int>(side) / 2;
  std::vector<int> d(side * side);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t s = 0; s < side; ++s) {
      d[r * side + s] = std::max(std::abs(static_cast<int>(r) - c), std::abs(static_cast<int>(s) - c));
    }
  }
  return d;
}

namespace {

void require_odd(std::size_t extent) {
  if (extent == 0 || extent % 2 == 0) {
    throw Error(ErrorCode::EvenExtent, "mask extent must be odd, got " + std::to_string(extent));
  }
}

template <typename T>
BasicTensor<T> distance_row(std::size_t extent) {
  const auto grid = chebyshev_grid(extent);
  std::vector<T> values(grid.begin(), grid.end());
  return BasicTensor<T>(Shape{extent * extent}, std::move(values));
}

// [heads] spans -> [heads x extent*extent] ramp masks.
template <typename T>
BasicTensor<T> ramp_masks(const BasicTensor<T>& spans, int ramp, std::size_t extent) {
  const std::size_t heads = spans.numel();
  const auto z = reshape(spans, Shape{heads, 1});
  const auto reach = add(z, static_cast<T>(ramp));
  const auto numer = sub(reach, distance_row<T>(extent));
  return clamp(div(numer, static_cast<T>(ramp)), T(0), T(1));
}

}  // namespace

template <typename T>
MaskGrid<T> create_adaptive_mask(std::size_t extent, const BasicTensor<T>& z, int ramp) {
  require_odd(extent);
  if (ramp < 1) throw Error(ErrorCode::InvalidArgument, "ramp must be >= 1");
  if (z.numel() != 1) throw Error(ErrorCode::ShapeMismatch, "create_adaptive_mask takes one span");
  auto masks = ramp_masks(z, ramp, extent);
  return {extent, reshape(masks, Shape{extent, extent})};
}

template <typename T>
MaskGrid<T> create_adaptive_mask(std::size_t extent, double z, int ramp) {
  return create_adaptive_mask(extent, BasicTensor<T>::scalar(static_cast<T>(z)), ramp);
}

template <typename T>
BasicTensor<T> stacked_head_masks(const BasicTensor<T>& spans, int ramp, std::size_t extent,
                                  std::size_t input_size) {
  require_odd(extent);
  if (spans.numel() == 0) throw Error(ErrorCode::EmptySpanList, "need one span per head");
  std::vector<double> z(spans.data().begin(), spans.data().end());
  const int needed = kernel_extent(z, ramp, input_size);
  if (static_cast<int>(extent) < needed) {
    throw Error(ErrorCode::ExtentTooSmall, "extent " + std::to_string(extent) +
                                               " cannot hold spans needing " +
                                               std::to_string(needed));
  }
  return ramp_masks(spans, ramp, extent);
}

template <typename T>
std::vector<MaskGrid<T>> head_masks(const BasicTensor<T>& spans, int ramp, std::size_t extent,
                                    std::size_t input_size) {
  const auto stacked = stacked_head_masks(spans, ramp, extent, input_size);
  std::vector<MaskGrid<T>> out;
  out.reserve(spans.numel());
  for (std::size_t h = 0; h < spans.numel(); ++h) {
    out.push_back({extent, reshape(slice_rows(stacked, h, 1), Shape{extent, extent})});
  }
  return out;
}

#define ADASPAN_INSTANTIATE_MASK(T)                                                         \
  template MaskGrid<T> create_adaptive_mask(std::size_t, const BasicTensor<T>&, int);       \
  template MaskGrid<T> create_adaptive_mask<T>(std::size_t, double, int);                   \
  template BasicTensor<T> stacked_head_masks(const BasicTensor<T>&, int, std::size_t,       \
                                             std::size_t);                                  \
  template std::vector<MaskGrid<T>> head_masks(const BasicTensor<T>&, int, std::size_t,     \
                                               std::size_t);

ADASPAN_INSTANTIATE_MASK(float)
ADASPAN_INSTANTIATE_MASK(double)

}  // namespace adaspan
