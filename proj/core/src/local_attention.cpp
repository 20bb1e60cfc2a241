#include "adaspan/local_attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "adaspan/adaptive_mask.hpp"
#include "adaspan/ops.hpp"

namespace adaspan {

void AttentionLayerConfig::validate() const {
  if (in_channels == 0 || out_channels == 0 || heads == 0) {
    throw Error(ErrorCode::ChannelMismatch, "attention channels and heads must be positive");
  }
  if (out_channels % heads != 0 || head_dim() % 2 != 0) {
    throw Error(ErrorCode::ChannelMismatch,
                "out_channels " + std::to_string(out_channels) + " must split into " +
                    std::to_string(heads) + " heads of even width");
  }
  if (stride != 1 && stride != 2) {
    throw Error(ErrorCode::NonPositiveStride, "attention stride must be 1 or 2");
  }
  if (input_size == 0 || input_size % stride != 0) {
    throw Error(ErrorCode::InvalidArgument, "input size " + std::to_string(input_size) +
                                                " not divisible by stride");
  }
  if (ramp < 1) throw Error(ErrorCode::InvalidArgument, "ramp must be >= 1");
  if (variant == AttentionVariant::Fixed) {
    if (fixed_extent % 2 == 0) {
      throw Error(ErrorCode::EvenExtent, "fixed extent must be odd");
    }
    if (fixed_extent > table_rows()) {
      throw Error(ErrorCode::ExtentExceedsTable,
                  "fixed extent " + std::to_string(fixed_extent) + " exceeds " +
                      std::to_string(table_rows()) + " embedding rows");
    }
  }
}

template <typename T>
AttentionLayerParams<T> AttentionLayerParams<T>::init(const AttentionLayerConfig& config,
                                                      Rng& rng) {
  config.validate();
  AttentionLayerParams p;
  const std::size_t in = config.in_channels, out = config.out_channels;
  const std::size_t half = config.head_dim() / 2;
  auto normal = [&rng](Shape shape, double std) {
    BasicTensor<T> t(std::move(shape), T(0), true);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal() * std);
    return t;
  };
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(in));
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));
  p.query = normal({out, in}, proj_std);
  p.key = normal({out, in}, proj_std);
  p.value = normal({out, in}, proj_std);
  p.rel_height = normal({config.table_rows(), half}, emb_std);
  p.rel_width = normal({config.table_rows(), half}, emb_std);
  if (config.variant == AttentionVariant::Adaptive) {
    p.spans = BasicTensor<T>(Shape{config.heads}, static_cast<T>(config.init_span), true);
  }
  return p;
}

template <typename T>
std::size_t attention_extent(const AttentionLayerParams<T>& params,
                             const AttentionLayerConfig& config) {
  if (config.variant == AttentionVariant::Fixed) return config.fixed_extent;
  std::vector<double> z(params.spans.data().begin(), params.spans.data().end());
  for (auto& v : z) v = std::clamp(v, 0.0, static_cast<double>(config.input_size));
  const auto extent = static_cast<std::size_t>(kernel_extent(z, config.ramp, config.input_size));
  return std::min(extent, config.table_rows());
}

template <typename T>
void project_spans(AttentionLayerParams<T>& params, const AttentionLayerConfig& config) {
  if (!params.spans.defined()) return;
  const T hi = static_cast<T>(config.input_size);
  for (auto& z : params.spans.data()) z = std::clamp(z, T(0), hi);
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> slice_relative_embeddings(
    const BasicTensor<T>& height_table, const BasicTensor<T>& width_table, std::size_t extent) {
  if (height_table.dim() != 2 || width_table.dim() != 2 ||
      height_table.size(0) != width_table.size(0)) {
    throw Error(ErrorCode::ShapeMismatch, "embedding tables must be matching 2-D tensors");
  }
  const std::size_t rows = height_table.size(0);
  if (extent > rows) {
    throw Error(ErrorCode::ExtentExceedsTable, "extent " + std::to_string(extent) +
                                                   " exceeds table of " + std::to_string(rows) +
                                                   " rows");
  }
  if (extent % 2 == 0) throw Error(ErrorCode::EvenExtent, "extent must be odd");
  const std::size_t start = (rows - extent) / 2;
  return {slice_rows(height_table, start, extent), slice_rows(width_table, start, extent)};
}

template <typename T>
BasicTensor<T> add_relative_embeddings(const BasicTensor<T>& keys, const BasicTensor<T>& rel_h,
                                       const BasicTensor<T>& rel_w) {
  if (keys.dim() < 2 || rel_h.dim() != 2 || rel_w.dim() != 2 ||
      rel_h.shape() != rel_w.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "add_relative_embeddings operand ranks");
  }
  const std::size_t extent = rel_h.size(0), half = rel_h.size(1);
  const std::size_t cells = keys.shape()[keys.dim() - 2];
  const std::size_t d_head = keys.shape().back();
  if (cells != extent * extent || d_head != 2 * half) {
    throw Error(ErrorCode::ShapeMismatch, "keys " + shape_str(keys.shape()) +
                                              " vs embeddings " + shape_str(rel_h.shape()));
  }
  // Per-cell addend [cells x d_head], broadcast over the leading key axes.
  BasicTensor<T> addend(Shape{cells, d_head});
  for (std::size_t r = 0; r < extent; ++r) {
    for (std::size_t s = 0; s < extent; ++s) {
      T* row = addend.ptr() + (r * extent + s) * d_head;
      std::copy_n(rel_w.ptr() + s * half, half, row);
      std::copy_n(rel_h.ptr() + r * half, half, row + half);
    }
  }
  if (detail::any_requires_grad<T>({&rel_h, &rel_w})) {
    auto hi = rel_h.impl();
    auto wi = rel_w.impl();
    auto ai = addend.impl();
    detail::record(addend, [hi, wi, ai, extent, half, d_head]() {
      if (ai->grad.empty()) return;
      T* gh = hi->requires_grad ? hi->ensure_grad() : nullptr;
      T* gw = wi->requires_grad ? wi->ensure_grad() : nullptr;
      for (std::size_t r = 0; r < extent; ++r) {
        for (std::size_t s = 0; s < extent; ++s) {
          const T* g = ai->grad.data() + (r * extent + s) * d_head;
          for (std::size_t d = 0; d < half; ++d) {
            if (gw) gw[s * half + d] += g[d];
            if (gh) gh[r * half + d] += g[half + d];
          }
        }
      }
    });
  }
  return add(keys, addend);
}

template <typename T>
BasicTensor<T> attention_masks(const AttentionLayerParams<T>& params,
                               const AttentionLayerConfig& config, std::size_t extent) {
  if (config.variant == AttentionVariant::Fixed) {
    return BasicTensor<T>::ones({config.heads, extent * extent});
  }
  return stacked_head_masks(params.spans, config.ramp, extent,
                            std::min<std::size_t>(config.input_size, (extent - 1) / 2));
}

namespace detail {

namespace {

struct LocalGeometry {
  std::size_t batch, channels, side, heads, head_dim, extent, radius, padded;

  std::size_t plane() const { return side * side; }
  std::size_t padded_plane() const { return padded * padded; }
  std::size_t cells() const { return extent * extent; }
};

template <typename T>
LocalGeometry local_geometry(const BasicTensor<T>& x, std::size_t heads, std::size_t extent) {
  if (x.dim() != 4 || x.size(2) != x.size(3)) {
    throw Error(ErrorCode::ShapeMismatch, "expected [B x C x S x S], got " + shape_str(x.shape()));
  }
  if (heads == 0 || x.size(1) % heads != 0) {
    throw Error(ErrorCode::ChannelMismatch, "channels not divisible by heads");
  }
  if (extent % 2 == 0) throw Error(ErrorCode::EvenExtent, "extent must be odd");
  LocalGeometry g{};
  g.batch = x.size(0);
  g.channels = x.size(1);
  g.side = x.size(2);
  g.heads = heads;
  g.head_dim = g.channels / heads;
  g.extent = extent;
  g.radius = (extent - 1) / 2;
  g.padded = g.side + 2 * g.radius;
  return g;
}

// Copies head h of sample b into a zero-padded [head_dim x padded x padded] buffer.
template <typename T>
void pad_head(const T* src, const LocalGeometry& g, std::size_t b, std::size_t h, T* dst) {
  std::fill_n(dst, g.head_dim * g.padded_plane(), T(0));
  for (std::size_t d = 0; d < g.head_dim; ++d) {
    const T* plane = src + (b * g.channels + h * g.head_dim + d) * g.plane();
    T* out = dst + d * g.padded_plane();
    for (std::size_t i = 0; i < g.side; ++i) {
      std::copy_n(plane + i * g.side, g.side, out + (i + g.radius) * g.padded + g.radius);
    }
  }
}

template <typename T>
void unpad_head_add(const T* src, const LocalGeometry& g, std::size_t b, std::size_t h, T* dst) {
  for (std::size_t d = 0; d < g.head_dim; ++d) {
    T* plane = dst + (b * g.channels + h * g.head_dim + d) * g.plane();
    const T* in = src + d * g.padded_plane();
    for (std::size_t i = 0; i < g.side; ++i) {
      const T* row = in + (i + g.radius) * g.padded + g.radius;
      for (std::size_t j = 0; j < g.side; ++j) plane[i * g.side + j] += row[j];
    }
  }
}

// [cells x plane] <-> rows of the [heads x B*plane x cells] layout.
template <typename T>
void gather_cells(const T* src, const LocalGeometry& g, std::size_t b, std::size_t h, T* dst) {
  const std::size_t cells = g.cells(), plane = g.plane();
  const T* base = src + (h * g.batch + b) * plane * cells;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < cells; ++c) dst[c * plane + p] = base[p * cells + c];
  }
}

template <typename T>
void scatter_cells(const T* src, const LocalGeometry& g, std::size_t b, std::size_t h, T* dst,
                   bool accumulate) {
  const std::size_t cells = g.cells(), plane = g.plane();
  T* base = dst + (h * g.batch + b) * plane * cells;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < cells; ++c) {
      if (accumulate) {
        base[p * cells + c] += src[c * plane + p];
      } else {
        base[p * cells + c] = src[c * plane + p];
      }
    }
  }
}

template <typename T>
T rel_value(const T* rel_h, const T* rel_w, std::size_t half, std::size_t r, std::size_t s,
            std::size_t d) {
  return d < half ? rel_w[s * half + d] : rel_h[r * half + (d - half)];
}

}  // namespace

template <typename T>
BasicTensor<T> local_logits(const BasicTensor<T>& q, const BasicTensor<T>& k,
                            const BasicTensor<T>& rel_h, const BasicTensor<T>& rel_w,
                            std::size_t heads, std::size_t extent) {
  const LocalGeometry g = local_geometry(q, heads, extent);
  if (k.shape() != q.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "queries " + shape_str(q.shape()) + " vs keys " +
                                              shape_str(k.shape()));
  }
  const std::size_t half = g.head_dim / 2;
  if (g.head_dim % 2 != 0 || rel_h.dim() != 2 || rel_h.size(0) != extent ||
      rel_h.size(1) != half || rel_w.shape() != rel_h.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "relative embeddings " + shape_str(rel_h.shape()) +
                                              " for extent " + std::to_string(extent));
  }
  const std::size_t cells = g.cells(), plane = g.plane();
  BasicTensor<T> out(Shape{heads, g.batch * plane, cells});
  std::vector<T> kpad(g.head_dim * g.padded_plane());
  std::vector<T> tmp(cells * plane);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      pad_head(k.ptr(), g, b, h, kpad.data());
      std::fill(tmp.begin(), tmp.end(), T(0));
      for (std::size_t d = 0; d < g.head_dim; ++d) {
        const T* qd = q.ptr() + (b * g.channels + h * g.head_dim + d) * plane;
        const T* kd = kpad.data() + d * g.padded_plane();
        for (std::size_t r = 0; r < extent; ++r) {
          for (std::size_t s = 0; s < extent; ++s) {
            const T rv = rel_value(rel_h.ptr(), rel_w.ptr(), half, r, s, d);
            T* tp = tmp.data() + (r * extent + s) * plane;
            for (std::size_t i = 0; i < g.side; ++i) {
              const T* krow = kd + (i + r) * g.padded + s;
              const T* qrow = qd + i * g.side;
              T* trow = tp + i * g.side;
              for (std::size_t j = 0; j < g.side; ++j) trow[j] += qrow[j] * (krow[j] + rv);
            }
          }
        }
      }
      scatter_cells(tmp.data(), g, b, h, out.ptr(), false);
    }
  }
  add_macs(static_cast<std::uint64_t>(g.batch) * heads * g.head_dim * cells * plane);

  if (any_requires_grad<T>({&q, &k, &rel_h, &rel_w})) {
    auto qi = q.impl();
    auto ki = k.impl();
    auto hi = rel_h.impl();
    auto wi = rel_w.impl();
    auto oi = out.impl();
    record(out, [qi, ki, hi, wi, oi, g, half]() {
      if (oi->grad.empty()) return;
      const std::size_t cells = g.cells(), plane = g.plane();
      T* gq = qi->requires_grad ? qi->ensure_grad() : nullptr;
      T* gk = ki->requires_grad ? ki->ensure_grad() : nullptr;
      T* gh = hi->requires_grad ? hi->ensure_grad() : nullptr;
      T* gw = wi->requires_grad ? wi->ensure_grad() : nullptr;
      std::vector<T> kpad(g.head_dim * g.padded_plane());
      std::vector<T> dkpad(g.head_dim * g.padded_plane());
      std::vector<T> gtmp(cells * plane);
      for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t h = 0; h < g.heads; ++h) {
          gather_cells(oi->grad.data(), g, b, h, gtmp.data());
          pad_head(ki->data.data(), g, b, h, kpad.data());
          std::fill(dkpad.begin(), dkpad.end(), T(0));
          for (std::size_t d = 0; d < g.head_dim; ++d) {
            const std::size_t qoff = (b * g.channels + h * g.head_dim + d) * plane;
            const T* qd = qi->data.data() + qoff;
            const T* kd = kpad.data() + d * g.padded_plane();
            T* dkd = dkpad.data() + d * g.padded_plane();
            for (std::size_t r = 0; r < g.extent; ++r) {
              for (std::size_t s = 0; s < g.extent; ++s) {
                const T rv = rel_value(hi->data.data(), wi->data.data(), half, r, s, d);
                const T* gp = gtmp.data() + (r * g.extent + s) * plane;
                T racc = T(0);
                for (std::size_t i = 0; i < g.side; ++i) {
                  const T* krow = kd + (i + r) * g.padded + s;
                  T* dkrow = dkd + (i + r) * g.padded + s;
                  const T* qrow = qd + i * g.side;
                  const T* grow = gp + i * g.side;
                  if (gq) {
                    T* dqrow = gq + qoff + i * g.side;
                    for (std::size_t j = 0; j < g.side; ++j) dqrow[j] += grow[j] * (krow[j] + rv);
                  }
                  for (std::size_t j = 0; j < g.side; ++j) {
                    const T gqv = grow[j] * qrow[j];
                    dkrow[j] += gqv;
                    racc += gqv;
                  }
                }
                if (d < half) {
                  if (gw) gw[s * half + d] += racc;
                } else if (gh) {
                  gh[r * half + (d - half)] += racc;
                }
              }
            }
          }
          if (gk) unpad_head_add(dkpad.data(), g, b, h, gk);
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> local_weighted_sum(const BasicTensor<T>& weights, const BasicTensor<T>& v,
                                  std::size_t heads, std::size_t extent) {
  const LocalGeometry g = local_geometry(v, heads, extent);
  const std::size_t cells = g.cells(), plane = g.plane();
  if (weights.shape() != Shape{heads, g.batch * plane, cells}) {
    throw Error(ErrorCode::ShapeMismatch, "weights " + shape_str(weights.shape()) +
                                              " vs values " + shape_str(v.shape()));
  }
  BasicTensor<T> out(v.shape());
  std::vector<T> vpad(g.head_dim * g.padded_plane());
  std::vector<T> wt(cells * plane);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      pad_head(v.ptr(), g, b, h, vpad.data());
      gather_cells(weights.ptr(), g, b, h, wt.data());
      for (std::size_t d = 0; d < g.head_dim; ++d) {
        const T* vd = vpad.data() + d * g.padded_plane();
        T* yd = out.ptr() + (b * g.channels + h * g.head_dim + d) * plane;
        for (std::size_t r = 0; r < extent; ++r) {
          for (std::size_t s = 0; s < extent; ++s) {
            const T* wp = wt.data() + (r * extent + s) * plane;
            for (std::size_t i = 0; i < g.side; ++i) {
              const T* vrow = vd + (i + r) * g.padded + s;
              const T* wrow = wp + i * g.side;
              T* yrow = yd + i * g.side;
              for (std::size_t j = 0; j < g.side; ++j) yrow[j] += wrow[j] * vrow[j];
            }
          }
        }
      }
    }
  }
  add_macs(static_cast<std::uint64_t>(g.batch) * heads * g.head_dim * cells * plane);

  if (any_requires_grad<T>({&weights, &v})) {
    auto wi = weights.impl();
    auto vi = v.impl();
    auto oi = out.impl();
    record(out, [wi, vi, oi, g]() {
      if (oi->grad.empty()) return;
      const std::size_t cells = g.cells(), plane = g.plane();
      T* gw = wi->requires_grad ? wi->ensure_grad() : nullptr;
      T* gv = vi->requires_grad ? vi->ensure_grad() : nullptr;
      std::vector<T> vpad(g.head_dim * g.padded_plane());
      std::vector<T> dvpad(g.head_dim * g.padded_plane());
      std::vector<T> wt(cells * plane);
      std::vector<T> dwt(cells * plane);
      for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t h = 0; h < g.heads; ++h) {
          pad_head(vi->data.data(), g, b, h, vpad.data());
          gather_cells(wi->data.data(), g, b, h, wt.data());
          std::fill(dvpad.begin(), dvpad.end(), T(0));
          std::fill(dwt.begin(), dwt.end(), T(0));
          for (std::size_t d = 0; d < g.head_dim; ++d) {
            const T* vd = vpad.data() + d * g.padded_plane();
            T* dvd = dvpad.data() + d * g.padded_plane();
            const T* gy = oi->grad.data() + (b * g.channels + h * g.head_dim + d) * plane;
            for (std::size_t r = 0; r < g.extent; ++r) {
              for (std::size_t s = 0; s < g.extent; ++s) {
                const std::size_t cell = r * g.extent + s;
                const T* wp = wt.data() + cell * plane;
                T* dwp = dwt.data() + cell * plane;
                for (std::size_t i = 0; i < g.side; ++i) {
                  const T* vrow = vd + (i + r) * g.padded + s;
                  T* dvrow = dvd + (i + r) * g.padded + s;
                  const T* grow = gy + i * g.side;
                  const T* wrow = wp + i * g.side;
                  T* dwrow = dwp + i * g.side;
                  for (std::size_t j = 0; j < g.side; ++j) {
                    dwrow[j] += grow[j] * vrow[j];
                    dvrow[j] += wrow[j] * grow[j];
                  }
                }
              }
            }
          }
          if (gw) scatter_cells(dwt.data(), g, b, h, gw, true);
          if (gv) unpad_head_add(dvpad.data(), g, b, h, gv);
        }
      }
    });
  }
  return out;
}

}  // namespace detail

namespace {

template <typename T>
void check_input(const BasicTensor<T>& x, const AttentionLayerConfig& config) {
  if (x.dim() != 4) {
    throw Error(ErrorCode::ShapeMismatch, "attention expects [B x C x S x S], got " +
                                              shape_str(x.shape()));
  }
  if (x.size(1) != config.in_channels) {
    throw Error(ErrorCode::ChannelMismatch, "input has " + std::to_string(x.size(1)) +
                                                " channels, layer expects " +
                                                std::to_string(config.in_channels));
  }
  if (x.size(2) != config.input_size || x.size(3) != config.input_size) {
    throw Error(ErrorCode::ShapeMismatch, "input " + shape_str(x.shape()) +
                                              " does not match layer input size " +
                                              std::to_string(config.input_size));
  }
}

template <typename T>
BasicTensor<T> as_pointwise_kernel(const BasicTensor<T>& w) {
  return reshape(w, Shape{w.size(0), w.size(1), 1, 1});
}

}  // namespace

template <typename T>
BasicTensor<T> attention_forward(const BasicTensor<T>& x, AttentionLayerParams<T>& params,
                                 const AttentionLayerConfig& config) {
  config.validate();
  check_input(x, config);
  project_spans(params, config);
  const std::size_t extent = attention_extent(params, config);

  const auto masks = attention_masks(params, config, extent);
  const auto q = conv2d(x, as_pointwise_kernel(params.query), 1, 0);
  const auto k = conv2d(x, as_pointwise_kernel(params.key), 1, 0);
  const auto v = conv2d(x, as_pointwise_kernel(params.value), 1, 0);
  const auto [rel_h, rel_w] = slice_relative_embeddings(params.rel_height, params.rel_width, extent);
  const auto logits = detail::local_logits(q, k, rel_h, rel_w, config.heads, extent);
  const auto weights = softmax_masked(logits, masks);
  auto y = detail::local_weighted_sum(weights, v, config.heads, extent);
  if (config.stride == 2) y = avg_pool2d(y, 2);
  return y;
}

template <typename T>
BasicTensor<T> attention_forward_naive(const BasicTensor<T>& x,
                                       const AttentionLayerParams<T>& params,
                                       const AttentionLayerConfig& config) {
  config.validate();
  check_input(x, config);
  const std::size_t extent = attention_extent(params, config);
  const std::size_t rows = config.table_rows();
  if (extent > rows) throw Error(ErrorCode::ExtentExceedsTable, "extent exceeds table");
  const std::size_t start = (rows - extent) / 2;
  const std::ptrdiff_t radius = static_cast<std::ptrdiff_t>(extent / 2);
  const std::size_t batch = x.size(0), cin = config.in_channels, cout = config.out_channels;
  const std::size_t side = config.input_size, heads = config.heads;
  const std::size_t dh = config.head_dim(), half = dh / 2;
  const T ramp = static_cast<T>(config.ramp);

  auto pixel = [&](std::size_t b, std::size_t c, std::ptrdiff_t i, std::ptrdiff_t j) -> T {
    if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(side) ||
        j >= static_cast<std::ptrdiff_t>(side)) {
      return T(0);
    }
    return x[((b * cin + c) * side + static_cast<std::size_t>(i)) * side +
             static_cast<std::size_t>(j)];
  };

  BasicTensor<T> y(Shape{batch, cout, side, side});
  std::vector<T> qv(dh), logits(extent * extent), mask(extent * extent);
  std::vector<T> values(extent * extent * dh);
  for (std::size_t h = 0; h < heads; ++h) {
    T z = T(0);
    if (config.variant == AttentionVariant::Adaptive) {
      z = std::clamp(params.spans[h], T(0), static_cast<T>(side));
    }
    for (std::size_t r = 0; r < extent; ++r) {
      for (std::size_t s = 0; s < extent; ++s) {
        const auto dr = static_cast<std::ptrdiff_t>(r) - radius;
        const auto ds = static_cast<std::ptrdiff_t>(s) - radius;
        const T dist = static_cast<T>(std::max(std::abs(dr), std::abs(ds)));
        T m = T(1);
        if (config.variant == AttentionVariant::Adaptive) {
          m = std::clamp(((z + ramp) - dist) / ramp, T(0), T(1));
        }
        mask[r * extent + s] = m;
      }
    }
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < side; ++i) {
        for (std::size_t j = 0; j < side; ++j) {
          for (std::size_t d = 0; d < dh; ++d) {
            T acc = T(0);
            for (std::size_t c = 0; c < cin; ++c) {
              acc += params.query[(h * dh + d) * cin + c] *
                     pixel(b, c, static_cast<std::ptrdiff_t>(i), static_cast<std::ptrdiff_t>(j));
            }
            qv[d] = acc;
          }
          for (std::size_t r = 0; r < extent; ++r) {
            for (std::size_t s = 0; s < extent; ++s) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + r) - radius;
              const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + s) - radius;
              const std::size_t cell = r * extent + s;
              T logit = T(0);
              for (std::size_t d = 0; d < dh; ++d) {
                T key = T(0), val = T(0);
                for (std::size_t c = 0; c < cin; ++c) {
                  const T xv = pixel(b, c, ii, jj);
                  key += params.key[(h * dh + d) * cin + c] * xv;
                  val += params.value[(h * dh + d) * cin + c] * xv;
                }
                key += d < half ? params.rel_width[(start + s) * half + d]
                                : params.rel_height[(start + r) * half + (d - half)];
                logit += qv[d] * key;
                values[cell * dh + d] = val;
              }
              logits[cell] = logit;
            }
          }
          const T amax = *std::max_element(logits.begin(), logits.end());
          T denom = T(0);
          for (std::size_t cell = 0; cell < logits.size(); ++cell) {
            logits[cell] = std::exp(logits[cell] - amax) * mask[cell];
            denom += logits[cell];
          }
          denom += static_cast<T>(kMaskedSoftmaxEps);
          for (std::size_t d = 0; d < dh; ++d) {
            T acc = T(0);
            for (std::size_t cell = 0; cell < logits.size(); ++cell) {
              acc += (logits[cell] / denom) * values[cell * dh + d];
            }
            y[((b * cout + h * dh + d) * side + i) * side + j] = acc;
          }
        }
      }
    }
  }
  if (config.stride == 1) return y;

  const std::size_t out_side = side / 2;
  BasicTensor<T> pooled(Shape{batch, cout, out_side, out_side});
  for (std::size_t p = 0; p < batch * cout; ++p) {
    for (std::size_t i = 0; i < out_side; ++i) {
      for (std::size_t j = 0; j < out_side; ++j) {
        const T* src = y.ptr() + p * side * side;
        const T s = src[(2 * i) * side + 2 * j] + src[(2 * i) * side + 2 * j + 1] +
                    src[(2 * i + 1) * side + 2 * j] + src[(2 * i + 1) * side + 2 * j + 1];
        pooled[(p * out_side + i) * out_side + j] = s / T(4);
      }
    }
  }
  return pooled;
}

#define ADASPAN_INSTANTIATE_ATTENTION(T)                                                      \
  template struct AttentionLayerParams<T>;                                                    \
  template std::size_t attention_extent(const AttentionLayerParams<T>&,                       \
                                        const AttentionLayerConfig&);                         \
  template void project_spans(AttentionLayerParams<T>&, const AttentionLayerConfig&);         \
  template std::pair<BasicTensor<T>, BasicTensor<T>> slice_relative_embeddings(               \
      const BasicTensor<T>&, const BasicTensor<T>&, std::size_t);                             \
  template BasicTensor<T> add_relative_embeddings(const BasicTensor<T>&, const BasicTensor<T>&, \
                                                  const BasicTensor<T>&);                     \
  template BasicTensor<T> attention_masks(const AttentionLayerParams<T>&,                     \
                                          const AttentionLayerConfig&, std::size_t);          \
  template BasicTensor<T> attention_forward(const BasicTensor<T>&, AttentionLayerParams<T>&,  \
                                            const AttentionLayerConfig&);                     \
  template BasicTensor<T> attention_forward_naive(const BasicTensor<T>&,                      \
                                                  const AttentionLayerParams<T>&,             \
                                                  const AttentionLayerConfig&);               \
  template BasicTensor<T> detail::local_logits(const BasicTensor<T>&, const BasicTensor<T>&,  \
                                               const BasicTensor<T>&, const BasicTensor<T>&,  \
                                               std::size_t, std::size_t);                     \
  template BasicTensor<T> detail::local_weighted_sum(const BasicTensor<T>&,                   \
                                                     const BasicTensor<T>&, std::size_t,      \
                                                     std::size_t);

ADASPAN_INSTANTIATE_ATTENTION(float)
ADASPAN_INSTANTIATE_ATTENTION(double)

}  // namespace adaspan
