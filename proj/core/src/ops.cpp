#include "adaspan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kernels.hpp"

namespace adaspan {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw Error(ErrorCode::ShapeMismatch,
                  "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Maps a flat index of the broadcast output to a flat index of one operand.
class BroadcastMap {
 public:
  BroadcastMap(const Shape& out, const Shape& in) {
    if (in == out) {
      kind_ = Kind::Same;
    } else if (numel_of(in) == 1) {
      kind_ = Kind::Scalar;
    } else {
      kind_ = Kind::General;
      const std::size_t rank = out.size();
      const std::size_t offset = rank - in.size();
      std::vector<std::size_t> in_strides(rank, 0);
      std::size_t stride = 1;
      for (std::size_t i = rank; i-- > offset;) {
        const std::size_t d = in[i - offset];
        in_strides[i] = d == 1 ? 0 : stride;
        stride *= d;
      }
      const std::size_t n = numel_of(out);
      map_.resize(n);
      std::vector<std::size_t> idx(rank, 0);
      for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < rank; ++i) src += idx[i] * in_strides[i];
        map_[flat] = src;
        for (std::size_t i = rank; i-- > 0;) {
          if (++idx[i] < out[i]) break;
          idx[i] = 0;
        }
      }
    }
  }

  std::size_t operator()(std::size_t i) const {
    switch (kind_) {
      case Kind::Same: return i;
      case Kind::Scalar: return 0;
      case Kind::General: return map_[i];
    }
    return 0;
  }

 private:
  enum class Kind { Same, Scalar, General };
  Kind kind_ = Kind::Same;
  std::vector<std::size_t> map_;
};

template <typename T, typename Fwd, typename Da, typename Db>
BasicTensor<T> binary_op(const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd, Da da, Db db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  BasicTensor<T> out(out_shape);
  const BroadcastMap ma(out_shape, a.shape());
  const BroadcastMap mb(out_shape, b.shape());
  const std::size_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[ma(i)], pb[mb(i)]);

  if (detail::any_requires_grad<T>({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    detail::record(out, [ai, bi, oi, ma, mb, da, db]() {
      if (oi->grad.empty()) return;
      const std::size_t count = oi->data.size();
      const T* g = oi->grad.data();
      const T* x = ai->data.data();
      const T* y = bi->data.data();
      const T* z = oi->data.data();
      if (ai->requires_grad) {
        T* ga = ai->ensure_grad();
        for (std::size_t i = 0; i < count; ++i) {
          ga[ma(i)] += da(x[ma(i)], y[mb(i)], z[i], g[i]);
        }
      }
      if (bi->requires_grad) {
        T* gb = bi->ensure_grad();
        for (std::size_t i = 0; i < count; ++i) {
          gb[mb(i)] += db(x[ma(i)], y[mb(i)], z[i], g[i]);
        }
      }
    });
  }
  return out;
}

template <typename T, typename Fwd, typename Dx>
BasicTensor<T> unary_op(const BasicTensor<T>& a, Fwd fwd, Dx dx) {
  BasicTensor<T> out(a.shape());
  const std::size_t n = a.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  if (detail::any_requires_grad<T>({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    detail::record(out, [ai, oi, dx]() {
      if (oi->grad.empty()) return;
      T* ga = ai->ensure_grad();
      const T* g = oi->grad.data();
      const T* x = ai->data.data();
      const T* z = oi->data.data();
      const std::size_t count = oi->data.size();
      for (std::size_t i = 0; i < count; ++i) ga[i] += dx(x[i], z[i], g[i]);
    });
  }
  return out;
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* what) {
  if (t.dim() != rank) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " expects rank " +
                                              std::to_string(rank) + ", got " +
                                              shape_str(t.shape()));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x + y; }, [](T, T, T, T g) { return g; },
      [](T, T, T, T g) { return g; });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x - y; }, [](T, T, T, T g) { return g; },
      [](T, T, T, T g) { return -g; });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x * y; }, [](T, T y, T, T g) { return g * y; },
      [](T x, T, T, T g) { return g * x; });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  for (T v : b.data()) {
    if (v == T(0)) {
      throw Error(ErrorCode::DivisionByZero,
                  "zero denominator (a soft mask normalizer without epsilon?)");
    }
  }
  return binary_op(
      a, b, [](T x, T y) { return x / y; }, [](T, T y, T, T g) { return g / y; },
      [](T, T y, T z, T g) { return -g * z / y; });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, T b) {
  return unary_op(a, [b](T x) { return x + b; }, [](T, T, T g) { return g; });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, T b) {
  return unary_op(a, [b](T x) { return x - b; }, [](T, T, T g) { return g; });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, T b) {
  return unary_op(a, [b](T x) { return x * b; }, [b](T, T, T g) { return g * b; });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, T b) {
  if (b == T(0)) throw Error(ErrorCode::DivisionByZero, "division by scalar zero");
  return unary_op(a, [b](T x) { return x / b; }, [b](T, T, T g) { return g / b; });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  return unary_op(a, [](T x) { return std::exp(x); }, [](T, T z, T g) { return g * z; });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  return unary_op(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T, T g) { return x > T(0) ? g : T(0); });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi) {
  return unary_op(
      a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T x, T, T g) { return (x > lo && x < hi) ? g : T(0); });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  BasicTensor<T> out(Shape{1}, total);
  if (detail::any_requires_grad<T>({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    detail::record(out, [ai, oi]() {
      if (oi->grad.empty()) return;
      T* ga = ai->ensure_grad();
      const T g = oi->grad[0];
      for (std::size_t i = 0; i < ai->data.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  return mul(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw Error(ErrorCode::ShapeMismatch,
                "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  BasicTensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (detail::any_requires_grad<T>({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    detail::record(out, [ai, oi]() {
      if (oi->grad.empty()) return;
      T* ga = ai->ensure_grad();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) ga[i] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t start, std::size_t count) {
  require_rank(a, 2, "slice_rows");
  if (start + count > a.size(0)) {
    throw Error(ErrorCode::ShapeMismatch, "slice_rows [" + std::to_string(start) + ", " +
                                              std::to_string(start + count) + ") of " +
                                              shape_str(a.shape()));
  }
  const std::size_t cols = a.size(1);
  BasicTensor<T> out(Shape{count, cols});
  std::copy_n(a.ptr() + start * cols, count * cols, out.ptr());
  if (detail::any_requires_grad<T>({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    detail::record(out, [ai, oi, start, cols]() {
      if (oi->grad.empty()) return;
      T* ga = ai->ensure_grad() + start * cols;
      for (std::size_t i = 0; i < oi->grad.size(); ++i) ga[i] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw Error(ErrorCode::ShapeMismatch,
                "matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  BasicTensor<T> out(Shape{m, n});
  kernels::gemm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n, false);
  add_macs(static_cast<std::uint64_t>(m) * k * n);
  if (detail::any_requires_grad<T>({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    detail::record(out, [ai, bi, oi, m, k, n]() {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      if (ai->requires_grad) {
        kernels::gemm_nt(g, bi->data.data(), ai->ensure_grad(), m, n, k, true);
      }
      if (bi->requires_grad) {
        kernels::gemm_tn(ai->data.data(), g, bi->ensure_grad(), k, m, n, true);
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t batch = x.size(0), in = x.size(1), out_features = w.size(1);
  if (w.size(0) != in) {
    throw Error(ErrorCode::ShapeMismatch,
                "linear " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.dim() != 1 || bias.size(0) != out_features)) {
    throw Error(ErrorCode::ShapeMismatch, "linear bias " + shape_str(bias.shape()));
  }
  BasicTensor<T> out(Shape{batch, out_features});
  kernels::gemm_nn(x.ptr(), w.ptr(), out.ptr(), batch, in, out_features, false);
  add_macs(static_cast<std::uint64_t>(batch) * in * out_features);
  if (has_bias) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < out_features; ++j) out[b * out_features + j] += bias[j];
    }
  }
  if (detail::any_requires_grad<T>({&x, &w, &bias})) {
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = has_bias ? bias.impl() : nullptr;
    auto oi = out.impl();
    detail::record(out, [xi, wi, bi, oi, batch, in, out_features]() {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      if (xi->requires_grad) {
        kernels::gemm_nt(g, wi->data.data(), xi->ensure_grad(), batch, out_features, in, true);
      }
      if (wi->requires_grad) {
        kernels::gemm_tn(xi->data.data(), g, wi->ensure_grad(), in, batch, out_features, true);
      }
      if (bi && bi->requires_grad) {
        T* gb = bi->ensure_grad();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < out_features; ++j) gb[j] += g[b * out_features + j];
        }
      }
    });
  }
  return out;
}

void Conv2dGeometry::validate() const {
  if (kernel == 0 || kernel % 2 == 0) {
    throw Error(ErrorCode::EvenKernel, "kernel size must be odd, got " + std::to_string(kernel));
  }
  if (stride == 0) throw Error(ErrorCode::NonPositiveStride, "stride must be positive");
}

template <typename T>
BasicTensor<T> unfold(const BasicTensor<T>& x, std::size_t kernel, std::size_t stride,
                      std::size_t padding) {
  const Conv2dGeometry geo{kernel, stride, padding};
  geo.validate();
  require_rank(x, 3, "unfold");
  const std::size_t c = x.size(0), h = x.size(1), w = x.size(2);
  if (h + 2 * padding < kernel || w + 2 * padding < kernel) {
    throw Error(ErrorCode::ShapeMismatch, "unfold window larger than padded input");
  }
  const std::size_t oh = geo.out_extent(h), ow = geo.out_extent(w);
  BasicTensor<T> out(Shape{c * kernel * kernel, oh * ow});
  kernels::im2col(x.ptr(), c, h, w, kernel, stride, padding, out.ptr());
  if (detail::any_requires_grad<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    detail::record(out, [xi, oi, c, h, w, kernel, stride, padding]() {
      if (oi->grad.empty()) return;
      kernels::col2im(oi->grad.data(), c, h, w, kernel, stride, padding, xi->ensure_grad());
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> fold(const BasicTensor<T>& cols, std::size_t channels, std::size_t height,
                    std::size_t width, std::size_t kernel, std::size_t stride,
                    std::size_t padding) {
  const Conv2dGeometry geo{kernel, stride, padding};
  geo.validate();
  require_rank(cols, 2, "fold");
  const std::size_t l = geo.out_extent(height) * geo.out_extent(width);
  if (cols.size(0) != channels * kernel * kernel || cols.size(1) != l) {
    throw Error(ErrorCode::ShapeMismatch, "fold columns " + shape_str(cols.shape()));
  }
  BasicTensor<T> out(Shape{channels, height, width});
  kernels::col2im(cols.ptr(), channels, height, width, kernel, stride, padding, out.ptr());
  if (detail::any_requires_grad<T>({&cols})) {
    auto ci = cols.impl();
    auto oi = out.impl();
    detail::record(out, [ci, oi, channels, height, width, kernel, stride, padding]() {
      if (oi->grad.empty()) return;
      std::vector<T> tmp(ci->data.size());
      kernels::im2col(oi->grad.data(), channels, height, width, kernel, stride, padding,
                      tmp.data());
      T* gc = ci->ensure_grad();
      for (std::size_t i = 0; i < tmp.size(); ++i) gc[i] += tmp[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x_in, const BasicTensor<T>& weight, std::size_t stride,
                      std::size_t padding) {
  require_rank(weight, 4, "conv2d weight");
  const std::size_t kernel = weight.size(2);
  if (weight.size(3) != kernel) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d needs a square kernel");
  }
  const Conv2dGeometry geo{kernel, stride, padding};
  geo.validate();
  const bool unbatched = x_in.dim() == 3;
  if (!unbatched) require_rank(x_in, 4, "conv2d input");
  const Shape& xs = x_in.shape();
  const std::size_t batch = unbatched ? 1 : xs[0];
  const std::size_t cin = xs[unbatched ? 0 : 1];
  const std::size_t h = xs[unbatched ? 1 : 2];
  const std::size_t w = xs[unbatched ? 2 : 3];
  const std::size_t cout = weight.size(0);
  if (weight.size(1) != cin) {
    throw Error(ErrorCode::ShapeMismatch,
                "conv2d input " + shape_str(xs) + " vs weight " + shape_str(weight.shape()));
  }
  if (h + 2 * padding < kernel || w + 2 * padding < kernel) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d window larger than padded input");
  }
  const std::size_t oh = geo.out_extent(h), ow = geo.out_extent(w);
  const std::size_t l = oh * ow;
  const std::size_t patch = cin * kernel * kernel;
  const bool direct = kernel == 1 && stride == 1 && padding == 0;

  Shape out_shape = unbatched ? Shape{cout, oh, ow} : Shape{batch, cout, oh, ow};
  BasicTensor<T> out(out_shape);
  std::vector<T> cols(direct ? 0 : patch * l);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = x_in.ptr() + b * cin * h * w;
    const T* colsb = xb;
    if (!direct) {
      kernels::im2col(xb, cin, h, w, kernel, stride, padding, cols.data());
      colsb = cols.data();
    }
    kernels::gemm_nn(weight.ptr(), colsb, out.ptr() + b * cout * l, cout, patch, l, false);
  }
  add_macs(static_cast<std::uint64_t>(batch) * cout * patch * l);

  if (detail::any_requires_grad<T>({&x_in, &weight})) {
    auto xi = x_in.impl();
    auto wi = weight.impl();
    auto oi = out.impl();
    detail::record(out, [xi, wi, oi, batch, cin, h, w, cout, kernel, stride, padding, l, patch,
                         direct]() {
      if (oi->grad.empty()) return;
      std::vector<T> cols_buf(direct ? 0 : patch * l);
      std::vector<T> dcols(direct ? 0 : patch * l);
      T* gw = wi->requires_grad ? wi->ensure_grad() : nullptr;
      T* gx = xi->requires_grad ? xi->ensure_grad() : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* g = oi->grad.data() + b * cout * l;
        const T* xb = xi->data.data() + b * cin * h * w;
        if (gw) {
          const T* colsb = xb;
          if (!direct) {
            kernels::im2col(xb, cin, h, w, kernel, stride, padding, cols_buf.data());
            colsb = cols_buf.data();
          }
          kernels::gemm_nt(g, colsb, gw, cout, l, patch, true);
        }
        if (gx) {
          T* gxb = gx + b * cin * h * w;
          if (direct) {
            kernels::gemm_tn(wi->data.data(), g, gxb, patch, cout, l, true);
          } else {
            kernels::gemm_tn(wi->data.data(), g, dcols.data(), patch, cout, l, false);
            kernels::col2im(dcols.data(), cin, h, w, kernel, stride, padding, gxb);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, RunningStats<T>& stats, bool training,
                          double momentum, double eps) {
  if (x.dim() < 2) throw Error(ErrorCode::ShapeMismatch, "batch_norm needs [B x C x ...]");
  const std::size_t batch = x.size(0), channels = x.size(1);
  const std::size_t inner = x.numel() / (batch * channels);
  if (gamma.numel() != channels || beta.numel() != channels || stats.mean.numel() != channels ||
      stats.var.numel() != channels) {
    throw Error(ErrorCode::ShapeMismatch, "batch_norm parameters do not match " +
                                              std::to_string(channels) + " channels");
  }
  const std::size_t count = batch * inner;
  if (training && count < 2) {
    throw Error(ErrorCode::DegenerateBatch,
                "batch statistics need at least 2 values per channel, got " +
                    std::to_string(count));
  }

  BasicTensor<T> out(x.shape());
  std::vector<T> mean_c(channels), inv_std(channels);
  const T* px = x.ptr();
  for (std::size_t c = 0; c < channels; ++c) {
    T mu, var;
    if (training) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = px + (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = px + (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - m;
          sq += d * d;
        }
      }
      const double v = sq / static_cast<double>(count);
      mu = static_cast<T>(m);
      var = static_cast<T>(v);
      const double unbiased = sq / static_cast<double>(count - 1);
      stats.mean[c] = static_cast<T>((1.0 - momentum) * stats.mean[c] + momentum * m);
      stats.var[c] = static_cast<T>((1.0 - momentum) * stats.var[c] + momentum * unbiased);
    } else {
      mu = stats.mean[c];
      var = stats.var[c];
    }
    mean_c[c] = mu;
    inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + eps));
  }
  T* po = out.ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * inner;
      const T scale = gamma[c] * inv_std[c];
      const T shift = beta[c] - mean_c[c] * scale;
      for (std::size_t i = 0; i < inner; ++i) po[base + i] = px[base + i] * scale + shift;
    }
  }

  if (detail::any_requires_grad<T>({&x, &gamma, &beta})) {
    auto xi = x.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto oi = out.impl();
    detail::record(out, [xi, gi, bi, oi, mean_c, inv_std, batch, channels, inner, count,
                         training]() {
      if (oi->grad.empty()) return;
      const T* g = oi->grad.data();
      const T* xv = xi->data.data();
      T* gx = xi->requires_grad ? xi->ensure_grad() : nullptr;
      T* gg = gi->requires_grad ? gi->ensure_grad() : nullptr;
      T* gb = bi->requires_grad ? bi->ensure_grad() : nullptr;
      for (std::size_t c = 0; c < channels; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = (b * channels + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            const double xhat = (xv[base + i] - mean_c[c]) * inv_std[c];
            sum_g += g[base + i];
            sum_gx += g[base + i] * xhat;
          }
        }
        if (gg) gg[c] += static_cast<T>(sum_gx);
        if (gb) gb[c] += static_cast<T>(sum_g);
        if (!gx) continue;
        const double scale = gi->data[c] * inv_std[c];
        const double mg = sum_g / static_cast<double>(count);
        const double mgx = sum_gx / static_cast<double>(count);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = (b * channels + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            if (training) {
              const double xhat = (xv[base + i] - mean_c[c]) * inv_std[c];
              gx[base + i] += static_cast<T>(scale * (g[base + i] - mg - xhat * mgx));
            } else {
              gx[base + i] += static_cast<T>(scale * g[base + i]);
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_masked(const BasicTensor<T>& logits, const BasicTensor<T>& mask,
                              double eps) {
  if (logits.dim() < 1) throw Error(ErrorCode::ShapeMismatch, "softmax_masked on scalar");
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.numel() / k;
  std::size_t groups = 1;
  if (mask.dim() == 1) {
    if (mask.size(0) != k) {
      throw Error(ErrorCode::ShapeMismatch,
                  "mask " + shape_str(mask.shape()) + " vs logits " + shape_str(logits.shape()));
    }
  } else if (mask.dim() == 2 && logits.dim() == 3 && mask.size(0) == logits.size(0) &&
             mask.size(1) == k) {
    groups = mask.size(0);
  } else {
    throw Error(ErrorCode::ShapeMismatch,
                "mask " + shape_str(mask.shape()) + " vs logits " + shape_str(logits.shape()));
  }
  const std::size_t rows_per_group = rows / groups;
  if (eps <= 0.0) {
    for (std::size_t gidx = 0; gidx < groups; ++gidx) {
      bool any = false;
      for (std::size_t i = 0; i < k; ++i) any = any || mask[gidx * k + i] > T(0);
      if (!any) {
        throw Error(ErrorCode::AllMaskedWithoutEpsilon,
                    "every mask entry is zero and epsilon is disabled");
      }
    }
  }

  BasicTensor<T> out(logits.shape());
  std::vector<T> denom(rows);
  const T* pa = logits.ptr();
  const T* pm = mask.ptr();
  T* po = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* a = pa + r * k;
    const T* m = pm + (r / rows_per_group) * k;
    T* o = po + r * k;
    T amax = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < k; ++i) amax = std::max(amax, a[i]);
    T z = T(0);
    for (std::size_t i = 0; i < k; ++i) {
      o[i] = std::exp(a[i] - amax) * m[i];
      z += o[i];
    }
    const T d = z + static_cast<T>(eps);
    denom[r] = d;
    const T inv = T(1) / d;
    for (std::size_t i = 0; i < k; ++i) o[i] *= inv;
  }

  if (detail::any_requires_grad<T>({&logits, &mask})) {
    auto ai = logits.impl();
    auto mi = mask.impl();
    auto oi = out.impl();
    detail::record(out, [ai, mi, oi, denom = std::move(denom), rows, k, rows_per_group]() {
      if (oi->grad.empty()) return;
      T* ga = ai->requires_grad ? ai->ensure_grad() : nullptr;
      T* gm = mi->requires_grad ? mi->ensure_grad() : nullptr;
      const T* g = oi->grad.data();
      const T* o = oi->data.data();
      const T* a = ai->data.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * k;
        const std::size_t mbase = (r / rows_per_group) * k;
        T dot = T(0);
        for (std::size_t i = 0; i < k; ++i) dot += g[base + i] * o[base + i];
        const T inv = T(1) / denom[r];
        // d out / d u_i with u_i = exp(a_i - max) M_i
        if (ga) {
          for (std::size_t i = 0; i < k; ++i) {
            ga[base + i] += (g[base + i] - dot) * o[base + i];
          }
        }
        if (gm) {
          T amax = -std::numeric_limits<T>::infinity();
          for (std::size_t i = 0; i < k; ++i) amax = std::max(amax, a[base + i]);
          for (std::size_t i = 0; i < k; ++i) {
            gm[mbase + i] += (g[base + i] - dot) * inv * std::exp(a[base + i] - amax);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, std::size_t window) {
  if (x.dim() < 2 || window == 0) throw Error(ErrorCode::ShapeMismatch, "avg_pool2d input");
  const std::size_t h = x.shape()[x.dim() - 2], w = x.shape()[x.dim() - 1];
  if (h % window != 0 || w % window != 0) {
    throw Error(ErrorCode::ShapeMismatch,
                "avg_pool2d window " + std::to_string(window) + " on " + shape_str(x.shape()));
  }
  const std::size_t planes = x.numel() / (h * w);
  const std::size_t oh = h / window, ow = w / window;
  Shape out_shape = x.shape();
  out_shape[x.dim() - 2] = oh;
  out_shape[x.dim() - 1] = ow;
  BasicTensor<T> out(out_shape);
  const T scale = T(1) / static_cast<T>(window * window);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.ptr() + p * h * w;
    T* dst = out.ptr() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        T s = T(0);
        for (std::size_t a = 0; a < window; ++a) {
          for (std::size_t b = 0; b < window; ++b) s += src[(i * window + a) * w + j * window + b];
        }
        dst[i * ow + j] = s * scale;
      }
    }
  }
  if (detail::any_requires_grad<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    detail::record(out, [xi, oi, planes, h, w, oh, ow, window, scale]() {
      if (oi->grad.empty()) return;
      T* gx = xi->ensure_grad();
      for (std::size_t p = 0; p < planes; ++p) {
        const T* g = oi->grad.data() + p * oh * ow;
        T* dst = gx + p * h * w;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) dst[i * w + j] += g[(i / window) * ow + j / window] * scale;
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t batch = x.size(0), channels = x.size(1), hw = x.size(2) * x.size(3);
  BasicTensor<T> out(Shape{batch, channels});
  const T scale = T(1) / static_cast<T>(hw);
  for (std::size_t p = 0; p < batch * channels; ++p) {
    const T* src = x.ptr() + p * hw;
    T s = T(0);
    for (std::size_t i = 0; i < hw; ++i) s += src[i];
    out[p] = s * scale;
  }
  if (detail::any_requires_grad<T>({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    detail::record(out, [xi, oi, batch, channels, hw, scale]() {
      if (oi->grad.empty()) return;
      T* gx = xi->ensure_grad();
      for (std::size_t p = 0; p < batch * channels; ++p) {
        const T g = oi->grad[p] * scale;
        for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t batch = logits.size(0), classes = logits.size(1);
  if (labels.size() != batch) {
    throw Error(ErrorCode::ShapeMismatch, "cross_entropy: " + std::to_string(labels.size()) +
                                              " labels for batch of " + std::to_string(batch));
  }
  std::vector<T> probs(batch * classes);
  T total = T(0);
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label));
    }
    const T* a = logits.ptr() + b * classes;
    T amax = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < classes; ++i) amax = std::max(amax, a[i]);
    T z = T(0);
    for (std::size_t i = 0; i < classes; ++i) {
      probs[b * classes + i] = std::exp(a[i] - amax);
      z += probs[b * classes + i];
    }
    for (std::size_t i = 0; i < classes; ++i) probs[b * classes + i] /= z;
    total += std::log(z) + amax - a[label];
  }
  BasicTensor<T> out(Shape{1}, total / static_cast<T>(batch));
  if (detail::any_requires_grad<T>({&logits})) {
    auto li = logits.impl();
    auto oi = out.impl();
    std::vector<int> lab(labels.begin(), labels.end());
    detail::record(out, [li, oi, probs = std::move(probs), lab = std::move(lab), batch,
                         classes]() {
      if (oi->grad.empty()) return;
      T* gl = li->ensure_grad();
      const T g = oi->grad[0] / static_cast<T>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < classes; ++i) {
          const T onehot = static_cast<std::size_t>(lab[b]) == i ? T(1) : T(0);
          gl[b * classes + i] += g * (probs[b * classes + i] - onehot);
        }
      }
    });
  }
  return out;
}

#define ADASPAN_INSTANTIATE_OPS(T)                                                          \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> add(const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> sub(const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> mul(const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> div(const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                        \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                       \
  template BasicTensor<T> clamp(const BasicTensor<T>&, T, T);                                \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                        \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                       \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                             \
  template BasicTensor<T> slice_rows(const BasicTensor<T>&, std::size_t, std::size_t);       \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                 const BasicTensor<T>&);                                     \
  template BasicTensor<T> unfold(const BasicTensor<T>&, std::size_t, std::size_t,            \
                                 std::size_t);                                               \
  template BasicTensor<T> fold(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t, \
                               std::size_t, std::size_t, std::size_t);                       \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t,  \
                                 std::size_t);                                               \
  template BasicTensor<T> batch_norm(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                     const BasicTensor<T>&, RunningStats<T>&, bool, double,  \
                                     double);                                                \
  template BasicTensor<T> softmax_masked(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                         double);                                            \
  template BasicTensor<T> avg_pool2d(const BasicTensor<T>&, std::size_t);                    \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                            \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const int>);

ADASPAN_INSTANTIATE_OPS(float)
ADASPAN_INSTANTIATE_OPS(double)

}  // namespace adaspan
