// Raw compute kernels shared by ops.cpp and local_attention.cpp.
#pragma once

#include <Eigen/Core>
#include <cstddef>

namespace adaspan::kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

// C[m x n] (+)= A[m x k] * B[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  MapConstMat<T> A(a, m, k);
  MapConstMat<T> B(b, k, n);
  MapMat<T> C(c, m, n);
  if (accumulate) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
}

// C[m x n] (+)= A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  MapConstMat<T> A(a, m, k);
  MapConstMat<T> B(b, n, k);
  MapMat<T> C(c, m, n);
  if (accumulate) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() = A * B.transpose();
  }
}

// C[m x n] (+)= A[k x m]^T * B[k x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  MapConstMat<T> A(a, k, m);
  MapConstMat<T> B(b, k, n);
  MapMat<T> C(c, m, n);
  if (accumulate) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B;
  }
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t padding, T* cols) {
  const std::size_t oh = (height + 2 * padding - kernel) / stride + 1;
  const std::size_t ow = (width + 2 * padding - kernel) / stride + 1;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = x + c * height * width;
    for (std::size_t kr = 0; kr < kernel; ++kr) {
      for (std::size_t ks = 0; ks < kernel; ++ks) {
        T* row = cols + ((c * kernel + kr) * kernel + ks) * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
          const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + kr) - pad;
          T* out = row + i * ow;
          if (r < 0 || r >= static_cast<std::ptrdiff_t>(height)) {
            for (std::size_t j = 0; j < ow; ++j) out[j] = T(0);
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(r) * width;
          for (std::size_t j = 0; j < ow; ++j) {
            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(j * stride + ks) - pad;
            out[j] = (s < 0 || s >= static_cast<std::ptrdiff_t>(width))
                         ? T(0)
                         : src[static_cast<std::size_t>(s)];
          }
        }
      }
    }
  }
}

// Scatter-add of im2col columns back into x (x is accumulated into).
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t padding, T* x) {
  const std::size_t oh = (height + 2 * padding - kernel) / stride + 1;
  const std::size_t ow = (width + 2 * padding - kernel) / stride + 1;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = x + c * height * width;
    for (std::size_t kr = 0; kr < kernel; ++kr) {
      for (std::size_t ks = 0; ks < kernel; ++ks) {
        const T* row = cols + ((c * kernel + kr) * kernel + ks) * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
          const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + kr) - pad;
          if (r < 0 || r >= static_cast<std::ptrdiff_t>(height)) continue;
          T* dst = plane + static_cast<std::size_t>(r) * width;
          const T* in = row + i * ow;
          for (std::size_t j = 0; j < ow; ++j) {
            const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(j * stride + ks) - pad;
            if (s >= 0 && s < static_cast<std::ptrdiff_t>(width)) {
              dst[static_cast<std::size_t>(s)] += in[j];
            }
          }
        }
      }
    }
  }
}

}  // namespace adaspan::kernels
