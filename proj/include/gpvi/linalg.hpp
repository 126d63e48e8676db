#pragma once

#include <Eigen/Core>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gpvi/tensor.hpp"

namespace gpvi {

/// Keeps large temporaries on the heap instead of cycling them through
/// mmap/munmap; the training loops allocate megabyte-sized batch tensors
/// every step.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
#endif
}

}  // namespace gpvi

namespace gpvi::linalg {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;

inline CMap mat(const Tensor& t, std::size_t r, std::size_t c) {
  return CMap(t.data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

inline Map mat(Tensor& t, std::size_t r, std::size_t c) {
  return Map(t.data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

inline CMap mat2(const Tensor& t) { return mat(t, t.rows(), t.cols()); }
inline Map mat2(Tensor& t) { return mat(t, t.rows(), t.cols()); }

/// out = x * w^T + broadcast(bias); x is B-by-in, w is out-by-in.
inline void affine(const Tensor& x, const Tensor& w, const Tensor& bias, Tensor& out) {
  mat2(out).noalias() = mat2(x) * mat2(w).transpose();
  auto o = mat2(out);
  Eigen::Map<const Eigen::RowVectorXd> b(bias.data.data(),
                                         static_cast<Eigen::Index>(bias.numel()));
  o.rowwise() += b;
}

/// out = x * w^T (no bias).
inline void matmul_nt(const Tensor& x, const Tensor& w, Tensor& out) {
  mat2(out).noalias() = mat2(x) * mat2(w).transpose();
}

/// out = a^T * b; a is B-by-m, b is B-by-n, out is m-by-n.
inline void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  mat2(out).noalias() = mat2(a).transpose() * mat2(b);
}

/// out = a * b; a is B-by-m, b is m-by-n.
inline void matmul_nn(const Tensor& a, const Tensor& b, Tensor& out) {
  mat2(out).noalias() = mat2(a) * mat2(b);
}

inline void set_threads(int n) { Eigen::setNbThreads(n < 1 ? 1 : n); }

}  // namespace gpvi::linalg
