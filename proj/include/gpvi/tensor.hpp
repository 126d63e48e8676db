#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpvi {

/// Dense row-major array of 64-bit reals. The only numeric carrier in the
/// library; 1-D tensors are rows, 2-D tensors are row-major matrices.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size())
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) {
      if (e == 0) throw std::invalid_argument("Tensor: zero extent");
      n *= e;
    }
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }

  static Tensor row(std::vector<double> v) {
    std::vector<std::size_t> s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
  }

  static Tensor eye(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }

  std::size_t rows() const {
    return shape.empty() ? 0 : shape[0];
  }
  std::size_t cols() const {
    if (ndim() == 1) return shape[0];
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double* row_ptr(std::size_t i) { return data.data() + i * cols(); }
  const double* row_ptr(std::size_t i) const { return data.data() + i * cols(); }

  bool finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline double dot(const Tensor& a, const Tensor& b) {
  require(a.numel() == b.numel(), "dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
  return s;
}

inline double squared_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return s;
}

inline double l2_norm(const Tensor& a) { return std::sqrt(squared_norm(a)); }

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "tensor add: shape mismatch");
  Tensor r = a;
  for (std::size_t i = 0; i < r.numel(); ++i) r.data[i] += b.data[i];
  return r;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "tensor sub: shape mismatch");
  Tensor r = a;
  for (std::size_t i = 0; i < r.numel(); ++i) r.data[i] -= b.data[i];
  return r;
}

inline Tensor operator*(const Tensor& a, double s) {
  Tensor r = a;
  for (double& v : r.data) v *= s;
  return r;
}

inline Tensor operator*(double s, const Tensor& a) { return a * s; }

/// Copies the leading `width` columns of each row.
inline Tensor slice_cols(const Tensor& x, std::size_t width) {
  require(x.ndim() == 2 && width <= x.cols(), "slice_cols: bad width");
  Tensor out = Tensor::zeros({x.rows(), width});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < width; ++j) out(i, j) = x(i, j);
  return out;
}

inline Tensor extract_row(const Tensor& x, std::size_t i) {
  require(x.ndim() == 2 && i < x.rows(), "extract_row: bad index");
  Tensor out = Tensor::zeros({x.cols()});
  for (std::size_t j = 0; j < x.cols(); ++j) out[j] = x(i, j);
  return out;
}

inline Tensor as_row_matrix(const Tensor& v) {
  require(v.ndim() == 1, "as_row_matrix: expects 1-D");
  return Tensor({1, v.shape[0]}, v.data);
}

}  // namespace gpvi
