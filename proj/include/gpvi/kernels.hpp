#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gpvi/tensor.hpp"

namespace gpvi {

/// RBF kernel block: values(i,j) = k(zprime_i, z_j) and
/// grads(i,j,:) = d k(zprime_i, z_j) / d zprime_i.
struct KernelBatch {
  Tensor values;  // n' x n
  Tensor grads;   // n' x n x d
  double bandwidth = 1.0;
};

/// Median-heuristic bandwidth h = med^2 / ln(n), where med is the median of
/// the n(n-1)/2 pairwise Euclidean distances (self-pairs excluded). Falls
/// back to 1.0 when the points are (numerically) all identical.
inline double median_bandwidth(const Tensor& samples) {
  require(samples.ndim() == 2, "median_bandwidth: samples must be n x d");
  const std::size_t n = samples.rows(), d = samples.cols();
  require(n >= 2, "median_bandwidth: needs at least 2 samples");
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = samples.row_ptr(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double* b = samples.row_ptr(j);
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double t = a[c] - b[c];
        s += t * t;
      }
      dist.push_back(std::sqrt(s));
    }
  }
  const std::size_t m = dist.size();
  double med;
  if (m % 2 == 1) {
    std::nth_element(dist.begin(), dist.begin() + m / 2, dist.end());
    med = dist[m / 2];
  } else {
    std::nth_element(dist.begin(), dist.begin() + m / 2, dist.end());
    double hi = dist[m / 2];
    std::nth_element(dist.begin(), dist.begin() + m / 2 - 1, dist.end());
    med = 0.5 * (dist[m / 2 - 1] + hi);
  }
  if (med < 1e-12) return 1.0;
  return med * med / std::log(double(n));
}

/// k(z', z) = exp(-||z' - z||^2 / h) with gradient w.r.t. the first argument.
inline KernelBatch rbf_batch(const Tensor& zprime, const Tensor& z, double h) {
  require(zprime.ndim() == 2 && z.ndim() == 2, "rbf_batch: inputs must be 2-D");
  require(zprime.cols() == z.cols(), "rbf_batch: dimension mismatch");
  require(h > 0.0, "rbf_batch: bandwidth must be positive");
  const std::size_t np = zprime.rows(), n = z.rows(), d = z.cols();
  KernelBatch kb;
  kb.bandwidth = h;
  kb.values = Tensor::zeros({np, n});
  kb.grads = Tensor::zeros({np, n, d});
  const double inv_h = 1.0 / h;
  for (std::size_t i = 0; i < np; ++i) {
    const double* a = zprime.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double* b = z.row_ptr(j);
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double t = a[c] - b[c];
        s += t * t;
      }
      double val = std::exp(-s * inv_h);
      kb.values(i, j) = val;
      double* g = kb.grads.data.data() + (i * n + j) * d;
      double coef = -2.0 * inv_h * val;
      for (std::size_t c = 0; c < d; ++c) g[c] = coef * (a[c] - b[c]);
    }
  }
  return kb;
}

}  // namespace gpvi
