#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "gpvi/tensor.hpp"

namespace gpvi {

struct SolveReport {
  Tensor solution;
  std::size_t iterations = 0;
  double final_residual = 0.0;
  bool converged = false;
  std::string reason;
};

/// Unpreconditioned BiCGSTAB on A x = b, warm-startable from x0. On numerical
/// breakdown the last finite iterate is returned with converged = false.
inline SolveReport bicgstab(const std::function<Tensor(const Tensor&)>& apply_A,
                            const Tensor& b, const Tensor& x0, double tol,
                            std::size_t max_iters) {
  require(tol > 0.0, "bicgstab: tol must be positive");
  require(max_iters >= 1, "bicgstab: max_iters must be at least 1");
  require(b.ndim() == 1 && x0.ndim() == 1 && b.numel() == x0.numel(),
          "bicgstab: b and x0 must be vectors of equal length");

  SolveReport rep;
  rep.solution = x0;
  const double bnorm = l2_norm(b);
  const double thresh = tol * bnorm;

  Tensor x = x0;
  Tensor r = b - apply_A(x);
  double rnorm = l2_norm(r);
  if (rnorm <= thresh) {
    rep.converged = true;
    rep.final_residual = rnorm;
    rep.solution = std::move(x);
    return rep;
  }

  const Tensor rhat = r;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  Tensor v = Tensor::zeros(b.shape);
  Tensor p = Tensor::zeros(b.shape);
  const double tiny = 1e-300;

  for (std::size_t it = 1; it <= max_iters; ++it) {
    double rho_new = dot(rhat, r);
    if (std::abs(rho_new) < tiny) {
      rep.reason = "rho breakdown";
      break;
    }
    double beta = (rho_new / rho) * (alpha / omega);
    for (std::size_t i = 0; i < p.numel(); ++i)
      p.data[i] = r.data[i] + beta * (p.data[i] - omega * v.data[i]);
    v = apply_A(p);
    double rv = dot(rhat, v);
    if (std::abs(rv) < tiny) {
      rep.reason = "alpha breakdown";
      break;
    }
    alpha = rho_new / rv;
    Tensor s = r;
    for (std::size_t i = 0; i < s.numel(); ++i) s.data[i] -= alpha * v.data[i];
    double snorm = l2_norm(s);
    if (snorm <= thresh) {
      for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] += alpha * p.data[i];
      rep.iterations = it;
      rep.final_residual = snorm;
      rep.converged = std::isfinite(snorm);
      if (x.finite()) rep.solution = std::move(x);
      return rep;
    }
    Tensor t = apply_A(s);
    double tt = dot(t, t);
    if (tt < tiny) {
      rep.reason = "omega breakdown";
      break;
    }
    omega = dot(t, s) / tt;
    if (!std::isfinite(omega) || std::abs(omega) < tiny) {
      rep.reason = "omega breakdown";
      break;
    }
    for (std::size_t i = 0; i < x.numel(); ++i)
      x.data[i] += alpha * p.data[i] + omega * s.data[i];
    for (std::size_t i = 0; i < r.numel(); ++i) r.data[i] = s.data[i] - omega * t.data[i];
    rnorm = l2_norm(r);
    rep.iterations = it;
    if (!x.finite() || !std::isfinite(rnorm)) {
      rep.reason = "non-finite iterate";
      rep.final_residual = rnorm;
      return rep;  // rep.solution still holds the last finite iterate
    }
    rep.solution = x;
    rep.final_residual = rnorm;
    if (rnorm <= thresh) {
      rep.converged = true;
      return rep;
    }
    rho = rho_new;
  }
  if (rep.reason.empty()) rep.reason = "max iterations";
  rep.final_residual = l2_norm(b - apply_A(rep.solution));
  return rep;
}

/// LU solve with partial pivoting; the reference direct solver for small d.
inline Tensor dense_solve(const Tensor& A, const Tensor& b) {
  require(A.ndim() == 2 && A.rows() == A.cols(), "dense_solve: A must be square");
  const std::size_t d = A.rows();
  require(d <= 512, "dense_solve: dimension guard exceeded (d <= 512)");
  require(b.ndim() == 1 && b.numel() == d, "dense_solve: rhs length mismatch");

  Tensor lu = A;
  Tensor x = b;
  std::vector<std::size_t> piv(d);
  for (std::size_t i = 0; i < d; ++i) piv[i] = i;

  for (std::size_t col = 0; col < d; ++col) {
    std::size_t best = col;
    double best_abs = std::abs(lu(col, col));
    for (std::size_t r = col + 1; r < d; ++r) {
      double a = std::abs(lu(r, col));
      if (a > best_abs) {
        best_abs = a;
        best = r;
      }
    }
    if (best_abs < 1e-12)
      throw std::runtime_error("dense_solve: singular matrix at pivot " + std::to_string(col));
    if (best != col) {
      for (std::size_t c = 0; c < d; ++c) std::swap(lu(col, c), lu(best, c));
      std::swap(x[col], x[best]);
    }
    const double pivot = lu(col, col);
    for (std::size_t r = col + 1; r < d; ++r) {
      double f = lu(r, col) / pivot;
      lu(r, col) = f;
      for (std::size_t c = col + 1; c < d; ++c) lu(r, c) -= f * lu(col, c);
      x[r] -= f * x[col];
    }
  }
  for (std::size_t ri = d; ri-- > 0;) {
    double s = x[ri];
    for (std::size_t c = ri + 1; c < d; ++c) s -= lu(ri, c) * x[c];
    x[ri] = s / lu(ri, ri);
  }
  return x;
}

/// Inverse via column-wise dense solves (small d only).
inline Tensor dense_inverse(const Tensor& A) {
  const std::size_t d = A.rows();
  Tensor inv = Tensor::zeros({d, d});
  for (std::size_t c = 0; c < d; ++c) {
    Tensor e = Tensor::zeros({d});
    e[c] = 1.0;
    Tensor col = dense_solve(A, e);
    for (std::size_t r = 0; r < d; ++r) inv(r, c) = col[r];
  }
  return inv;
}

}  // namespace gpvi
