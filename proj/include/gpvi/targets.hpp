#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "gpvi/mlp.hpp"
#include "gpvi/rng.hpp"
#include "gpvi/solvers.hpp"
#include "gpvi/tensor.hpp"

namespace gpvi {

/// Unnormalized log-density: the object every sampler consumes. grad_log_p
/// maps a batch of points (B x d) to the scorebatch; log_p (for HMC) takes a
/// single point and may be absent.
struct Target {
  std::size_t dim = 0;
  std::function<Tensor(const Tensor&)> grad_log_p;
  std::function<double(const Tensor&)> log_p;  // empty when unavailable

  bool has_log_p() const { return static_cast<bool>(log_p); }
};

// ---------------------------------------------------------------------------
// Gaussian target
// ---------------------------------------------------------------------------

struct GaussianTarget {
  Tensor mean;       // d
  Tensor cov;        // d x d, SPD
  Tensor precision;  // cov^{-1}

  static GaussianTarget make(Tensor mean, Tensor cov) {
    require(cov.ndim() == 2 && cov.rows() == cov.cols(), "GaussianTarget: cov must be square");
    require(mean.ndim() == 1 && mean.numel() == cov.rows(),
            "GaussianTarget: mean/cov size mismatch");
    for (std::size_t i = 0; i < cov.rows(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        require(std::abs(cov(i, j) - cov(j, i)) < 1e-10, "GaussianTarget: cov not symmetric");
    GaussianTarget t;
    t.precision = dense_inverse(cov);  // throws if singular
    t.mean = std::move(mean);
    t.cov = std::move(cov);
    return t;
  }

  static GaussianTarget standard(std::size_t d) {
    return make(Tensor::zeros({d}), Tensor::eye(d));
  }

  /// Random SPD covariance A A^T with A entries i.i.d. standard normal.
  static GaussianTarget random_covariance(std::size_t d, RngStream& rng) {
    Tensor A = normal_tensor({d, d}, rng);
    Tensor cov = Tensor::zeros({d, d});
    linalg::matmul_nt(A, A, cov);  // A * A^T
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < i; ++j) {
        double s = 0.5 * (cov(i, j) + cov(j, i));
        cov(i, j) = cov(j, i) = s;
      }
    return make(Tensor::zeros({d}), std::move(cov));
  }
};

/// Score -Sigma^{-1} (x - mu) per row.
inline Tensor gaussian_grad_log_p(const GaussianTarget& t, const Tensor& x) {
  require(x.ndim() == 2 && x.cols() == t.mean.numel(),
          "gaussian_grad_log_p: x must be batch x d");
  const std::size_t B = x.rows(), d = x.cols();
  Tensor centered = x;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < d; ++j) centered(i, j) -= t.mean[j];
  Tensor out = Tensor::zeros({B, d});
  linalg::matmul_nt(centered, t.precision, out);  // precision is symmetric
  for (double& v : out.data) v = -v;
  return out;
}

inline double gaussian_log_p(const GaussianTarget& t, const Tensor& x) {
  require(x.ndim() == 1 && x.numel() == t.mean.numel(), "gaussian_log_p: x must be length d");
  double q = 0.0;
  const std::size_t d = x.numel();
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      q += (x[i] - t.mean[i]) * t.precision(i, j) * (x[j] - t.mean[j]);
  return -0.5 * q;
}

inline Target as_target(const GaussianTarget& g) {
  Target t;
  t.dim = g.mean.numel();
  t.grad_log_p = [g](const Tensor& x) { return gaussian_grad_log_p(g, x); };
  t.log_p = [g](const Tensor& x) { return gaussian_log_p(g, x); };
  return t;
}

// ---------------------------------------------------------------------------
// Bayesian linear regression
// ---------------------------------------------------------------------------

struct BlrProblem {
  Tensor X;         // n x d
  Tensor y;         // n
  double noise_var = 1.0;
  Tensor beta_true; // d

  /// y = X beta + eps with X rows standard normal, beta ~ U(0,1)+5,
  /// eps ~ N(0, noise_var).
  static BlrProblem generate(std::size_t n, std::size_t d, double noise_var, RngStream& rng) {
    require(n >= d, "BlrProblem: need at least d observations");
    BlrProblem p;
    p.noise_var = noise_var;
    p.X = normal_tensor({n, d}, rng);
    p.beta_true = Tensor::zeros({d});
    for (std::size_t j = 0; j < d; ++j) p.beta_true[j] = rng.uniform() + 5.0;
    p.y = Tensor::zeros({n});
    double noise_std = std::sqrt(noise_var);
    for (std::size_t i = 0; i < n; ++i) {
      double m = 0.0;
      for (std::size_t j = 0; j < d; ++j) m += p.X(i, j) * p.beta_true[j];
      p.y[i] = m + noise_std * rng.normal();
    }
    return p;
  }

  std::size_t n() const { return p_rows(); }
  std::size_t d() const { return X.cols(); }

 private:
  std::size_t p_rows() const { return X.rows(); }
};

/// Flat-prior posterior N((X^T X)^{-1} X^T y, noise_var (X^T X)^{-1}).
inline GaussianTarget blr_posterior_analytic(const BlrProblem& p) {
  const std::size_t d = p.d();
  Tensor xtx = Tensor::zeros({d, d});
  linalg::matmul_tn(p.X, p.X, xtx);
  Tensor xty = Tensor::zeros({d});
  for (std::size_t i = 0; i < p.n(); ++i)
    for (std::size_t j = 0; j < d; ++j) xty[j] += p.X(i, j) * p.y[i];
  Tensor mean = dense_solve(xtx, xty);  // throws on singular X^T X
  Tensor cov = dense_inverse(xtx);
  for (double& v : cov.data) v *= p.noise_var;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      double s = 0.5 * (cov(i, j) + cov(j, i));
      cov(i, j) = cov(j, i) = s;
    }
  return GaussianTarget::make(std::move(mean), std::move(cov));
}

/// Likelihood score (n/|B|) X_B^T (y_B - X_B beta) / noise_var per row of
/// beta; full batch when minibatch is null. Flat prior.
inline Tensor blr_grad_log_p(const BlrProblem& p, const Tensor& beta,
                             const std::vector<std::size_t>* minibatch = nullptr) {
  require(beta.ndim() == 2 && beta.cols() == p.d(), "blr_grad_log_p: beta must be batch x d");
  std::vector<std::size_t> all;
  if (minibatch == nullptr) {
    all.resize(p.n());
    for (std::size_t i = 0; i < p.n(); ++i) all[i] = i;
    minibatch = &all;
  }
  require(!minibatch->empty(), "blr_grad_log_p: empty minibatch");
  for (std::size_t idx : *minibatch)
    require(idx < p.n(), "blr_grad_log_p: minibatch index out of range");
  const std::size_t B = beta.rows(), d = p.d(), m = minibatch->size();
  const double scale = double(p.n()) / double(m) / p.noise_var;
  Tensor out = Tensor::zeros({B, d});
  for (std::size_t r = 0; r < B; ++r) {
    const double* bet = beta.row_ptr(r);
    double* o = out.row_ptr(r);
    for (std::size_t idx : *minibatch) {
      const double* xrow = p.X.row_ptr(idx);
      double resid = p.y[idx];
      for (std::size_t j = 0; j < d; ++j) resid -= xrow[j] * bet[j];
      for (std::size_t j = 0; j < d; ++j) o[j] += scale * xrow[j] * resid;
    }
  }
  return out;
}

/// Full-data unnormalized log posterior (flat prior), for HMC.
inline double blr_log_p(const BlrProblem& p, const Tensor& beta) {
  require(beta.ndim() == 1 && beta.numel() == p.d(), "blr_log_p: beta must be length d");
  double s = 0.0;
  for (std::size_t i = 0; i < p.n(); ++i) {
    double resid = p.y[i];
    for (std::size_t j = 0; j < p.d(); ++j) resid -= p.X(i, j) * beta[j];
    s += resid * resid;
  }
  return -0.5 * s / p.noise_var;
}

inline Target as_target(const BlrProblem& p, const std::vector<std::size_t>* minibatch = nullptr) {
  Target t;
  t.dim = p.d();
  if (minibatch) {
    std::vector<std::size_t> mb = *minibatch;
    t.grad_log_p = [&p, mb](const Tensor& x) { return blr_grad_log_p(p, x, &mb); };
  } else {
    t.grad_log_p = [&p](const Tensor& x) { return blr_grad_log_p(p, x, nullptr); };
  }
  t.log_p = [&p](const Tensor& x) { return blr_log_p(p, x); };
  return t;
}

// ---------------------------------------------------------------------------
// Bayesian neural network posterior over flattened weights
// ---------------------------------------------------------------------------

/// Dataset + likelihood for a BNN posterior. Classification uses softmax
/// cross-entropy with integer labels (1-based); regression uses a Gaussian
/// likelihood with fixed noise variance.
struct BnnTask {
  MlpSpec net;
  Tensor inputs;            // n x in
  std::vector<int> labels;  // classification labels in 1..C
  Tensor targets;           // regression targets, n x out
  bool classification = true;
  double noise_var = 1.0;   // regression only
  double prior_std = 1.0;

  std::size_t n() const { return inputs.rows(); }
};

namespace detail {

inline void softmax_row(double* p, std::size_t c) {
  double mx = p[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, p[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    p[j] = std::exp(p[j] - mx);
    s += p[j];
  }
  for (std::size_t j = 0; j < c; ++j) p[j] /= s;
}

}  // namespace detail

/// Score of the minibatch-rescaled log posterior w.r.t. flattened network
/// parameters, one row per sampled network.
inline Tensor bnn_grad_log_p(const BnnTask& task, const Tensor& flat,
                             const std::vector<std::size_t>* minibatch = nullptr) {
  const std::size_t P = param_count(task.net);
  require(flat.ndim() == 2 && flat.cols() == P,
          "bnn_grad_log_p: flat params must be batch x " + std::to_string(P));
  if (task.n() == 0) {
    // No data: the posterior is the prior.
    Tensor out = flat;
    const double prior_prec = 1.0 / (task.prior_std * task.prior_std);
    for (double& v : out.data) v *= -prior_prec;
    return out;
  }
  std::vector<std::size_t> all;
  if (minibatch == nullptr) {
    all.resize(task.n());
    for (std::size_t i = 0; i < task.n(); ++i) all[i] = i;
    minibatch = &all;
  }
  require(!minibatch->empty(), "bnn_grad_log_p: empty minibatch");
  const std::size_t m = minibatch->size();
  const std::size_t C = task.net.output_width();
  if (task.classification) {
    require(task.labels.size() == task.n(), "bnn_grad_log_p: labels missing");
    for (std::size_t idx : *minibatch) {
      require(idx < task.n(), "bnn_grad_log_p: minibatch index out of range");
      int lab = task.labels[idx];
      require(lab >= 1 && std::size_t(lab) <= C,
              "bnn_grad_log_p: label " + std::to_string(lab) + " out of range 1.." +
                  std::to_string(C));
    }
  }
  const double rescale = double(task.n()) / double(m);
  const double prior_prec = 1.0 / (task.prior_std * task.prior_std);

  Tensor xb = Tensor::zeros({m, task.net.input_width()});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < task.net.input_width(); ++c)
      xb(r, c) = task.inputs((*minibatch)[r], c);

  Tensor out = Tensor::zeros({flat.rows(), P});
  for (std::size_t s = 0; s < flat.rows(); ++s) {
    MlpParams params = unflatten_params(task.net, flat.row_ptr(s));
    Tensor logits = mlp_forward(task.net, params, xb);
    // Cotangent of the summed log-likelihood w.r.t. the network output.
    Tensor cot = Tensor::zeros({m, C});
    if (task.classification) {
      for (std::size_t r = 0; r < m; ++r) {
        double* row = logits.row_ptr(r);
        detail::softmax_row(row, C);
        int lab = task.labels[(*minibatch)[r]] - 1;
        for (std::size_t c = 0; c < C; ++c)
          cot(r, c) = ((std::size_t(lab) == c ? 1.0 : 0.0) - row[c]);
      }
    } else {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < C; ++c)
          cot(r, c) = (task.targets((*minibatch)[r], c) - logits(r, c)) / task.noise_var;
    }
    MlpParams grads = mlp_param_pullback(task.net, params, xb, cot).grads;
    Tensor gflat = flatten_params(grads);
    double* o = out.row_ptr(s);
    const double* g = gflat.data.data();
    const double* th = flat.row_ptr(s);
    for (std::size_t j = 0; j < P; ++j) o[j] = rescale * g[j] - prior_prec * th[j];
  }
  return out;
}

/// Full-data unnormalized log posterior of one flattened parameter vector.
inline double bnn_log_p(const BnnTask& task, const Tensor& flat_row) {
  const std::size_t P = param_count(task.net);
  require(flat_row.ndim() == 1 && flat_row.numel() == P, "bnn_log_p: bad parameter vector");
  MlpParams params = unflatten_params(task.net, flat_row.data.data());
  Tensor logits = mlp_forward(task.net, params, task.inputs);
  const std::size_t C = task.net.output_width();
  double ll = 0.0;
  if (task.classification) {
    for (std::size_t r = 0; r < task.n(); ++r) {
      double* row = logits.row_ptr(r);
      double mx = row[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      double lse = 0.0;
      for (std::size_t c = 0; c < C; ++c) lse += std::exp(row[c] - mx);
      lse = mx + std::log(lse);
      ll += row[task.labels[r] - 1] - lse;
    }
  } else {
    for (std::size_t r = 0; r < task.n(); ++r)
      for (std::size_t c = 0; c < C; ++c) {
        double e = task.targets(r, c) - logits(r, c);
        ll -= 0.5 * e * e / task.noise_var;
      }
  }
  double prior = 0.0;
  const double prior_prec = 1.0 / (task.prior_std * task.prior_std);
  for (double v : flat_row.data) prior -= 0.5 * prior_prec * v * v;
  return ll + prior;
}

inline Target as_target(const BnnTask& task, const std::vector<std::size_t>* minibatch = nullptr) {
  Target t;
  t.dim = param_count(task.net);
  if (minibatch) {
    std::vector<std::size_t> mb = *minibatch;
    t.grad_log_p = [&task, mb](const Tensor& x) { return bnn_grad_log_p(task, x, &mb); };
  } else {
    t.grad_log_p = [&task](const Tensor& x) { return bnn_grad_log_p(task, x, nullptr); };
  }
  t.log_p = [&task](const Tensor& x) { return bnn_log_p(task, x); };
  return t;
}

// ---------------------------------------------------------------------------
// Dataset generators
// ---------------------------------------------------------------------------

/// 2-D four-component Gaussian mixture; labels index the generating
/// component (1..4), means at (+-2, +-2), isotropic std 0.3.
struct MixtureDataset {
  Tensor points;            // n x 2
  std::vector<int> labels;  // 1..4
};

struct MixtureSplits {
  MixtureDataset train;
  MixtureDataset test;
};

inline MixtureDataset sample_mixture(std::size_t n, RngStream& rng) {
  static const double means[4][2] = {{-2, -2}, {-2, 2}, {2, -2}, {2, 2}};
  MixtureDataset ds;
  ds.points = Tensor::zeros({n, 2});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = rng.index(4);
    ds.points(i, 0) = means[c][0] + 0.3 * rng.normal();
    ds.points(i, 1) = means[c][1] + 0.3 * rng.normal();
    ds.labels[i] = int(c) + 1;
  }
  return ds;
}

inline MixtureSplits make_mixture_dataset(std::uint64_t seed, std::size_t n_train = 100,
                                          std::size_t n_test = 200) {
  RngStream rng = make_stream(seed, StreamId::Data);
  MixtureSplits s;
  s.train = sample_mixture(n_train, rng);
  s.test = sample_mixture(n_test, rng);
  return s;
}

/// 80-point 1-D regression set: 76 inputs uniform on [-6,-2] U [2,6], 4 on
/// [-2,2]; targets Y = -(1+X) sin(1.2 X) + eps with eps ~ N(0, 0.04).
struct Regression1dData {
  Tensor x;  // 80
  Tensor y;  // 80
};

inline Regression1dData make_1d_regression_dataset(std::uint64_t seed) {
  RngStream rng = make_stream(seed, StreamId::Data);
  Regression1dData d;
  d.x = Tensor::zeros({80});
  d.y = Tensor::zeros({80});
  for (std::size_t i = 0; i < 80; ++i) {
    double xi;
    if (i < 76) {
      double u = rng.uniform(-4.0, 4.0);  // two length-4 intervals
      xi = u < 0.0 ? u - 2.0 : u + 2.0;
    } else {
      xi = rng.uniform(-2.0, 2.0);
    }
    d.x[i] = xi;
    d.y[i] = -(1.0 + xi) * std::sin(1.2 * xi) + 0.2 * rng.normal();
  }
  return d;
}

}  // namespace gpvi
