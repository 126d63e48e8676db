#pragma once

#include "gpvi/adam.hpp"
#include "gpvi/kernels.hpp"
#include "gpvi/rng.hpp"
#include "gpvi/targets.hpp"
#include "gpvi/tensor.hpp"

namespace gpvi {

struct ParticleSet {
  Tensor particles;  // n x d
  double step_size = 1e-3;
};

/// Stein direction phi*(x_i) = (1/n) sum_j [score(x_j) k(x_j, x_i) +
/// grad_{x_j} k(x_j, x_i)].
inline Tensor svgd_direction(const Tensor& particles, const Target& target, double h) {
  require(particles.ndim() == 2 && particles.rows() >= 1, "svgd_direction: empty particle set");
  require(particles.cols() == target.dim, "svgd_direction: particle dimension mismatch");
  const std::size_t n = particles.rows(), d = particles.cols();
  KernelBatch kb = rbf_batch(particles, particles, h);
  Tensor scores = target.grad_log_p(particles);
  Tensor phi = Tensor::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double* out = phi.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) {
      double kval = kb.values(j, i);
      const double* sj = scores.row_ptr(j);
      const double* gj = kb.grads.data.data() + (j * n + i) * d;
      for (std::size_t c = 0; c < d; ++c) out[c] += sj[c] * kval + gj[c];
    }
    for (std::size_t c = 0; c < d; ++c) out[c] /= double(n);
  }
  return phi;
}

/// One SVGD update with the bandwidth recomputed from the current particles.
/// With adam == nullptr the plain rule x += eps * phi* is used; otherwise the
/// move is routed through Adam (descent on -phi*).
inline void svgd_step(ParticleSet& ps, const Target& target, AdamState* adam = nullptr) {
  double h = ps.particles.rows() >= 2 ? median_bandwidth(ps.particles) : 1.0;
  Tensor phi = svgd_direction(ps.particles, target, h);
  require(phi.finite(), "svgd_step: non-finite update");
  if (adam != nullptr) {
    Tensor neg = phi * -1.0;
    adam_step(*adam, ps.particles, neg);
  } else {
    for (std::size_t i = 0; i < phi.numel(); ++i)
      ps.particles.data[i] += ps.step_size * phi.data[i];
  }
}

/// Independent gradient ascent on log p per particle (no interaction): the
/// deep-ensemble / MLE baseline.
inline void ensemble_step(ParticleSet& ps, const Target& target, AdamState* adam = nullptr) {
  Tensor scores = target.grad_log_p(ps.particles);
  require(scores.finite(), "ensemble_step: non-finite gradient");
  if (adam != nullptr) {
    Tensor neg = scores * -1.0;
    adam_step(*adam, ps.particles, neg);
  } else {
    for (std::size_t i = 0; i < scores.numel(); ++i)
      ps.particles.data[i] += ps.step_size * scores.data[i];
  }
}

// ---------------------------------------------------------------------------
// Hamiltonian Monte Carlo
// ---------------------------------------------------------------------------

struct HmcConfig {
  std::size_t leapfrog = 25;
  double step = 0.0005;
  std::size_t samples = 25000;
  std::size_t burn_in = 20000;
  std::size_t thin = 1;  // 1 = no thinning
  std::uint64_t seed = 0;

  void validate() const {
    require(leapfrog >= 1, "HmcConfig: leapfrog steps must be >= 1");
    require(step > 0.0, "HmcConfig: step size must be positive");
    require(burn_in < samples, "HmcConfig: burn-in must be below total samples");
    require(thin >= 1, "HmcConfig: thinning stride must be >= 1");
  }
};

namespace detail {

inline Tensor grad_row(const Target& t, const Tensor& x) {
  Tensor g = t.grad_log_p(as_row_matrix(x));
  return Tensor::row(std::move(g.data));
}

}  // namespace detail

/// Leapfrog integration of (x, p) under H = -log_p(x) + |p|^2 / 2. Exposed
/// for reversibility checks.
inline void leapfrog(const Target& target, Tensor& x, Tensor& p, std::size_t steps,
                     double eps) {
  Tensor g = detail::grad_row(target, x);
  for (std::size_t i = 0; i < p.numel(); ++i) p[i] += 0.5 * eps * g[i];
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += eps * p[i];
    g = detail::grad_row(target, x);
    double half = (s + 1 == steps) ? 0.5 : 1.0;
    for (std::size_t i = 0; i < p.numel(); ++i) p[i] += half * eps * g[i];
  }
}

struct HmcResult {
  Tensor samples;  // kept x d (post burn-in, thinned)
  double accept_rate = 0.0;
};

inline HmcResult hmc_sample(const Target& target, const HmcConfig& cfg, const Tensor& x0) {
  cfg.validate();
  require(target.has_log_p(), "hmc_sample: target does not provide log_p");
  require(x0.ndim() == 1 && x0.numel() == target.dim, "hmc_sample: bad initial point");
  RngStream rng = make_stream(cfg.seed, StreamId::HmcMomentum);

  const std::size_t d = target.dim;
  Tensor x = x0;
  double logp = target.log_p(x);
  std::vector<double> kept;
  std::size_t accepted = 0;
  for (std::size_t it = 0; it < cfg.samples; ++it) {
    Tensor p = normal_tensor({d}, rng);
    double h0 = -logp + 0.5 * squared_norm(p);
    Tensor xn = x;
    Tensor pn = p;
    leapfrog(target, xn, pn, cfg.leapfrog, cfg.step);
    double logp_n = xn.finite() ? target.log_p(xn) : -std::numeric_limits<double>::infinity();
    double h1 = -logp_n + 0.5 * squared_norm(pn);
    double u = rng.uniform();
    bool accept = std::isfinite(h1) && (h0 - h1 >= 0.0 || u < std::exp(h0 - h1));
    if (accept) {
      x = std::move(xn);
      logp = logp_n;
      ++accepted;
    }
    if (it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0)
      kept.insert(kept.end(), x.data.begin(), x.data.end());
  }
  HmcResult res;
  const std::size_t rows = kept.size() / d;
  res.samples = Tensor({rows, d}, std::move(kept));
  res.accept_rate = double(accepted) / double(cfg.samples);
  return res;
}

}  // namespace gpvi
