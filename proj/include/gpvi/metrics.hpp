#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "gpvi/mlp.hpp"
#include "gpvi/tensor.hpp"

namespace gpvi {

struct FitReport {
  double mean_error = 0.0;  // L2 norm of the mean difference
  double cov_error = 0.0;   // Frobenius norm of the covariance difference
  std::string convention;   // "analytic" or "empirical"
};

/// Output moments of the structured linear sampler x = W z^{(:k)} + b +
/// lambda z with z ~ N(0, I_d): mean b, covariance (Wpad + lambda I)(Wpad +
/// lambda I)^T. The plain sampler x = W z + b is the lambda = 0, k = d case.
inline void linear_sampler_moments(const Tensor& W, const Tensor& bias, double lambda,
                                   Tensor& mean_out, Tensor& cov_out) {
  require(W.ndim() == 2, "linear_sampler_moments: W must be d x k");
  const std::size_t d = W.rows(), k = W.cols();
  require(k <= d, "linear_sampler_moments: k must not exceed d");
  require(bias.ndim() == 1 && bias.numel() == d, "linear_sampler_moments: bias must be length d");
  Tensor eff = Tensor::zeros({d, d});
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < k; ++c) eff(r, c) = W(r, c);
  for (std::size_t i = 0; i < d; ++i) eff(i, i) += lambda;
  mean_out = bias;
  cov_out = Tensor::zeros({d, d});
  linalg::matmul_nt(eff, eff, cov_out);  // eff * eff^T
}

inline FitReport fit_errors(const Tensor& est_mean, const Tensor& est_cov,
                            const Tensor& true_mean, const Tensor& true_cov,
                            std::string convention = "analytic") {
  require(est_mean.same_shape(true_mean), "fit_errors: mean shape mismatch");
  require(est_cov.same_shape(true_cov), "fit_errors: covariance shape mismatch");
  FitReport r;
  r.mean_error = l2_norm(est_mean - true_mean);
  r.cov_error = l2_norm(est_cov - true_cov);
  r.convention = std::move(convention);
  return r;
}

/// Spectral norm of the covariance difference (symmetric matrices; power
/// iteration with a fixed deterministic start).
inline double cov_error_spectral(const Tensor& est_cov, const Tensor& true_cov) {
  require(est_cov.same_shape(true_cov) && est_cov.ndim() == 2, "cov_error_spectral: bad shapes");
  const std::size_t d = est_cov.rows();
  Tensor diff = est_cov - true_cov;
  Tensor v = Tensor::zeros({d});
  for (std::size_t i = 0; i < d; ++i) v[i] = 1.0 / std::sqrt(double(d));
  double lam = 0.0;
  for (int it = 0; it < 500; ++it) {
    Tensor w = Tensor::zeros({d});
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) w[i] += diff(i, j) * v[j];
    double n = l2_norm(w);
    if (n < 1e-300) return 0.0;
    for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / n;
    lam = n;
  }
  return lam;
}

/// Sample mean and covariance (1/(n-1) normalization) of row samples.
inline void empirical_moments(const Tensor& samples, Tensor& mean_out, Tensor& cov_out) {
  require(samples.ndim() == 2 && samples.rows() >= 2, "empirical_moments: need >= 2 samples");
  const std::size_t n = samples.rows(), d = samples.cols();
  mean_out = Tensor::zeros({d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean_out[j] += samples(i, j);
  for (std::size_t j = 0; j < d; ++j) mean_out[j] /= double(n);
  cov_out = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      double da = samples(i, a) - mean_out[a];
      for (std::size_t b = 0; b < d; ++b)
        cov_out(a, b) += da * (samples(i, b) - mean_out[b]);
    }
  for (double& v : cov_out.data) v /= double(n - 1);
}

/// Per grid point: mean over classes of the population std (over the S
/// sampled networks) of the softmax class probabilities.
inline Tensor predictive_std_grid(const Tensor& sampled_param_sets, const MlpSpec& net,
                                  const Tensor& grid) {
  require(sampled_param_sets.ndim() == 2 && sampled_param_sets.rows() >= 2,
          "predictive_std_grid: need at least 2 parameter sets");
  require(sampled_param_sets.cols() == param_count(net),
          "predictive_std_grid: parameter width mismatch");
  require(grid.ndim() == 2 && grid.cols() == net.input_width(),
          "predictive_std_grid: grid width mismatch");
  const std::size_t S = sampled_param_sets.rows(), G = grid.rows(), C = net.output_width();
  // probs[s] is G x C
  std::vector<Tensor> probs;
  probs.reserve(S);
  for (std::size_t s = 0; s < S; ++s) {
    MlpParams params = unflatten_params(net, sampled_param_sets.row_ptr(s));
    Tensor logits = mlp_forward(net, params, grid);
    for (std::size_t g = 0; g < G; ++g) {
      double* row = logits.row_ptr(g);
      double mx = row[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      double sum = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        row[c] = std::exp(row[c] - mx);
        sum += row[c];
      }
      for (std::size_t c = 0; c < C; ++c) row[c] /= sum;
    }
    probs.push_back(std::move(logits));
  }
  Tensor out = Tensor::zeros({G});
  for (std::size_t g = 0; g < G; ++g) {
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      double mean = 0.0;
      for (std::size_t s = 0; s < S; ++s) mean += probs[s](g, c);
      mean /= double(S);
      double var = 0.0;
      for (std::size_t s = 0; s < S; ++s) {
        double dv = probs[s](g, c) - mean;
        var += dv * dv;
      }
      acc += std::sqrt(var / double(S));
    }
    out[g] = acc / double(C);
  }
  return out;
}

/// Expected calibration error over equal-width confidence bins.
inline double ece(const std::vector<double>& confidences, const std::vector<bool>& correct,
                  std::size_t bins = 15) {
  require(confidences.size() == correct.size(), "ece: size mismatch");
  require(bins >= 1, "ece: needs at least one bin");
  const std::size_t n = confidences.size();
  if (n == 0) return 0.0;
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double c = confidences[i];
    require(c >= 0.0 && c <= 1.0, "ece: confidence outside [0, 1]");
    std::size_t b = std::min(std::size_t(c * double(bins)), bins - 1);
    conf_sum[b] += c;
    acc_sum[b] += correct[i] ? 1.0 : 0.0;
    count[b] += 1;
  }
  double e = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;  // empty bins contribute nothing
    double acc = acc_sum[b] / double(count[b]);
    double conf = conf_sum[b] / double(count[b]);
    e += (double(count[b]) / double(n)) * std::abs(acc - conf);
  }
  return e;
}

/// Rank-based AUROC treating higher variance as outlier-positive; ties count
/// one half (Mann-Whitney U statistic normalized by n_in * n_out).
inline double auroc_on_variance(const std::vector<double>& inlier_vars,
                                const std::vector<double>& outlier_vars) {
  require(!inlier_vars.empty() && !outlier_vars.empty(), "auroc_on_variance: empty input");
  double u = 0.0;
  for (double o : outlier_vars)
    for (double i : inlier_vars) {
      if (o > i)
        u += 1.0;
      else if (o == i)
        u += 0.5;
    }
  return u / (double(inlier_vars.size()) * double(outlier_vars.size()));
}

}  // namespace gpvi
