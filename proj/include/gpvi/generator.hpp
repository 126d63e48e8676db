#pragma once

#include <iostream>

#include "gpvi/mlp.hpp"
#include "gpvi/tensor.hpp"

namespace gpvi {

/// Sampler f(z) = g(z^{(:k)}) + lambda * z mapping d-dimensional noise to
/// d-dimensional outputs; g consumes only the leading k noise components, so
/// the input-output Jacobian is [dg/dz^{(:k)} | 0] + lambda * I.
struct GeneratorNet {
  MlpSpec g_spec;     // input width k, output width d
  MlpParams g_params;
  double lambda = 1.0;
  std::size_t k = 0;
  std::size_t d = 0;

  static GeneratorNet make(std::size_t d, std::size_t k,
                           const std::vector<std::size_t>& hidden, double lambda,
                           RngStream& rng) {
    require(k >= 1 && k <= d, "GeneratorNet: k must satisfy 1 <= k <= d");
    require(lambda > 0.0, "GeneratorNet: lambda must be positive");
    if (double(k) > 0.3 * double(d))
      std::cerr << "warning: generator noise slice k=" << k << " exceeds 30% of d=" << d
                << "\n";
    GeneratorNet gen;
    std::vector<std::size_t> widths{k};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(d);
    gen.g_spec = MlpSpec(widths);
    gen.g_params = MlpParams::glorot(gen.g_spec, rng);
    gen.lambda = lambda;
    gen.k = k;
    gen.d = d;
    return gen;
  }
};

inline void check_z(const GeneratorNet& gen, const Tensor& z, const char* who) {
  require(z.ndim() == 2 && z.cols() == gen.d,
          std::string(who) + ": z must be batch x " + std::to_string(gen.d) + ", got " +
              shape_str(z));
}

inline Tensor generator_forward(const GeneratorNet& gen, const Tensor& z) {
  check_z(gen, z, "generator_forward");
  Tensor out = mlp_forward(gen.g_spec, gen.g_params, slice_cols(z, gen.k));
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += gen.lambda * z.data[i];
  return out;
}

/// J_f(z) * tangent for each batch row.
inline Tensor generator_jvp_batch(const GeneratorNet& gen, const Tensor& z,
                                  const Tensor& tangent) {
  check_z(gen, z, "generator_jvp");
  require(tangent.same_shape(z), "generator_jvp: tangent shape mismatch");
  Tensor out = mlp_input_jvp_batch(gen.g_spec, gen.g_params, slice_cols(z, gen.k),
                                   slice_cols(tangent, gen.k));
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += gen.lambda * tangent.data[i];
  return out;
}

inline Tensor generator_jvp(const GeneratorNet& gen, const Tensor& z, const Tensor& tangent) {
  require(z.ndim() == 1 && tangent.ndim() == 1 && z.numel() == gen.d &&
              tangent.numel() == gen.d,
          "generator_jvp: z and tangent must be length-d vectors");
  Tensor out = generator_jvp_batch(gen, as_row_matrix(z), as_row_matrix(tangent));
  return Tensor::row(std::move(out.data));
}

/// cov^T * J_f(z) for each batch row: the g-branch input gradient scattered
/// into the leading k slots plus lambda * cov.
inline Tensor generator_vjp_batch(const GeneratorNet& gen, const Tensor& z, const Tensor& cov) {
  check_z(gen, z, "generator_vjp");
  require(cov.same_shape(z), "generator_vjp: cotangent shape mismatch");
  Tensor ig = mlp_input_vjp_batch(gen.g_spec, gen.g_params, slice_cols(z, gen.k), cov);
  Tensor out = cov * gen.lambda;
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < gen.k; ++j) out(i, j) += ig(i, j);
  return out;
}

inline Tensor generator_vjp(const GeneratorNet& gen, const Tensor& z, const Tensor& cov) {
  require(z.ndim() == 1 && cov.ndim() == 1 && z.numel() == gen.d && cov.numel() == gen.d,
          "generator_vjp: z and cov must be length-d vectors");
  Tensor out = generator_vjp_batch(gen, as_row_matrix(z), as_row_matrix(cov));
  return Tensor::row(std::move(out.data));
}

/// Materializes J_f(z) column by column from k JVP calls; columns k..d-1 are
/// exactly lambda * e_i.
inline Tensor generator_dense_jacobian(const GeneratorNet& gen, const Tensor& z) {
  require(z.ndim() == 1 && z.numel() == gen.d, "generator_dense_jacobian: z must be length d");
  require(gen.d <= 512, "generator_dense_jacobian: dimension guard exceeded (d <= 512)");
  Tensor zb = Tensor::zeros({gen.k, gen.d});
  Tensor tb = Tensor::zeros({gen.k, gen.d});
  for (std::size_t c = 0; c < gen.k; ++c) {
    for (std::size_t j = 0; j < gen.d; ++j) zb(c, j) = z[j];
    tb(c, c) = 1.0;
  }
  Tensor cols = generator_jvp_batch(gen, zb, tb);  // row c = J e_c
  Tensor J = Tensor::zeros({gen.d, gen.d});
  for (std::size_t c = 0; c < gen.k; ++c)
    for (std::size_t r = 0; r < gen.d; ++r) J(r, c) = cols(c, r);
  for (std::size_t c = gen.k; c < gen.d; ++c) J(c, c) = gen.lambda;
  return J;
}

/// Gradients of sum_batch <cotangent, f(z)> w.r.t. g's parameters; the
/// lambda*z term carries no parameter dependence.
inline MlpParams generator_param_pullback(const GeneratorNet& gen, const Tensor& z,
                                          const Tensor& cotangent) {
  check_z(gen, z, "generator_param_pullback");
  require(cotangent.same_shape(z), "generator_param_pullback: cotangent shape mismatch");
  return mlp_param_pullback(gen.g_spec, gen.g_params, slice_cols(z, gen.k), cotangent).grads;
}

}  // namespace gpvi
