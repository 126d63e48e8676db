#pragma once

#include <limits>

#include "gpvi/generator.hpp"
#include "gpvi/helper.hpp"
#include "gpvi/kernels.hpp"
#include "gpvi/samplers.hpp"
#include "gpvi/solvers.hpp"
#include "gpvi/targets.hpp"

namespace gpvi {

/// How the inverse-Jacobian term of the functional gradient is obtained.
enum class InverseMode { Helper, Exact, Bicgstab };

struct GpviOptions {
  std::size_t batch = 10;
  InverseMode mode = InverseMode::Helper;
  HelperResidual residual = HelperResidual::Vjp;
  double bicgstab_tol = 1e-10;
  std::size_t bicgstab_iters = 1;  // one step per training iteration, warm-started
};

struct GpviDiagnostics {
  double helper_loss = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;
};

/// Trainable sampler state: generator, helper, their optimizers, and the
/// persistent warm-start store of the BiCGSTAB variant.
struct GpviState {
  GeneratorNet gen;
  HelperNet helper;
  AdamState gen_adam;
  GpviOptions opts;
  RngStream zrng;

  Tensor warm;  // (B' * B) x d, previous BiCGSTAB solutions per pair slot
  bool warm_ready = false;

  GpviState(GeneratorNet g, HelperNet h, double gen_lr, GpviOptions o, RngStream z)
      : gen(std::move(g)), helper(std::move(h)), opts(o), zrng(std::move(z)) {
    require(helper.d == gen.d && helper.k == gen.k,
            "GpviState: helper dimensions inconsistent with generator");
    if (opts.mode == InverseMode::Exact)
      require(gen.d <= 512, "GpviState: exact mode requires d <= 512");
    AdamHyper hy;
    hy.lr = gen_lr;
    gen_adam = AdamState::like(gen.g_params, hy);
  }
};

namespace detail {

struct PairBlock {
  Tensor zprime_rows;  // (B' * B) x d, z'_i repeated for each z_j
  Tensor z_slice_rows; // (B' * B) x k
  Tensor gradk_rows;   // (B' * B) x d, grad_{z'_i} k(z'_i, z_j)
};

inline PairBlock make_pair_block(const GeneratorNet& gen, const Tensor& zprime,
                                 const KernelBatch& kb, std::size_t n_z) {
  const std::size_t np = zprime.rows(), d = gen.d, k = gen.k;
  PairBlock pb;
  pb.zprime_rows = Tensor::zeros({np * n_z, d});
  pb.z_slice_rows = Tensor::zeros({np * n_z, k});
  for (std::size_t i = 0; i < np; ++i) {
    const double* zp = zprime.row_ptr(i);
    for (std::size_t j = 0; j < n_z; ++j) {
      double* zr = pb.zprime_rows.row_ptr(i * n_z + j);
      double* zs = pb.z_slice_rows.row_ptr(i * n_z + j);
      for (std::size_t c = 0; c < d; ++c) zr[c] = zp[c];
      for (std::size_t c = 0; c < k; ++c) zs[c] = zp[c];
    }
  }
  pb.gradk_rows = Tensor({np * n_z, d}, kb.grads.data);  // same layout
  return pb;
}

/// Inverse-Jacobian term per pair, one row per (i, j): the solution of
/// J^T x = gradk (or J x = gradk in the forward-residual variant).
inline Tensor inverse_term(GpviState& state, const Tensor& zprime, const PairBlock& pb,
                           std::size_t n_z, const Tensor* helper_out) {
  const std::size_t np = zprime.rows(), d = state.gen.d;
  const bool transpose = state.opts.residual == HelperResidual::Vjp;
  switch (state.opts.mode) {
    case InverseMode::Helper: {
      if (helper_out != nullptr) return *helper_out;
      return helper_forward(state.helper, pb.z_slice_rows, pb.gradk_rows);
    }
    case InverseMode::Exact: {
      Tensor out = Tensor::zeros({np * n_z, d});
      for (std::size_t i = 0; i < np; ++i) {
        Tensor J = generator_dense_jacobian(state.gen, extract_row(zprime, i));
        if (transpose) {
          Tensor Jt = Tensor::zeros({d, d});
          for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) Jt(r, c) = J(c, r);
          J = std::move(Jt);
        }
        for (std::size_t j = 0; j < n_z; ++j) {
          Tensor rhs = extract_row(pb.gradk_rows, i * n_z + j);
          Tensor sol = dense_solve(J, rhs);
          double* o = out.row_ptr(i * n_z + j);
          for (std::size_t c = 0; c < d; ++c) o[c] = sol[c];
        }
      }
      return out;
    }
    case InverseMode::Bicgstab: {
      if (!state.warm_ready || state.warm.rows() != np * n_z) {
        state.warm = Tensor::zeros({np * n_z, d});
        state.warm_ready = true;
      }
      Tensor out = Tensor::zeros({np * n_z, d});
      for (std::size_t i = 0; i < np; ++i) {
        Tensor zrow = extract_row(zprime, i);
        auto matvec = [&state, &zrow, transpose](const Tensor& v) {
          return transpose ? generator_vjp(state.gen, zrow, v)
                           : generator_jvp(state.gen, zrow, v);
        };
        for (std::size_t j = 0; j < n_z; ++j) {
          Tensor rhs = extract_row(pb.gradk_rows, i * n_z + j);
          Tensor x0 = extract_row(state.warm, i * n_z + j);
          SolveReport rep = bicgstab(matvec, rhs, x0, state.opts.bicgstab_tol,
                                     state.opts.bicgstab_iters);
          double* w = state.warm.row_ptr(i * n_z + j);
          double* o = out.row_ptr(i * n_z + j);
          for (std::size_t c = 0; c < d; ++c) {
            w[c] = rep.solution[c];
            o[c] = rep.solution[c];
          }
        }
      }
      return out;
    }
  }
  throw std::logic_error("inverse_term: unknown mode");
}

/// (1/B') sum_i [ -score(f(z'_i)) k(z'_i, z_j) - invterm(i, j) ] for each z_j.
inline Tensor assemble_functional_gradient(const KernelBatch& kb, const Tensor& scores,
                                           const Tensor& invterm, std::size_t n_z,
                                           std::size_t d) {
  const std::size_t np = scores.rows();
  Tensor fg = Tensor::zeros({n_z, d});
  for (std::size_t i = 0; i < np; ++i) {
    const double* sc = scores.row_ptr(i);
    for (std::size_t j = 0; j < n_z; ++j) {
      const double kval = kb.values(i, j);
      const double* inv = invterm.row_ptr(i * n_z + j);
      double* out = fg.row_ptr(j);
      for (std::size_t c = 0; c < d; ++c) out[c] -= sc[c] * kval + inv[c];
    }
  }
  for (double& v : fg.data) v /= double(np);
  return fg;
}

}  // namespace detail

/// Functional gradient of the KL objective at each z_j, estimated from the
/// z' batch. The kernel bandwidth comes from the median heuristic on z'.
/// In BiCGSTAB mode this advances the warm-start store.
inline Tensor gpvi_functional_gradient(GpviState& state, const Tensor& z, const Tensor& zprime,
                                       const Target& target) {
  check_z(state.gen, z, "gpvi_functional_gradient");
  check_z(state.gen, zprime, "gpvi_functional_gradient");
  const std::size_t n_z = z.rows(), d = state.gen.d;
  double h = median_bandwidth(zprime);
  KernelBatch kb = rbf_batch(zprime, z, h);
  Tensor scores = target.grad_log_p(generator_forward(state.gen, zprime));
  auto pb = detail::make_pair_block(state.gen, zprime, kb, n_z);
  Tensor invterm = detail::inverse_term(state, zprime, pb, n_z, nullptr);
  Tensor fg = detail::assemble_functional_gradient(kb, scores, invterm, n_z, d);
  if (!fg.finite()) throw std::runtime_error("gpvi_functional_gradient: non-finite gradient");
  return fg;
}

/// One full training iteration: sample z and z', one helper Adam step on the
/// current pair block (helper mode only), then one generator Adam step on the
/// pulled-back functional gradient. The functional gradient uses the helper
/// outputs computed before the helper update.
inline GpviDiagnostics gpvi_train_step(GpviState& state, const Target& target) {
  const std::size_t B = state.opts.batch, d = state.gen.d;
  Tensor z = normal_tensor({B, d}, state.zrng);
  Tensor zprime = normal_tensor({B, d}, state.zrng);

  double h = median_bandwidth(zprime);
  KernelBatch kb = rbf_batch(zprime, z, h);
  Tensor scores = target.grad_log_p(generator_forward(state.gen, zprime));
  auto pb = detail::make_pair_block(state.gen, zprime, kb, B);

  GpviDiagnostics diag;
  Tensor invterm;
  if (state.opts.mode == InverseMode::Helper) {
    auto tr = detail::helper_forward_trace(state.helper, pb.z_slice_rows, pb.gradk_rows);
    invterm = tr.output();
    diag.helper_loss = detail::helper_step_from_trace(state.gen, state.helper, tr,
                                                      pb.zprime_rows, pb.z_slice_rows,
                                                      pb.gradk_rows, state.opts.residual);
  } else {
    invterm = detail::inverse_term(state, zprime, pb, B, nullptr);
  }

  Tensor fg = detail::assemble_functional_gradient(kb, scores, invterm, B, d);
  if (!fg.finite()) throw std::runtime_error("gpvi_train_step: non-finite functional gradient");

  MlpParams grads = generator_param_pullback(state.gen, z, fg);
  double inv_b = 1.0 / double(B);
  double norm_sq = 0.0;
  for (Tensor* t : grads.tensors()) {
    for (double& v : t->data) v *= inv_b;
    norm_sq += squared_norm(*t);
  }
  diag.grad_norm = std::sqrt(norm_sq);
  adam_step(state.gen_adam, state.gen.g_params, grads);
  return diag;
}

/// Amortized SVGD: pull the Stein direction (kernel on x-space, bandwidth
/// from the x batch) back through the generator and ascend.
inline void amortized_svgd_step(GeneratorNet& gen, AdamState& gen_adam, const Target& target,
                                std::size_t batch, RngStream& zrng) {
  Tensor z = normal_tensor({batch, gen.d}, zrng);
  Tensor x = generator_forward(gen, z);
  double h = batch >= 2 ? median_bandwidth(x) : 1.0;
  Tensor phi = svgd_direction(x, target, h);
  if (!phi.finite()) throw std::runtime_error("amortized_svgd_step: non-finite direction");
  MlpParams grads = generator_param_pullback(gen, z, phi);
  double scale = -1.0 / double(batch);  // ascend the Stein direction
  for (Tensor* t : grads.tensors())
    for (double& v : t->data) v *= scale;
  adam_step(gen_adam, gen.g_params, grads);
}

}  // namespace gpvi
