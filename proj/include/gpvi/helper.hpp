#pragma once

#include "gpvi/adam.hpp"
#include "gpvi/generator.hpp"
#include "gpvi/mlp.hpp"
#include "gpvi/tensor.hpp"

namespace gpvi {

/// Which residual the helper loss uses. The log-determinant variation
/// contracts the inverse Jacobian against the kernel gradient on its z
/// index, so the linear system is J^T h = gradk and the residual uses the
/// reverse-mode product h^T J (one backward pass). The forward-mode variant
/// J h is kept for comparison; the two coincide for symmetric Jacobians.
enum class HelperResidual { Vjp, Jvp };

/// Network estimating J_f(z')^{-1} * gradk from (z'^{(:k)}, gradk). Two
/// rectified input branches feed a three-layer trunk.
struct HelperNet {
  std::size_t k = 0, d = 0;
  Tensor Wz, bz;  // branch on z'^{(:k)}: branch_width x k
  Tensor Wg, bg;  // branch on gradk: branch_width x d
  MlpSpec trunk_spec;
  MlpParams trunk;
  AdamState adam;

  static HelperNet make(std::size_t k, std::size_t d, std::size_t branch_width,
                        std::size_t trunk_width, double lr, RngStream& rng) {
    require(k >= 1 && d >= 1 && branch_width >= 1 && trunk_width >= 1,
            "HelperNet: widths must be positive");
    HelperNet h;
    h.k = k;
    h.d = d;
    auto init = [&rng](std::size_t out, std::size_t in) {
      Tensor w = Tensor::zeros({out, in});
      double bound = std::sqrt(6.0 / double(in + out));
      for (double& v : w.data) v = rng.uniform(-bound, bound);
      return w;
    };
    h.Wz = init(branch_width, k);
    h.bz = Tensor::zeros({branch_width});
    h.Wg = init(branch_width, d);
    h.bg = Tensor::zeros({branch_width});
    h.trunk_spec = MlpSpec({2 * branch_width, trunk_width, trunk_width, d});
    h.trunk = MlpParams::glorot(h.trunk_spec, rng);
    AdamHyper hyper;
    hyper.lr = lr;
    h.adam = AdamState::like(h.param_tensor_view(), hyper);
    return h;
  }

  std::vector<Tensor*> param_tensors() {
    std::vector<Tensor*> out{&Wz, &bz, &Wg, &bg};
    for (Tensor* t : trunk.tensors()) out.push_back(t);
    return out;
  }
  std::vector<const Tensor*> param_tensor_view() const {
    std::vector<const Tensor*> out{&Wz, &bz, &Wg, &bg};
    for (const Tensor* t : trunk.tensors()) out.push_back(t);
    return out;
  }
};

namespace detail {

struct HelperTrace {
  Tensor pre_z, pre_g;       // branch pre-activations
  ForwardTrace trunk;        // trunk.act[0] is the rectified concat
  const Tensor& output() const { return trunk.act.back(); }
};

inline HelperTrace helper_forward_trace(const HelperNet& h, const Tensor& z_slice,
                                        const Tensor& gradk) {
  require(z_slice.ndim() == 2 && z_slice.cols() == h.k,
          "helper_forward: z slice must be batch x " + std::to_string(h.k) + ", got " +
              shape_str(z_slice));
  require(gradk.ndim() == 2 && gradk.cols() == h.d && gradk.rows() == z_slice.rows(),
          "helper_forward: gradk must be batch x " + std::to_string(h.d) + ", got " +
              shape_str(gradk));
  HelperTrace tr;
  const std::size_t B = z_slice.rows(), W = h.Wz.rows();
  tr.pre_z = Tensor::zeros({B, W});
  tr.pre_g = Tensor::zeros({B, W});
  linalg::affine(z_slice, h.Wz, h.bz, tr.pre_z);
  linalg::affine(gradk, h.Wg, h.bg, tr.pre_g);
  Tensor concat = Tensor::zeros({B, 2 * W});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      double a = tr.pre_z(i, j);
      double b = tr.pre_g(i, j);
      concat(i, j) = a > 0.0 ? a : 0.0;
      concat(i, W + j) = b > 0.0 ? b : 0.0;
    }
  tr.trunk = forward_trace(h.trunk_spec, h.trunk, concat);
  return tr;
}

/// Gradients of sum_batch <cotangent, output> w.r.t. all helper parameters,
/// in param_tensors() order.
inline std::vector<Tensor> helper_backward_from_trace(const HelperNet& h, const HelperTrace& tr,
                                                      const Tensor& z_slice, const Tensor& gradk,
                                                      const Tensor& cotangent) {
  auto bw = backward_from_trace(h.trunk_spec, h.trunk, tr.trunk, cotangent);
  const std::size_t B = z_slice.rows(), W = h.Wz.rows();
  Tensor dz = Tensor::zeros({B, W});
  Tensor dg = Tensor::zeros({B, W});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      dz(i, j) = tr.pre_z(i, j) > 0.0 ? bw.input_grad(i, j) : 0.0;
      dg(i, j) = tr.pre_g(i, j) > 0.0 ? bw.input_grad(i, W + j) : 0.0;
    }
  Tensor gWz = Tensor::zeros({W, h.k});
  Tensor gWg = Tensor::zeros({W, h.d});
  linalg::matmul_tn(dz, z_slice, gWz);
  linalg::matmul_tn(dg, gradk, gWg);
  Tensor gbz = Tensor::zeros({W});
  Tensor gbg = Tensor::zeros({W});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      gbz[j] += dz(i, j);
      gbg[j] += dg(i, j);
    }
  std::vector<Tensor> grads{std::move(gWz), std::move(gbz), std::move(gWg), std::move(gbg)};
  for (auto& t : bw.grads.W) grads.push_back(std::move(t));
  for (auto& t : bw.grads.b) grads.push_back(std::move(t));
  return grads;
}

inline Tensor helper_residual(const GeneratorNet& gen, const Tensor& zprime,
                              const Tensor& h_out, const Tensor& gradk, HelperResidual mode) {
  Tensor jh = mode == HelperResidual::Jvp ? generator_jvp_batch(gen, zprime, h_out)
                                          : generator_vjp_batch(gen, zprime, h_out);
  return jh - gradk;
}

/// One Adam step on a precomputed trace; returns the pre-update loss and, via
/// h_out, the pre-update output (which the caller may keep using).
inline double helper_step_from_trace(const GeneratorNet& gen, HelperNet& h,
                                     const HelperTrace& tr, const Tensor& zprime,
                                     const Tensor& z_slice, const Tensor& gradk,
                                     HelperResidual mode) {
  const std::size_t B = zprime.rows();
  Tensor r = helper_residual(gen, zprime, tr.output(), gradk, mode);
  double loss = squared_norm(r) / double(B);
  if (!std::isfinite(loss)) throw std::runtime_error("helper_train_step: non-finite loss");
  // dL/dh_out = (2/B) J^T r for the JVP residual (J r for the VJP one).
  Tensor cot = mode == HelperResidual::Jvp ? generator_vjp_batch(gen, zprime, r)
                                           : generator_jvp_batch(gen, zprime, r);
  for (double& v : cot.data) v *= 2.0 / double(B);
  std::vector<Tensor> grads = helper_backward_from_trace(h, tr, z_slice, gradk, cot);
  std::vector<const Tensor*> gp;
  for (const auto& g : grads) gp.push_back(&g);
  adam_step(h.adam, h.param_tensors(), gp);
  return loss;
}

}  // namespace detail

inline Tensor helper_forward(const HelperNet& h, const Tensor& z_slice, const Tensor& gradk) {
  auto tr = detail::helper_forward_trace(h, z_slice, gradk);
  return tr.trunk.act.back();
}

/// Mean over batch rows of || J_f(z'_i) h(z'^{(:k)}_i, gradk_i) - gradk_i ||^2.
inline double helper_loss(const GeneratorNet& gen, const HelperNet& h, const Tensor& zprime,
                          const Tensor& gradk, HelperResidual mode = HelperResidual::Vjp) {
  check_z(gen, zprime, "helper_loss");
  require(h.d == gen.d && h.k == gen.k, "helper_loss: helper/generator dimension mismatch");
  Tensor h_out = helper_forward(h, slice_cols(zprime, gen.k), gradk);
  Tensor r = detail::helper_residual(gen, zprime, h_out, gradk, mode);
  return squared_norm(r) / double(zprime.rows());
}

/// One Adam step on the helper parameters; returns the pre-update loss.
/// Generator parameters are never touched.
inline double helper_train_step(const GeneratorNet& gen, HelperNet& h, const Tensor& zprime,
                                const Tensor& gradk, HelperResidual mode = HelperResidual::Vjp) {
  check_z(gen, zprime, "helper_train_step");
  require(h.d == gen.d && h.k == gen.k,
          "helper_train_step: helper/generator dimension mismatch");
  Tensor z_slice = slice_cols(zprime, gen.k);
  auto tr = detail::helper_forward_trace(h, z_slice, gradk);
  return detail::helper_step_from_trace(gen, h, tr, zprime, z_slice, gradk, mode);
}

}  // namespace gpvi
