#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gpvi/mlp.hpp"
#include "gpvi/tensor.hpp"

namespace gpvi {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a list of tensors.
struct AdamState {
  std::size_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  AdamHyper hyper;

  static AdamState like(const std::vector<const Tensor*>& params, AdamHyper h) {
    AdamState s;
    s.hyper = h;
    for (const Tensor* p : params) {
      s.m.push_back(Tensor::zeros(p->shape));
      s.v.push_back(Tensor::zeros(p->shape));
    }
    return s;
  }

  static AdamState like(const MlpParams& params, AdamHyper h) {
    return like(params.tensors(), h);
  }
};

inline void adam_step(AdamState& s, const std::vector<Tensor*>& params,
                      const std::vector<const Tensor*>& grads) {
  require(params.size() == s.m.size() && grads.size() == s.m.size(),
          "adam_step: parameter list does not match state");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    require(params[i]->same_shape(s.m[i]), "adam_step: shape mismatch");
    require(grads[i]->same_shape(s.m[i]), "adam_step: gradient shape mismatch");
    if (!grads[i]->finite()) throw std::runtime_error("adam_step: non-finite gradient");
  }
  s.t += 1;
  const double b1 = s.hyper.beta1, b2 = s.hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, double(s.t));
  const double c2 = 1.0 - std::pow(b2, double(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      double gj = g.data[j];
      s.m[i].data[j] = b1 * s.m[i].data[j] + (1.0 - b1) * gj;
      s.v[i].data[j] = b2 * s.v[i].data[j] + (1.0 - b2) * gj * gj;
      double mhat = s.m[i].data[j] / c1;
      double vhat = s.v[i].data[j] / c2;
      p.data[j] -= s.hyper.lr * mhat / (std::sqrt(vhat) + s.hyper.eps);
    }
  }
}

inline void adam_step(AdamState& s, MlpParams& params, const MlpParams& grads) {
  adam_step(s, params.tensors(), grads.tensors());
}

inline void adam_step(AdamState& s, Tensor& param, const Tensor& grad) {
  adam_step(s, std::vector<Tensor*>{&param}, std::vector<const Tensor*>{&grad});
}

}  // namespace gpvi
