#pragma once

#include <string>
#include <vector>

#include "gpvi/linalg.hpp"
#include "gpvi/rng.hpp"
#include "gpvi/tensor.hpp"

namespace gpvi {

/// Fully connected network shape: rectifier on hidden layers, identity on the
/// output layer. widths = {input, hidden..., output}.
struct MlpSpec {
  std::vector<std::size_t> widths;

  MlpSpec() = default;
  explicit MlpSpec(std::vector<std::size_t> w) : widths(std::move(w)) {
    require(widths.size() >= 2, "MlpSpec: needs at least input and output widths");
    for (std::size_t x : widths) require(x >= 1, "MlpSpec: widths must be positive");
  }

  std::size_t layers() const { return widths.size() - 1; }
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
};

struct MlpParams {
  std::vector<Tensor> W;  // W[l] is widths[l+1] x widths[l]
  std::vector<Tensor> b;  // b[l] is widths[l+1]

  static MlpParams zeros(const MlpSpec& spec) {
    MlpParams p;
    for (std::size_t l = 0; l < spec.layers(); ++l) {
      p.W.push_back(Tensor::zeros({spec.widths[l + 1], spec.widths[l]}));
      p.b.push_back(Tensor::zeros({spec.widths[l + 1]}));
    }
    return p;
  }

  /// Uniform init in +-sqrt(6 / (fan_in + fan_out)); biases zero.
  static MlpParams glorot(const MlpSpec& spec, RngStream& rng) {
    MlpParams p = zeros(spec);
    for (std::size_t l = 0; l < spec.layers(); ++l) {
      double bound = std::sqrt(6.0 / double(spec.widths[l] + spec.widths[l + 1]));
      for (double& v : p.W[l].data) v = rng.uniform(-bound, bound);
    }
    return p;
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& t : W) out.push_back(&t);
    for (auto& t : b) out.push_back(&t);
    return out;
  }
  std::vector<const Tensor*> tensors() const {
    std::vector<const Tensor*> out;
    for (auto& t : W) out.push_back(&t);
    for (auto& t : b) out.push_back(&t);
    return out;
  }

  void scale(double s) {
    for (auto& t : W)
      for (double& v : t.data) v *= s;
    for (auto& t : b)
      for (double& v : t.data) v *= s;
  }
};

inline void validate_params(const MlpSpec& spec, const MlpParams& p, const char* who) {
  require(p.W.size() == spec.layers() && p.b.size() == spec.layers(),
          std::string(who) + ": layer count mismatch");
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    require(p.W[l].rows() == spec.widths[l + 1] && p.W[l].cols() == spec.widths[l],
            std::string(who) + ": weight shape mismatch at layer " + std::to_string(l));
    require(p.b[l].numel() == spec.widths[l + 1],
            std::string(who) + ": bias shape mismatch at layer " + std::to_string(l));
  }
}

inline std::size_t param_count(const MlpSpec& spec) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < spec.layers(); ++l)
    n += spec.widths[l + 1] * spec.widths[l] + spec.widths[l + 1];
  return n;
}

inline Tensor flatten_params(const MlpParams& p) {
  std::vector<double> flat;
  for (std::size_t l = 0; l < p.W.size(); ++l) {
    flat.insert(flat.end(), p.W[l].data.begin(), p.W[l].data.end());
    flat.insert(flat.end(), p.b[l].data.begin(), p.b[l].data.end());
  }
  return Tensor::row(std::move(flat));
}

inline MlpParams unflatten_params(const MlpSpec& spec, const double* flat) {
  MlpParams p = MlpParams::zeros(spec);
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    for (double& v : p.W[l].data) v = flat[off++];
    for (double& v : p.b[l].data) v = flat[off++];
  }
  return p;
}

namespace detail {

// Rectifier derivative at exactly zero pre-activation is 0, so forward-mode
// and reverse-mode derivatives agree everywhere.
inline void relu_inplace(Tensor& t) {
  for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

inline void mask_by_positive(Tensor& t, const Tensor& pre) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (!(pre.data[i] > 0.0)) t.data[i] = 0.0;
}

// Forward pass keeping pre-activations of hidden layers and all activations.
struct ForwardTrace {
  std::vector<Tensor> act;  // act[0] = input, act[L] = output
  std::vector<Tensor> pre;  // pre[l] for layers 0..L-1 (pre-activation)
};

inline ForwardTrace forward_trace(const MlpSpec& spec, const MlpParams& p, const Tensor& input) {
  ForwardTrace tr;
  tr.act.push_back(input);
  const std::size_t L = spec.layers();
  for (std::size_t l = 0; l < L; ++l) {
    Tensor pre = Tensor::zeros({input.rows(), spec.widths[l + 1]});
    linalg::affine(tr.act.back(), p.W[l], p.b[l], pre);
    Tensor a = pre;
    if (l + 1 < L) relu_inplace(a);
    tr.pre.push_back(std::move(pre));
    tr.act.push_back(std::move(a));
  }
  return tr;
}

struct MlpBackward {
  MlpParams grads;   // d(sum_batch <cotangent, output>) / d params
  Tensor input_grad; // per-row gradient w.r.t. the input
};

inline MlpBackward backward_from_trace(const MlpSpec& spec, const MlpParams& p,
                                       const ForwardTrace& tr, const Tensor& cotangent) {
  MlpBackward out;
  out.grads = MlpParams::zeros(spec);
  const std::size_t L = spec.layers();
  Tensor delta = cotangent;  // gradient w.r.t. act[l+1]
  for (std::size_t li = L; li-- > 0;) {
    if (li + 1 < L) mask_by_positive(delta, tr.pre[li]);
    linalg::matmul_tn(delta, tr.act[li], out.grads.W[li]);
    // bias grad: column sums of delta
    for (std::size_t r = 0; r < delta.rows(); ++r)
      for (std::size_t c = 0; c < delta.cols(); ++c)
        out.grads.b[li][c] += delta(r, c);
    Tensor prev = Tensor::zeros({delta.rows(), spec.widths[li]});
    linalg::matmul_nn(delta, p.W[li], prev);
    delta = std::move(prev);
  }
  out.input_grad = std::move(delta);
  return out;
}

}  // namespace detail

using MlpBackward = detail::MlpBackward;

/// Evaluates the network on a batch (rows are samples).
inline Tensor mlp_forward(const MlpSpec& spec, const MlpParams& p, const Tensor& input) {
  validate_params(spec, p, "mlp_forward");
  require(input.ndim() == 2, "mlp_forward: input must be batch x in");
  require(input.cols() == spec.input_width(),
          "mlp_forward: layer 0 expects input width " + std::to_string(spec.input_width()) +
              ", got " + std::to_string(input.cols()));
  Tensor x = input;
  const std::size_t L = spec.layers();
  for (std::size_t l = 0; l < L; ++l) {
    Tensor y = Tensor::zeros({input.rows(), spec.widths[l + 1]});
    linalg::affine(x, p.W[l], p.b[l], y);
    if (l + 1 < L) detail::relu_inplace(y);
    x = std::move(y);
  }
  return x;
}

/// Reverse mode. Parameter gradients are summed over the batch; the caller
/// averages if it wants an expectation.
inline MlpBackward mlp_param_pullback(const MlpSpec& spec, const MlpParams& p,
                                      const Tensor& input, const Tensor& cotangent) {
  validate_params(spec, p, "mlp_param_pullback");
  require(input.ndim() == 2 && input.cols() == spec.input_width(),
          "mlp_param_pullback: bad input shape " + shape_str(input));
  require(cotangent.ndim() == 2 && cotangent.rows() == input.rows() &&
              cotangent.cols() == spec.output_width(),
          "mlp_param_pullback: cotangent shape " + shape_str(cotangent) +
              " does not match output");
  auto tr = detail::forward_trace(spec, p, input);
  return detail::backward_from_trace(spec, p, tr, cotangent);
}

/// Forward-mode directional derivative for a batch: row i of the result is
/// (d output / d input)(input_i) * tangent_i.
inline Tensor mlp_input_jvp_batch(const MlpSpec& spec, const MlpParams& p,
                                  const Tensor& input, const Tensor& tangent) {
  validate_params(spec, p, "mlp_input_jvp");
  require(input.ndim() == 2 && input.cols() == spec.input_width(),
          "mlp_input_jvp: bad input shape " + shape_str(input));
  require(tangent.same_shape(input), "mlp_input_jvp: tangent shape " + shape_str(tangent) +
                                         " does not match input " + shape_str(input));
  Tensor x = input;
  Tensor u = tangent;
  const std::size_t L = spec.layers();
  for (std::size_t l = 0; l < L; ++l) {
    Tensor pre = Tensor::zeros({input.rows(), spec.widths[l + 1]});
    linalg::affine(x, p.W[l], p.b[l], pre);
    Tensor du = Tensor::zeros({input.rows(), spec.widths[l + 1]});
    linalg::matmul_nt(u, p.W[l], du);
    if (l + 1 < L) {
      detail::mask_by_positive(du, pre);
      detail::relu_inplace(pre);
    }
    x = std::move(pre);
    u = std::move(du);
  }
  return u;
}

inline Tensor mlp_input_jvp(const MlpSpec& spec, const MlpParams& p, const Tensor& input,
                            const Tensor& tangent) {
  require(input.ndim() == 1 && tangent.ndim() == 1 && tangent.numel() == input.numel(),
          "mlp_input_jvp: tangent width must equal input width");
  Tensor out = mlp_input_jvp_batch(spec, p, as_row_matrix(input), as_row_matrix(tangent));
  return Tensor::row(std::move(out.data));
}

/// Per-row gradient of <cotangent_i, output_i> w.r.t. input_i (no parameter
/// gradients; cheaper than the full pullback).
inline Tensor mlp_input_vjp_batch(const MlpSpec& spec, const MlpParams& p, const Tensor& input,
                                  const Tensor& cotangent) {
  validate_params(spec, p, "mlp_input_vjp");
  require(input.ndim() == 2 && input.cols() == spec.input_width(),
          "mlp_input_vjp: bad input shape " + shape_str(input));
  require(cotangent.ndim() == 2 && cotangent.rows() == input.rows() &&
              cotangent.cols() == spec.output_width(),
          "mlp_input_vjp: bad cotangent shape " + shape_str(cotangent));
  // Only the pre-activation signs are needed from the forward pass.
  const std::size_t L = spec.layers();
  std::vector<Tensor> pres;
  Tensor x = input;
  for (std::size_t l = 0; l < L; ++l) {
    Tensor pre = Tensor::zeros({input.rows(), spec.widths[l + 1]});
    linalg::affine(x, p.W[l], p.b[l], pre);
    Tensor a = pre;
    if (l + 1 < L) detail::relu_inplace(a);
    pres.push_back(std::move(pre));
    x = std::move(a);
  }
  Tensor delta = cotangent;
  for (std::size_t li = L; li-- > 0;) {
    if (li + 1 < L) detail::mask_by_positive(delta, pres[li]);
    Tensor prev = Tensor::zeros({delta.rows(), spec.widths[li]});
    linalg::matmul_nn(delta, p.W[li], prev);
    delta = std::move(prev);
  }
  return delta;
}

}  // namespace gpvi
