#include <catch2/catch_amalgamated.hpp>

#include "gpvi/generator.hpp"
#include "gpvi/rng.hpp"
#include "test_util.hpp"

using namespace gpvi;

namespace {

GeneratorNet make_gen(std::size_t d, std::size_t k, std::vector<std::size_t> hidden,
                      std::uint64_t seed, double lambda = 1.0) {
  RngStream rng(seed);
  return GeneratorNet::make(d, k, hidden, lambda, rng);
}

}  // namespace

TEST_CASE("generator_forward with zero g is lambda z") {
  GeneratorNet gen = make_gen(5, 2, {4}, 1);
  gen.g_params = MlpParams::zeros(gen.g_spec);
  RngStream rng(2);
  Tensor z = testutil::random_tensor({3, 5}, rng);
  Tensor out = generator_forward(gen, z);
  for (std::size_t i = 0; i < out.numel(); ++i)
    CHECK(out.data[i] == Catch::Approx(z.data[i]).margin(1e-15));
}

TEST_CASE("generator_forward linear g matches the affine formula") {
  GeneratorNet gen = make_gen(4, 2, {}, 3, 0.7);
  RngStream rng(4);
  Tensor z = testutil::random_tensor({6, 4}, rng);
  Tensor out = generator_forward(gen, z);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t o = 0; o < 4; ++o) {
      double want = gen.g_params.b[0][o] + 0.7 * z(r, o);
      for (std::size_t c = 0; c < 2; ++c) want += gen.g_params.W[0](o, c) * z(r, c);
      CHECK(out(r, o) == Catch::Approx(want).margin(1e-13));
    }
}

TEST_CASE("generator_forward equals mlp_forward of the slice plus lambda z") {
  GeneratorNet gen = make_gen(6, 3, {8, 8}, 5);
  RngStream rng(6);
  Tensor z = testutil::random_tensor({4, 6}, rng);
  Tensor got = generator_forward(gen, z);
  Tensor want = mlp_forward(gen.g_spec, gen.g_params, slice_cols(z, 3));
  for (std::size_t i = 0; i < want.numel(); ++i) want.data[i] += gen.lambda * z.data[i];
  for (std::size_t i = 0; i < got.numel(); ++i)
    CHECK(std::abs(got.data[i] - want.data[i]) < 1e-14);
}

TEST_CASE("dense jacobian of zero g is lambda I") {
  GeneratorNet gen = make_gen(4, 2, {3}, 7, 2.0);
  gen.g_params = MlpParams::zeros(gen.g_spec);
  Tensor z = Tensor::row({0.1, 0.2, 0.3, 0.4});
  Tensor J = generator_dense_jacobian(gen, z);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(J(i, j) == (i == j ? 2.0 : 0.0));
}

TEST_CASE("dense jacobian of linear g is [G|0] + lambda I") {
  GeneratorNet gen = make_gen(4, 2, {}, 9, 1.0);
  Tensor z = Tensor::row({0.5, -0.5, 1.0, 2.0});
  Tensor J = generator_dense_jacobian(gen, z);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double want = (j < 2 ? gen.g_params.W[0](i, j) : 0.0) + (i == j ? 1.0 : 0.0);
      CHECK(J(i, j) == Catch::Approx(want).margin(1e-14));
    }
}

TEST_CASE("trailing jacobian columns are exactly lambda basis vectors") {
  GeneratorNet gen = make_gen(7, 2, {10}, 11, 1.5);
  RngStream rng(12);
  Tensor z = testutil::random_tensor({7}, rng);
  Tensor J = generator_dense_jacobian(gen, z);
  for (std::size_t c = 2; c < 7; ++c)
    for (std::size_t r = 0; r < 7; ++r) CHECK(J(r, c) == (r == c ? 1.5 : 0.0));
}

TEST_CASE("generator_jvp agrees with the dense jacobian") {
  GeneratorNet gen = make_gen(6, 2, {9}, 13);
  RngStream rng(14);
  Tensor z = testutil::random_tensor({6}, rng);
  Tensor J = generator_dense_jacobian(gen, z);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor t = testutil::random_tensor({6}, rng);
    Tensor got = generator_jvp(gen, z, t);
    for (std::size_t r = 0; r < 6; ++r) {
      double want = 0.0;
      for (std::size_t c = 0; c < 6; ++c) want += J(r, c) * t[c];
      CHECK(std::abs(got[r] - want) < 1e-12);
    }
  }
}

TEST_CASE("generator_jvp edge cases") {
  GeneratorNet gen = make_gen(5, 2, {6}, 15, 0.9);
  RngStream rng(16);
  Tensor z = testutil::random_tensor({5}, rng);
  SECTION("zero tangent") {
    Tensor out = generator_jvp(gen, z, Tensor::zeros({5}));
    for (double v : out.data) CHECK(v == 0.0);
  }
  SECTION("zero g gives lambda tangent") {
    gen.g_params = MlpParams::zeros(gen.g_spec);
    Tensor t = testutil::random_tensor({5}, rng);
    Tensor out = generator_jvp(gen, z, t);
    for (std::size_t i = 0; i < 5; ++i)
      CHECK(out[i] == Catch::Approx(0.9 * t[i]).margin(1e-14));
  }
}

TEST_CASE("generator_vjp agrees with the dense jacobian and adjoint identity") {
  GeneratorNet gen = make_gen(6, 3, {7}, 17);
  RngStream rng(18);
  Tensor z = testutil::random_tensor({6}, rng);
  Tensor J = generator_dense_jacobian(gen, z);

  SECTION("zero g gives lambda cov") {
    GeneratorNet zero = gen;
    zero.g_params = MlpParams::zeros(zero.g_spec);
    Tensor cov = testutil::random_tensor({6}, rng);
    Tensor out = generator_vjp(zero, z, cov);
    for (std::size_t i = 0; i < 6; ++i)
      CHECK(out[i] == Catch::Approx(gen.lambda * cov[i]).margin(1e-14));
  }

  SECTION("matches cov^T J") {
    Tensor cov = testutil::random_tensor({6}, rng);
    Tensor got = generator_vjp(gen, z, cov);
    for (std::size_t c = 0; c < 6; ++c) {
      double want = 0.0;
      for (std::size_t r = 0; r < 6; ++r) want += cov[r] * J(r, c);
      CHECK(std::abs(got[c] - want) < 1e-12);
    }
  }

  SECTION("adjoint identity over random probes") {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor cov = testutil::random_tensor({6}, rng);
      Tensor t = testutil::random_tensor({6}, rng);
      double lhs = dot(cov, generator_jvp(gen, z, t));
      double rhs = dot(generator_vjp(gen, z, cov), t);
      CHECK(std::abs(lhs - rhs) < 1e-10 * std::max(1.0, std::abs(lhs)));
    }
  }
}

TEST_CASE("generator_param_pullback basics") {
  GeneratorNet gen = make_gen(5, 2, {6}, 19);
  RngStream rng(20);
  Tensor z = testutil::random_tensor({4, 5}, rng);
  Tensor cot = testutil::random_tensor({4, 5}, rng);

  SECTION("zero cotangent gives zero grads") {
    MlpParams g = generator_param_pullback(gen, z, Tensor::zeros({4, 5}));
    for (const Tensor* t : g.tensors())
      for (double v : t->data) CHECK(v == 0.0);
  }

  SECTION("equals the mlp pullback of g on the slice") {
    MlpParams got = generator_param_pullback(gen, z, cot);
    MlpParams want = mlp_param_pullback(gen.g_spec, gen.g_params, slice_cols(z, 2), cot).grads;
    auto gt = got.tensors();
    auto wt = want.tensors();
    for (std::size_t i = 0; i < gt.size(); ++i)
      for (std::size_t j = 0; j < gt[i]->numel(); ++j)
        CHECK(std::abs(gt[i]->data[j] - wt[i]->data[j]) < 1e-14);
  }

  SECTION("matches finite differences over theta") {
    MlpParams got = generator_param_pullback(gen, z, cot);
    auto eval = [&]() {
      Tensor y = generator_forward(gen, z);
      double s = 0.0;
      for (std::size_t i = 0; i < y.numel(); ++i) s += y.data[i] * cot.data[i];
      return s;
    };
    auto fd = testutil::fd_grad_params(eval, gen.g_params.tensors(), 1e-5);
    std::vector<const Tensor*> analytic;
    for (const Tensor* t : got.tensors()) analytic.push_back(t);
    CHECK(testutil::max_rel_err(analytic, fd) < 1e-4);
  }
}

TEST_CASE("small-weight generators are monotone (injectivity probe)") {
  RngStream rng(21);
  GeneratorNet gen = make_gen(8, 2, {16}, 22, 1.0);
  gen.g_params.scale(0.1);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor z1 = testutil::random_tensor({1, 8}, rng);
    Tensor z2 = testutil::random_tensor({1, 8}, rng);
    Tensor f1 = generator_forward(gen, z1);
    Tensor f2 = generator_forward(gen, z2);
    double s = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
      s += (z2.data[i] - z1.data[i]) * (f2.data[i] - f1.data[i]);
    CHECK(s > 0.0);
  }
}

TEST_CASE("generator guards") {
  RngStream rng(30);
  CHECK_THROWS(GeneratorNet::make(4, 0, {}, 1.0, rng));
  CHECK_THROWS(GeneratorNet::make(4, 5, {}, 1.0, rng));
  CHECK_THROWS(GeneratorNet::make(4, 2, {}, 0.0, rng));
  GeneratorNet gen = make_gen(4, 2, {}, 31);
  CHECK_THROWS(generator_forward(gen, Tensor::zeros({2, 3})));
}
