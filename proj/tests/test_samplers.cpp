#include <catch2/catch_amalgamated.hpp>

#include "gpvi/metrics.hpp"
#include "gpvi/samplers.hpp"
#include "gpvi/targets.hpp"
#include "test_util.hpp"

using namespace gpvi;

namespace {

Target zero_score_target(std::size_t d) {
  Target t;
  t.dim = d;
  t.grad_log_p = [](const Tensor& x) { return Tensor::zeros(x.shape); };
  return t;
}

}  // namespace

TEST_CASE("svgd direction with one particle is the score") {
  GaussianTarget g = GaussianTarget::standard(3);
  Target t = as_target(g);
  Tensor x = Tensor::matrix(1, 3, {0.5, -1.0, 2.0});
  Tensor phi = svgd_direction(x, t, 1.0);
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(phi(0, c) == Catch::Approx(-x(0, c)).margin(1e-14));
}

TEST_CASE("svgd repulsion pushes two particles apart") {
  Target t = zero_score_target(2);
  Tensor x = Tensor::matrix(2, 2, {0.0, 0.0, 1.0, 0.5});
  Tensor phi = svgd_direction(x, t, 1.3);
  // With zero score the Stein direction is pure repulsion along x_i - x_j.
  double along0 = phi(0, 0) * (x(0, 0) - x(1, 0)) + phi(0, 1) * (x(0, 1) - x(1, 1));
  double along1 = phi(1, 0) * (x(1, 0) - x(0, 0)) + phi(1, 1) * (x(1, 1) - x(0, 1));
  CHECK(along0 > 0.0);
  CHECK(along1 > 0.0);
}

TEST_CASE("svgd direction matches the double-loop oracle") {
  RngStream rng(1);
  GaussianTarget g = GaussianTarget::random_covariance(3, rng);
  Target t = as_target(g);
  Tensor x = testutil::random_tensor({8, 3}, rng);
  const double h = 2.1;
  Tensor got = svgd_direction(x, t, h);

  Tensor scores = t.grad_log_p(x);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 8; ++j) {
        double sq = 0.0;
        for (std::size_t cc = 0; cc < 3; ++cc) {
          double dd = x(j, cc) - x(i, cc);
          sq += dd * dd;
        }
        double kv = std::exp(-sq / h);
        acc += scores(j, c) * kv + (-2.0 / h) * (x(j, c) - x(i, c)) * kv;
      }
      CHECK(std::abs(got(i, c) - acc / 8.0) < 1e-12);
    }
}

TEST_CASE("svgd step leaves particles alone when the direction vanishes") {
  GaussianTarget g = GaussianTarget::standard(2);
  Target t = as_target(g);
  ParticleSet ps{Tensor::zeros({1, 2}), 0.1};
  svgd_step(ps, t);
  for (double v : ps.particles.data) CHECK(v == 0.0);
}

TEST_CASE("single particle converges to the mode") {
  GaussianTarget g = GaussianTarget::standard(2);
  Target t = as_target(g);
  ParticleSet ps{Tensor::matrix(1, 2, {3.0, -2.0}), 0.1};
  for (int i = 0; i < 500; ++i) svgd_step(ps, t);
  CHECK(std::abs(ps.particles(0, 0)) < 1e-4);
  CHECK(std::abs(ps.particles(0, 1)) < 1e-4);
}

TEST_CASE("ensemble step is independent gradient ascent") {
  RngStream rng(2);
  GaussianTarget g = GaussianTarget::random_covariance(3, rng);
  Target t = as_target(g);
  Tensor x0 = testutil::random_tensor({5, 3}, rng);
  ParticleSet ps{x0, 0.05};
  Tensor scores = t.grad_log_p(x0);
  ensemble_step(ps, t);
  for (std::size_t i = 0; i < x0.numel(); ++i)
    CHECK(ps.particles.data[i] == Catch::Approx(x0.data[i] + 0.05 * scores.data[i]).margin(1e-14));
}

TEST_CASE("ensemble particles collapse to the mode") {
  RngStream rng(3);
  GaussianTarget g = GaussianTarget::random_covariance(2, rng);
  Target t = as_target(g);
  RngStream prng(4);
  ParticleSet ps{normal_tensor({50, 2}, prng), 0.0};
  AdamHyper hy;
  hy.lr = 5e-3;
  AdamState adam = AdamState::like(std::vector<const Tensor*>{&ps.particles}, hy);
  for (int i = 0; i < 3000; ++i) ensemble_step(ps, t, &adam);
  Tensor mean, cov;
  empirical_moments(ps.particles, mean, cov);
  CHECK(l2_norm(cov) < 0.05 * l2_norm(g.cov));  // spread vanishes
  CHECK(std::abs(mean[0]) < 0.1);
  CHECK(std::abs(mean[1]) < 0.1);
}

TEST_CASE("ensemble determinism per seed") {
  GaussianTarget g = GaussianTarget::standard(2);
  Target t = as_target(g);
  auto run = []() {
    RngStream prng(9);
    return normal_tensor({10, 2}, prng);
  };
  ParticleSet a{run(), 0.01}, b{run(), 0.01};
  for (int i = 0; i < 50; ++i) {
    ensemble_step(a, t);
    ensemble_step(b, t);
  }
  for (std::size_t i = 0; i < a.particles.numel(); ++i)
    CHECK(a.particles.data[i] == b.particles.data[i]);
}

TEST_CASE("leapfrog is reversible") {
  RngStream cov_rng(11);
  GaussianTarget g = GaussianTarget::random_covariance(3, cov_rng);
  Target t = as_target(g);
  RngStream rng(5);
  Tensor x0 = testutil::random_tensor({3}, rng);
  Tensor p0 = testutil::random_tensor({3}, rng);
  Tensor x = x0, p = p0;
  leapfrog(t, x, p, 25, 0.05);
  for (double& v : p.data) v = -v;
  leapfrog(t, x, p, 25, 0.05);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(x[i] - x0[i]) < 1e-10);
    CHECK(std::abs(p[i] + p0[i]) < 1e-10);
  }
}

TEST_CASE("leapfrog conserves energy to second order on the harmonic potential") {
  GaussianTarget g = GaussianTarget::standard(1);
  Target t = as_target(g);
  const double delta = 0.01;
  const std::size_t L = 50;
  Tensor x = Tensor::row({1.3});
  Tensor p = Tensor::row({-0.4});
  double h0 = -t.log_p(x) + 0.5 * squared_norm(p);
  leapfrog(t, x, p, L, delta);
  double h1 = -t.log_p(x) + 0.5 * squared_norm(p);
  CHECK(std::abs(h1 - h0) < 10.0 * delta * delta * double(L));
}

TEST_CASE("tiny steps are almost always accepted") {
  GaussianTarget g = GaussianTarget::standard(2);
  Target t = as_target(g);
  HmcConfig cfg;
  cfg.leapfrog = 3;
  cfg.step = 1e-6;
  cfg.samples = 100;
  cfg.burn_in = 10;
  cfg.seed = 13;
  HmcResult res = hmc_sample(t, cfg, Tensor::zeros({2}));
  CHECK(res.accept_rate == 1.0);
}

TEST_CASE("hmc fits the 2-D standard normal with tuned settings") {
  GaussianTarget g = GaussianTarget::standard(2);
  Target t = as_target(g);
  HmcConfig cfg;
  cfg.leapfrog = 25;
  cfg.step = 0.2;
  cfg.samples = 25000;
  cfg.burn_in = 20000;
  cfg.seed = 17;
  HmcResult res = hmc_sample(t, cfg, Tensor::zeros({2}));
  CHECK(res.accept_rate > 0.6);
  CHECK(res.accept_rate < 1.0);
  Tensor mean, cov;
  empirical_moments(res.samples, mean, cov);
  CHECK(l2_norm(mean) < 0.1);
  CHECK(l2_norm(cov - Tensor::eye(2)) < 0.2);
}

TEST_CASE("hmc validates its configuration") {
  GaussianTarget g = GaussianTarget::standard(2);
  Target t = as_target(g);
  HmcConfig cfg;
  cfg.burn_in = cfg.samples;  // invalid
  CHECK_THROWS(hmc_sample(t, cfg, Tensor::zeros({2})));
  Target no_logp = zero_score_target(2);
  HmcConfig ok;
  CHECK_THROWS(hmc_sample(no_logp, ok, Tensor::zeros({2})));
}
