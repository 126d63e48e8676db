#include <catch2/catch_amalgamated.hpp>

#include "gpvi/metrics.hpp"
#include "gpvi/rng.hpp"
#include "test_util.hpp"

using namespace gpvi;

TEST_CASE("linear sampler moments: degenerate and identity cases") {
  SECTION("zero map gives zero covariance") {
    Tensor W = Tensor::zeros({3, 3});
    Tensor b = Tensor::zeros({3});
    Tensor mean, cov;
    linear_sampler_moments(W, b, 0.0, mean, cov);
    for (double v : cov.data) CHECK(v == 0.0);
    for (double v : mean.data) CHECK(v == 0.0);
  }
  SECTION("identity map gives identity covariance") {
    Tensor W = Tensor::eye(3);
    Tensor b = Tensor::row({1, 2, 3});
    Tensor mean, cov;
    linear_sampler_moments(W, b, 0.0, mean, cov);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(mean[i] == b[i]);
      for (std::size_t j = 0; j < 3; ++j) CHECK(cov(i, j) == (i == j ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("linear sampler moments match Monte Carlo") {
  RngStream rng(3);
  Tensor W = testutil::random_tensor({3, 2}, rng);  // d=3, k=2 slice
  Tensor b = testutil::random_tensor({3}, rng);
  const double lambda = 1.0;
  Tensor mean, cov;
  linear_sampler_moments(W, b, lambda, mean, cov);

  RngStream zrng(4);
  const std::size_t N = 1000000;
  Tensor msum = Tensor::zeros({3});
  Tensor csum = Tensor::zeros({3, 3});
  std::vector<double> x(3);
  for (std::size_t s = 0; s < N; ++s) {
    double z0 = zrng.normal(), z1 = zrng.normal(), z2 = zrng.normal();
    double zz[3] = {z0, z1, z2};
    for (std::size_t r = 0; r < 3; ++r) {
      x[r] = b[r] + lambda * zz[r];
      for (std::size_t c = 0; c < 2; ++c) x[r] += W(r, c) * zz[c];
      msum[r] += x[r];
    }
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) csum(r, c) += (x[r] - b[r]) * (x[c] - b[c]);
  }
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(std::abs(msum[r] / N - mean[r]) < 1e-2);
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(std::abs(csum(r, c) / N - cov(r, c)) < 1e-2);
  }
}

TEST_CASE("fit_errors basics") {
  Tensor m = Tensor::row({1, 2, 3});
  Tensor c = Tensor::eye(3);
  SECTION("identical inputs give zero") {
    FitReport r = fit_errors(m, c, m, c);
    CHECK(r.mean_error == 0.0);
    CHECK(r.cov_error == 0.0);
  }
  SECTION("zero estimate against identity") {
    FitReport r = fit_errors(m, Tensor::zeros({3, 3}), m, c);
    CHECK(r.cov_error == Catch::Approx(std::sqrt(3.0)).epsilon(1e-12));
  }
  SECTION("symmetric under swapping") {
    RngStream rng(5);
    Tensor m2 = testutil::random_tensor({3}, rng);
    Tensor c2 = testutil::random_tensor({3, 3}, rng);
    FitReport a = fit_errors(m, c, m2, c2);
    FitReport b = fit_errors(m2, c2, m, c);
    CHECK(a.mean_error == b.mean_error);
    CHECK(a.cov_error == b.cov_error);
  }
}

TEST_CASE("spectral covariance error matches hand values") {
  Tensor a = Tensor::eye(2);
  Tensor b = Tensor::zeros({2, 2});
  b(0, 0) = 3.0;
  b(1, 1) = 0.5;
  // diff = diag(-2, 0.5), spectral norm 2
  CHECK(cov_error_spectral(a, b) == Catch::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("predictive std grid") {
  MlpSpec net({2, 4});
  SECTION("identical parameter sets give zero std") {
    RngStream rng(7);
    Tensor one = testutil::random_tensor({1, param_count(net)}, rng);
    Tensor params = Tensor::zeros({3, param_count(net)});
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t j = 0; j < one.numel(); ++j) params(s, j) = one.data[j];
    Tensor grid = testutil::random_tensor({5, 2}, rng);
    Tensor stds = predictive_std_grid(params, net, grid);
    for (double v : stds.data) CHECK(v < 1e-12);  // identical nets up to fp division noise
  }

  SECTION("two one-hot networks give mean std 0.25 over four classes") {
    // Zero weights; biases produce (effectively) one-hot softmax outputs.
    MlpParams a = MlpParams::zeros(net);
    MlpParams b = MlpParams::zeros(net);
    a.b[0][0] = 200.0;
    b.b[0][1] = 200.0;
    Tensor params = Tensor::zeros({2, param_count(net)});
    Tensor fa = flatten_params(a), fb = flatten_params(b);
    for (std::size_t j = 0; j < fa.numel(); ++j) {
      params(0, j) = fa.data[j];
      params(1, j) = fb.data[j];
    }
    Tensor grid = Tensor::matrix(1, 2, {0.3, -0.7});
    Tensor stds = predictive_std_grid(params, net, grid);
    CHECK(stds[0] == Catch::Approx(0.25).margin(1e-9));
  }
}

TEST_CASE("ece closed forms") {
  SECTION("confident and correct is perfectly calibrated") {
    std::vector<double> conf(10, 1.0);
    std::vector<bool> correct(10, true);
    CHECK(ece(conf, correct) == 0.0);
  }
  SECTION("one-bin gap") {
    std::vector<double> conf(10, 0.8);
    std::vector<bool> correct = {true, false, true, false, true, false, true, false, true, false};
    CHECK(ece(conf, correct) == Catch::Approx(0.3).margin(1e-12));
  }
  SECTION("permutation invariant") {
    RngStream rng(9);
    std::vector<double> conf;
    std::vector<bool> correct;
    for (int i = 0; i < 50; ++i) {
      conf.push_back(rng.uniform());
      correct.push_back(rng.uniform() < 0.5);
    }
    double base = ece(conf, correct);
    std::vector<double> conf2(conf.rbegin(), conf.rend());
    std::vector<bool> correct2(correct.rbegin(), correct.rend());
    CHECK(ece(conf2, correct2) == Catch::Approx(base).margin(1e-15));
  }
}

TEST_CASE("auroc closed forms and the complement identity") {
  SECTION("perfect separation") {
    CHECK(auroc_on_variance({0.1, 0.2}, {0.5, 0.9}) == 1.0);
  }
  SECTION("identical multisets") {
    CHECK(auroc_on_variance({0.1, 0.4}, {0.1, 0.4}) == 0.5);
  }
  SECTION("enumerated example") {
    CHECK(auroc_on_variance({0.1, 0.2}, {0.15, 0.3}) == Catch::Approx(0.75).margin(1e-15));
  }
  SECTION("complement") {
    RngStream rng(11);
    std::vector<double> a, b;
    for (int i = 0; i < 20; ++i) a.push_back(rng.uniform());
    for (int i = 0; i < 15; ++i) b.push_back(rng.uniform());
    CHECK(auroc_on_variance(a, b) + auroc_on_variance(b, a) == Catch::Approx(1.0).margin(1e-12));
  }
}
