#pragma once

#include <cstdint>
#include <cmath>
#include <random>

#include "gpvi/tensor.hpp"

namespace gpvi {

/// Deterministic random stream. Uniform and normal draws are generated from
/// the raw mt19937_64 output with explicit bit arithmetic so results do not
/// depend on the standard library's distribution implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second value is cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    // Rejection-free modulo is fine here; n is tiny relative to 2^64.
    return static_cast<std::size_t>(engine_() % n);
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

/// Named consumers of randomness. Each gets an independent stream derived
/// from the master seed so toggling one component never perturbs another.
enum class StreamId : std::uint64_t {
  Data = 1,
  GeneratorInit = 2,
  HelperInit = 3,
  ZBatch = 4,
  Minibatch = 5,
  HmcMomentum = 6,
  Eval = 7,
  ParticleInit = 8,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline RngStream make_stream(std::uint64_t master_seed, StreamId id) {
  std::uint64_t s = splitmix64(master_seed ^ splitmix64(static_cast<std::uint64_t>(id)));
  return RngStream(s);
}

inline void fill_normal(Tensor& t, RngStream& rng) {
  for (double& v : t.data) v = rng.normal();
}

inline Tensor normal_tensor(std::vector<std::size_t> shape, RngStream& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  fill_normal(t, rng);
  return t;
}

}  // namespace gpvi
