#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace elastab {

/// Numerical failure (solver stall, singular system). Carries the residual
/// that was left when the solver gave up, when one is meaningful.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what,
                         double residual = std::numeric_limits<double>::quiet_NaN())
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Requested operation is undefined for the given model/loss family.
class unsupported_operation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Deterministic RNG with explicit bit-to-double mapping, so that a seed
/// pins the produced stream independently of distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double u01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * u01(); }

  double gaussian() {
    // Box-Muller; u1 bounded away from 0.
    double u1 = u01();
    while (u1 <= 0.0) u1 = u01();
    const double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Unbiased integer in {0, ..., n-1} (rejection sampling).
  std::size_t index(std::size_t n) {
    require(n > 0, "Rng::index: n must be positive");
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % n;
    std::uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return static_cast<std::size_t>(v % n);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace elastab
