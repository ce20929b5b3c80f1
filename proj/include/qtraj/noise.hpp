#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace qtraj {

/// One full step's worth of stochastic increments for a scalar Wiener
/// process: dW ~ N(0, dt) and the area integral dZ = int_0^dt W(s) ds with
/// Var dZ = dt^3/3, Cov(dW, dZ) = dt^2/2.
struct WienerIncrement {
  double dw = 0.0;
  double dz = 0.0;
};

/// Seeded, replayable stream of Wiener increments. Gaussians come from a
/// hand-rolled Box-Muller transform on top of mt19937_64 so the sequence
/// depends only on the (standardized) engine, not on the standard library's
/// normal_distribution. Copying the stream forks it: both copies replay the
/// identical sequence from the current cursor.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  static const char* generator_id() { return "mt19937_64/box-muller"; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t cursor() const { return cursor_; }

  /// Standard normal variate; each pair of variates consumes exactly two
  /// engine outputs.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  /// Draws the (dW, dZ) pair for one step of size dt. Always consumes two
  /// normals, so streams shared between integrators of different order stay
  /// aligned step for step.
  WienerIncrement next(double dt) {
    const double g1 = normal();
    const double g2 = normal();
    ++cursor_;
    WienerIncrement inc;
    const double sq = std::sqrt(dt);
    inc.dw = g1 * sq;
    inc.dz = dt * sq * (0.5 * g1 + g2 / (2.0 * std::sqrt(3.0)));
    return inc;
  }

 private:
  double uniform01() {
    // 53-bit mantissa in [0, 1)
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  std::uint64_t seed_;
  std::mt19937_64 eng_;
  std::uint64_t cursor_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// splitmix64, used to derive independent per-member seeds from a master
/// seed in ensemble runs.
inline std::uint64_t split_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t x = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace qtraj
