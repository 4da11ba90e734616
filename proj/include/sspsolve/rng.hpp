#pragma once

#include <cstdint>
#include <random>

namespace sspsolve {

/** Deterministic random source.
 *
 *  Wraps std::mt19937_64 but converts to doubles by hand: the standard
 *  distribution templates are implementation-defined, and reproducible
 *  byte-identical output for a given seed is part of the contract of every
 *  generator in this library.
 */
class Rng {
public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /// Uniform double in [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (cosine branch only, so the draw count
  /// per call is fixed).
  double normal() {
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t integer(std::uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny compared to 2^64 in all
    // uses, so the bias is far below anything observable.
    return eng_() % n;
  }

  /// Independent substream derived from (this stream's next draw, tag).
  Rng fork(std::uint64_t tag) {
    return Rng(splitmix(eng_() ^ (0x9e3779b97f4a7c15ull * (tag + 1))));
  }

private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 eng_;
};

}  // namespace sspsolve
