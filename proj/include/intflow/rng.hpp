#pragma once

#include <cmath>
#include <cstdint>

namespace intflow {

// Counter-based 64-bit generator (splitmix64). The whole stream state is one
// u64, so it checkpoints and forks trivially. Every stochastic draw in a
// training session comes from streams forked off one seed:
//   fork(1) weight init, fork(2) shuffling, fork(3) stochastic rounding,
//   fork(4) histogram probes. Keeping the streams separate means e.g. batch
// order is identical between runs that differ only in how often they round.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Box-Muller, cosine branch only so the stream state stays a single u64.
  double next_normal(double mean, double stddev) {
    double u1;
    do {
      u1 = next_unit();
    } while (u1 <= 0.0);
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586 * u2);
  }

  // Independent child stream; distinct tags give decorrelated streams and the
  // parent is not advanced.
  Rng fork(std::uint64_t tag) const {
    Rng child(state_ ^ (0xA0761D6478BD642Full * (tag + 1)) ^ 0x1D8E4E27C47D124Full);
    child.next_u64();
    return child;
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

}  // namespace intflow
