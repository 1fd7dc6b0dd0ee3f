#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace avf {

// Every stochastic operation in the toolkit draws from Rng. The engine is
// std::mt19937_64, whose output sequence is fixed by the C++ standard; the
// distributions below are implemented here rather than taken from <random>
// because the standard library distributions are not portable bit-for-bit.
//
//   uniform_index(n): modulo of a 64-bit draw with rejection, exact uniform.
//   uniform01():      top 53 bits of one draw, scaled by 2^-53, in [0, 1).
//   normal():         Box-Muller, both variates used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Child seed for a named sub-component: mix64(base ^ fnv1a64(tag)).
/// Siblings with different tags get independent streams, so adding one
/// component never perturbs the randomness of another.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index);

}  // namespace avf
