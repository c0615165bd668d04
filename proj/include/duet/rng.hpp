#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace duet {

/// xoshiro256** seeded through splitmix64.
///
/// All randomness in the library flows through this generator so that runs are
/// reproducible bit-for-bit, and so that another implementation can replay the
/// same streams. Normal deviates use the Box-Muller transform (cosine branch
/// only, one deviate per two uniforms); uniform doubles take the top 53 bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent stream for a named purpose ("data", "init", "start_tokens").
  /// The child seed is splitmix64(seed ^ fnv1a64(name)).
  [[nodiscard]] Rng substream(std::string_view name) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  [[nodiscard]] std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace duet
