#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "svae/tensor.hpp"

namespace svae {

/// Seeded random source.
///
/// Integers come from std::mt19937_64, whose output sequence is fixed by the
/// C++ standard, so streams are reproducible across platforms. Floats are
/// derived as (u >> 11) * 2^-53, giving 53-bit uniforms on [0, 1). Normals use
/// Box-Muller on consecutive uniform pairs; a request for n normals consumes
/// exactly 2 * ceil(n / 2) uniforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64();
  double uniform();
  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);

  /// Engine state as text, for checkpoints.
  std::string state() const;
  void restore(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Mixes a master seed with a stream tag and an index (splitmix64 finaliser)
/// so independent streams can be derived deterministically.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

Tensor sample_uniform(Rng& rng, const Shape& shape);
Tensor sample_normal(Rng& rng, const Shape& shape);

}  // namespace svae
