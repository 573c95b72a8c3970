#include "svae/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "svae/errors.hpp"

namespace svae {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw ContractViolation("uniform_index(0)");
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t u;
  do {
    u = engine_();
  } while (u >= limit);
  return static_cast<std::size_t>(u % n);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << seed_ << ' ' << engine_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  std::uint64_t seed;
  std::mt19937_64 engine;
  if (!(is >> seed >> engine)) throw CheckpointError("malformed rng state");
  seed_ = seed;
  engine_ = engine;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) + index);
}

Tensor sample_uniform(Rng& rng, const Shape& shape) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = rng.uniform();
  return t;
}

Tensor sample_normal(Rng& rng, const Shape& shape) {
  Tensor t(shape);
  auto out = t.mutable_data();
  for (std::size_t i = 0; i < out.size(); i += 2) {
    const double u1 = 1.0 - rng.uniform();  // (0, 1]
    const double u2 = rng.uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[i] = radius * std::cos(angle);
    if (i + 1 < out.size()) out[i + 1] = radius * std::sin(angle);
  }
  return t;
}

}  // namespace svae
