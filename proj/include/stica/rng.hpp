#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace stica {

// Seeded 64-bit Mersenne Twister with explicit sampling formulas so that the
// same seed yields the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] (inclusive), unbiased by rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  double normal();  // standard normal (Box-Muller, no cached spare)
  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream; advances this stream by one draw.
  Rng split() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

  std::string serialize() const;
  void deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace stica
