#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace organ {

/// Seeded random stream. Streams are split by id so that every component
/// (sampler, dropout, rollout, evaluation) draws from its own reproducible
/// sequence regardless of how much the others consume.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Child stream derived from this stream's identity (not its position).
  Rng split(std::uint64_t id) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p) { return uniform() < p; }
  std::size_t uniform_index(std::size_t n);
  /// Index drawn from a probability vector (need not be exactly normalised).
  std::size_t categorical(std::span<const double> probs);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

}  // namespace organ
