#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace histonet {

/// Seeded random stream. Independent streams are derived by hashing the
/// stream's seed with a stream id, so a stream's draws never depend on how
/// many values another stream has consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  /// splitmix64 finalizer over the pair; used for every seed derivation.
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b);
  static std::uint64_t hash_string(std::string_view text);

  Rng fork(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace histonet
