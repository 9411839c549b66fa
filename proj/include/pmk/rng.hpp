#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace pmk {

/// Counter-based generator: output n is a pure function of (key, n), so a
/// stream can be re-derived from (seed, index) without replaying state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept;

  /// Independent stream for item `index` of a job seeded with `seed`.
  static Rng at(std::uint64_t seed, std::uint64_t index) noexcept { return Rng(seed, index); }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (two draws per sample, no caching).
  double normal() noexcept;
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// +1 or -1 with equal probability.
  int sign() noexcept { return (next_u64() >> 63) ? 1 : -1; }

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// SplitMix64 finalizer; exposed for content hashing and key derivation.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace pmk
