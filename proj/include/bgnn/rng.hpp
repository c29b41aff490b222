#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace bgnn {

/// SplitMix64 finalizer. Used both as a hash and as the counter-to-bits map.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derive an independent stream key from a parent key and a stream id.
constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t stream) noexcept {
  return mix64(key ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

/// Counter-based generator: the i-th draw is a pure function of (key, i), so
/// streams keyed by (seed, layer, step) are reproducible on every platform.
/// Distributions are implemented here rather than with <random> because the
/// standard distributions are implementation-defined.
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t seed) noexcept : key_(mix64(seed)) {}
  constexpr CounterRng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept
      : key_(derive_key(derive_key(mix64(seed), a), b)) {}

  constexpr std::uint64_t next_u64() noexcept { return mix64(key_ + 0x2545f4914f6cdd1dULL * ++counter_); }

  /// Uniform in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Lemire's multiply-shift without rejection; the
  /// bias is below 2^-32 for the sizes used here.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double normal() noexcept {
    // Box-Muller; the second variate is discarded to keep draws stateless.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  constexpr std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace bgnn
