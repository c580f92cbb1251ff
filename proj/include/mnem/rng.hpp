#pragma once

#include <cstdint>
#include <string_view>

namespace mnem {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Counter-based generator: draw i (1-based) is mix64(seed + i * golden), which
// is exactly the SplitMix64 output sequence for state `seed`. Any draw can be
// replayed from (seed, i) alone, in any language.
//
//   unit()       = (draw >> 11) * 2^-53           in [0, 1)
//   below(n)     = floor(unit() * n)              in [0, n)
class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit constexpr CounterRng(std::uint64_t seed) : seed_(seed) {}

  constexpr std::uint64_t next_u64() {
    ++counter_;
    return mix64(seed_ + counter_ * kGolden);
  }
  constexpr double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  constexpr std::uint64_t below(std::uint64_t n) {
    const auto r = static_cast<std::uint64_t>(unit() * static_cast<double>(n));
    return r < n ? r : n - 1;
  }
  // Standard normal via Box-Muller; consumes two draws.
  double normal();

  constexpr std::uint64_t seed() const { return seed_; }
  constexpr std::uint64_t draws() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

// Per-item seed for reproducible parallel work: mix64(global ^ fnv1a64(key)).
constexpr std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view key) {
  return mix64(global_seed ^ fnv1a64(key));
}

constexpr std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t stream) {
  return mix64(global_seed ^ mix64(stream + CounterRng::kGolden));
}

}  // namespace mnem
