#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace jamemu {

/// SplitMix64 finalizer. Output n of a stream is mix(key + (n + 1) * golden),
/// so any sample of any stream can be computed without the ones before it.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a, used to fold node ids into stream keys.
constexpr std::uint64_t fnv1a64(std::string_view text, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

/// Stream key for (global seed, node id, buffer index).
constexpr std::uint64_t stream_key(std::uint64_t seed, std::string_view node_id,
                                   std::uint64_t buffer_index) {
  std::uint64_t key = splitmix64_mix(seed ^ 0x6a09e667f3bcc909ULL);
  key = splitmix64_mix(key ^ fnv1a64(node_id));
  key = splitmix64_mix(key ^ (buffer_index * 0x9e3779b97f4a7c15ULL));
  return key;
}

/// Counter-based SplitMix64 stream. Portable: only integer arithmetic decides
/// the bits; normals use Box-Muller on top of that.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() {
    ++counter_;
    return splitmix64_mix(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1].
  double uniform_open_low() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_open_low()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  bool bit() { return (next_u64() >> 63) != 0; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace jamemu
