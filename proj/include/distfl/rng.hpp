#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <vector>

namespace distfl {

// Stream purposes. Every random decision in the simulator draws from a
// stream keyed by (seed, purpose, id, sub-id), so results never depend on
// evaluation order and any round can be replayed in isolation.
namespace purpose {
inline constexpr std::uint64_t model_init = 1;
inline constexpr std::uint64_t type_direction = 2;
inline constexpr std::uint64_t shard = 3;
inline constexpr std::uint64_t test_set = 4;
inline constexpr std::uint64_t shuffle = 5;
inline constexpr std::uint64_t dp_noise = 6;
inline constexpr std::uint64_t synthesis = 7;
}  // namespace purpose

// Counter-seeded xoshiro256++ stream. The four-word state is derived from
// the key words with splitmix64, the standard seeding recipe.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t a = 0,
                     std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t key = seed;
    key = mix(key ^ (0x9E3779B97F4A7C15ULL + a));
    key = mix(key ^ (0xC2B2AE3D27D4EB4FULL + b));
    key = mix(key ^ (0x165667B19E3779F9ULL + c));
    for (auto& word : state_) {
      word = mix(key);
      key += 0x9E3779B97F4A7C15ULL;
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. One deterministic value per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

  // Unbiased integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t bound = n;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::size_t>(x % bound);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_[4];
};

}  // namespace distfl
