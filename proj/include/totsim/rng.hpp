#pragma once

#include <cmath>
#include <cstdint>
#include <span>

// Deterministic hashing and distribution draws. Every stochastic quantity in
// the simulator is a pure function of (seed, path, salt), never of wall-clock
// state or visit order; this is what makes speculative and primary expansion
// of the same slot produce identical content.

namespace totsim::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

/** Hash of a slot path rooted at query_seed; children extend the parent hash. */
inline std::uint64_t path_hash(std::uint64_t query_seed, std::span<const int> slots) {
  std::uint64_t h = splitmix64(query_seed);
  for (int s : slots) h = mix(h, static_cast<std::uint64_t>(s) + 1);
  return h;
}

inline std::uint64_t extend_hash(std::uint64_t parent_hash, int slot) {
  return mix(parent_hash, static_cast<std::uint64_t>(slot) + 1);
}

/** Uniform draw in [0,1) from a hash and purpose salt. */
inline double uniform01(std::uint64_t h, std::uint64_t salt) {
  return static_cast<double>(splitmix64(h ^ salt) >> 11) * 0x1.0p-53;
}

/** Standard normal via Box-Muller on two salted uniforms. */
inline double normal01(std::uint64_t h, std::uint64_t salt) {
  double u1 = uniform01(h, salt);
  double u2 = uniform01(h, salt ^ 0xa5a5a5a5a5a5a5a5ULL);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/** Lognormal draw rounded to a whole token count, clamped to [lo, hi]. */
inline int lognormal_tokens(std::uint64_t h, std::uint64_t salt, double mu, double sigma,
                            int lo, int hi) {
  double z = normal01(h, salt);
  double v = std::exp(mu + sigma * z);
  int n = static_cast<int>(std::lround(v));
  if (n < lo) n = lo;
  if (n > hi) n = hi;
  return n;
}

// Purpose salts for the workload content functions.
inline constexpr std::uint64_t kSaltTokens = 0x746f6b656e730001ULL;
inline constexpr std::uint64_t kSaltTerminal = 0x7465726d00000002ULL;
inline constexpr std::uint64_t kSaltDeep = 0x6465657000000003ULL;
inline constexpr std::uint64_t kSaltGolden = 0x676f6c6400000004ULL;
inline constexpr std::uint64_t kSaltNoise = 0x6e6f697300000005ULL;
inline constexpr std::uint64_t kSaltCorrect = 0x636f727200000006ULL;
inline constexpr std::uint64_t kSaltLabel = 0x6c61626c00000007ULL;
inline constexpr std::uint64_t kSaltQuery = 0x7175657200000008ULL;

}  // namespace totsim::rng
