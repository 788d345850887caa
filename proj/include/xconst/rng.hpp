#pragma once

#include <cstdint>
#include <random>

namespace xconst {

// splitmix64 finalizer; used to derive independent streams from (seed, index) keys.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_key(std::uint64_t seed, std::uint64_t a) { return mix64(mix64(seed) ^ a); }

inline std::uint64_t mix_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return mix64(mix_key(seed, a) ^ mix64(b + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(mix_key(seed, stream)); }

// Uniform integer in [0, n) from a raw 64-bit draw. libstdc++'s distributions are
// deterministic too, but this keeps index streams independent of the library.
inline std::uint64_t uniform_index(std::uint64_t bits, std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(bits) * n) >> 64);
}

}  // namespace xconst
