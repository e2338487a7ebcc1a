#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lmprior {

/// Finalizer of the splitmix64 generator; bijective 64-bit mixing.
inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a over a byte string.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derive a child seed from a parent seed, a stage label, and an index.
///
/// All randomness in the library flows from one experiment seed through this
/// function, so any subset of an experiment can be rerun consistently.  The
/// derivation is a pure function of (parent, label, index).
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view label,
                                 std::uint64_t index = 0) noexcept {
  std::uint64_t h = fnv1a64(label, parent ^ 0x9e3779b97f4a7c15ULL);
  return splitmix64(h + 0x9e3779b97f4a7c15ULL * (index + 1));
}

/// Standard engine used throughout; the seed is mixed first so that
/// small consecutive seeds do not produce correlated streams.
inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(splitmix64(seed));
}

}  // namespace lmprior
