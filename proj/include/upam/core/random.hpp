#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace upam {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derive a child seed from a parent seed and a label, e.g.
/// derive_seed(top, "inner", i, j). Labels keep streams independent of call order.
template <typename... Idx>
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label, Idx... idx) {
  std::uint64_t h = splitmix64(parent ^ fnv1a(label));
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(idx))), ...);
  return h;
}

/// (seed, stream_id) pair; identical pairs give identical draw sequences.
struct RandomState {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  std::mt19937_64 engine() const { return std::mt19937_64(splitmix64(seed ^ splitmix64(stream_id))); }
  RandomState child(std::uint64_t sub) const { return {seed, splitmix64(stream_id + 1) ^ sub}; }
};

}  // namespace upam
