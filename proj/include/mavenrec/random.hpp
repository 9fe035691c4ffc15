#pragma once

#include <cstdint>
#include <initializer_list>

namespace mavenrec {

// splitmix64 finalizer; used to derive independent stream seeds from the
// single user-facing seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> stream) {
  std::uint64_t s = mix_seed(base);
  for (auto v : stream) s = mix_seed(s ^ mix_seed(v));
  return s;
}

}  // namespace mavenrec
