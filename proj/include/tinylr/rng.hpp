#pragma once
// Counter-based random streams. A stream is a (key, counter) pair; draw n is
// a pure function of the key and n, so cloning a stream clones its future.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace tinylr {

constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

class Stream {
 public:
  constexpr explicit Stream(std::uint64_t key = 0) : key_(mix64(key ^ 0x5851f42d4c957f2dULL)) {}

  std::uint64_t next_u64() { return mix64(key_ + 0xd1b54a32d192ed03ULL * (++ctr_)); }

  // Uniform on (0, 1].
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  // Box-Muller without caching, so every call consumes exactly two draws.
  double normal() {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    return r * std::cos(2.0 * std::numbers::pi * uniform());
  }

  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  Stream child(std::uint64_t tag) const {
    Stream s;
    s.key_ = mix64(key_ ^ mix64(tag + 0x2545f4914f6cdd1dULL));
    return s;
  }
  Stream child(std::string_view tag) const { return child(hash_str(tag)); }

  std::uint64_t key() const { return key_; }
  std::uint64_t consumed() const { return ctr_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t ctr_ = 0;
};

}  // namespace tinylr
