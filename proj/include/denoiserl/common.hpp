#pragma once

#include <charconv>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace denoiserl {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic 64-bit generator. mt19937_64 output is pinned by the standard;
// the unit/int draws are hand-rolled because std:: distributions are not.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  // Independent stream keyed on (seed, a, b). Callers that iterate per problem
  // or per trial get the same draws regardless of iteration order.
  static Rng stream(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return Rng(splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b));
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n), rejection-sampled to stay unbiased.
  int next_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::next_int: n must be positive");
    const uint64_t bound = static_cast<uint64_t>(n);
    const uint64_t cutoff = (0ull - bound) % bound;  // 2^64 mod n
    for (;;) {
      const uint64_t x = engine_();
      if (x >= cutoff) return static_cast<int>(x % bound);
    }
  }

  // Symmetric uniform in (-scale, scale).
  double next_symmetric(double scale) { return (2.0 * next_unit() - 1.0) * scale; }

 private:
  std::mt19937_64 engine_;
};

// Shortest round-trip decimal form (exact reload from text).
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error("malformed number: '" + std::string(s) + "'");
  return v;
}

inline int64_t parse_int(std::string_view s) {
  int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error("malformed integer: '" + std::string(s) + "'");
  return v;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace denoiserl
