#include "clear/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace clear {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// SplitMix64 finalizer; full-avalanche 64-bit mixer.
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t Rng::scramble(std::uint64_t x) { return mix64(x + kGolden); }

Rng Rng::substream(std::string_view label) const {
  return from_state(mix64(key_ ^ scramble(fnv1a(label))), 0);
}

Rng Rng::substream(std::uint64_t index) const {
  return from_state(mix64(key_ ^ scramble(index * kGolden + 1)), 0);
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
  double u1 = next_double();
  double u2 = next_double();
  double r = std::sqrt(-2.0 * std::log1p(-u1));  // 1-u1 in (0,1], no log(0)
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::next_below: n must be >= 1");
  // Rejection sampling over the largest multiple of n below 2^64.
  const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

}  // namespace clear
