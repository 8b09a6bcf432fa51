#pragma once

#include <cstdint>
#include <string_view>

namespace clear {

/// Counter-based splittable random generator.
///
/// The stream is a pure function of (key, counter), so substreams derived
/// from a key by label are unaffected by how many draws other parts of the
/// program have consumed. Identical seeds produce identical streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(scramble(seed)), counter_(0) {}

  /// Derives an independent stream keyed by a textual label.
  Rng substream(std::string_view label) const;

  /// Derives an independent stream keyed by an index (e.g. an example number).
  Rng substream(std::uint64_t index) const;

  std::uint64_t next_u64();

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double();

  /// Standard normal deviate via Box-Muller (consumes two uniforms).
  double next_gaussian();

  /// Unbiased uniform integer in [0, n); n must be >= 1.
  std::uint64_t next_below(std::uint64_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static Rng from_state(std::uint64_t key, std::uint64_t counter) {
    Rng r(0);
    r.key_ = key;
    r.counter_ = counter;
    return r;
  }

 private:
  static std::uint64_t scramble(std::uint64_t x);

  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace clear
