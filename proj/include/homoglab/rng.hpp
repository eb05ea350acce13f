#ifndef HOMOGLAB_RNG_HPP
#define HOMOGLAB_RNG_HPP

// Counter-based random streams.
//
// A stream is identified by a 64-bit key. Its k-th output (k = 0, 1, ...) is
//   mix64(key + (k + 1) * 0x9e3779b97f4a7c15),
// where mix64 is the SplitMix64 finalizer; this is exactly the output sequence
// of SplitMix64 seeded with `key`, but any element can be computed without
// generating its predecessors. Per-sample keys are split off the master seed:
//   sample_key(master, index) = mix64(mix64(master) ^ mix64(index + 1)).
// Random draws therefore depend only on (master seed, sample index, draw
// position), never on evaluation order or thread scheduling.

#include <cstdint>
#include <limits>

namespace homoglab {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t stream_draw(std::uint64_t key, std::uint64_t k) { return mix64(key + (k + 1) * kGolden); }

constexpr std::uint64_t sample_key(std::uint64_t master, std::uint64_t index) {
  return mix64(mix64(master) ^ mix64(index + 1));
}

/// Derives an independent sub-stream key (e.g. per site, per purpose).
constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t tag) { return mix64(key ^ mix64(tag + kGolden)); }

/// Uniform double in [0, 1) from the top 53 bits.
constexpr double to_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

/// Sequential view of a counter stream; satisfies UniformRandomBitGenerator.
class CounterStream {
 public:
  using result_type = std::uint64_t;
  explicit CounterStream(std::uint64_t key) : key_(key) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return stream_draw(key_, counter_++); }
  double uniform() { return to_unit((*this)()); }
  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace homoglab

#endif  // HOMOGLAB_RNG_HPP
