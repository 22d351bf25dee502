#pragma once

#include <cstdint>
#include <limits>

namespace bayesformer {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based stream: the n-th draw is mix(key, n), so any draw can be
// recomputed without replaying the stream. Keys are derived by hashing
// (master seed, example, pass, site), which makes every stochastic quantity a
// pure function of its coordinates and independent of execution order.
class Stream {
 public:
  using result_type = std::uint64_t;

  constexpr Stream() = default;
  constexpr explicit Stream(std::uint64_t key) : key_(key) {}

  static constexpr Stream derive(std::uint64_t seed, std::uint64_t example, std::uint64_t pass,
                                 std::uint64_t site) {
    std::uint64_t k = mix64(seed ^ 0x5851f42d4c957f2dULL);
    k = mix64(k ^ (example + 0x14057b7ef767814fULL));
    k = mix64(k ^ (pass + 0x2545f4914f6cdd1dULL));
    k = mix64(k ^ (site + 0x9e3779b97f4a7c15ULL));
    return Stream(k);
  }

  // Child stream, e.g. one per coordinate of a larger structure.
  constexpr Stream split(std::uint64_t tag) const { return Stream(mix64(key_ ^ mix64(tag + 1))); }

  constexpr std::uint64_t at(std::uint64_t counter) const noexcept {
    return mix64(key_ + mix64(counter));
  }
  // Uniform in [0, 1) with 53 random bits.
  constexpr double uniform_at(std::uint64_t counter) const noexcept {
    return static_cast<double>(at(counter) >> 11) * 0x1.0p-53;
  }

  std::uint64_t operator()() noexcept { return at(counter_++); }
  double uniform() noexcept { return uniform_at(counter_++); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  constexpr std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Site tags shared by every module that derives streams.
namespace site {
inline constexpr std::uint64_t kMaskPlan = 1;
inline constexpr std::uint64_t kBaselinePlan = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kBatch = 4;
inline constexpr std::uint64_t kBootstrap = 5;
inline constexpr std::uint64_t kWarmStart = 6;
inline constexpr std::uint64_t kRandomScore = 7;
inline constexpr std::uint64_t kGenerate = 8;
inline constexpr std::uint64_t kSplit = 9;
inline constexpr std::uint64_t kWeightSample = 10;
inline constexpr std::uint64_t kPredict = 11;
}  // namespace site

}  // namespace bayesformer
