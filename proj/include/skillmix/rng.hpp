#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace skillmix {

/// Seedable generator with a fixed, platform-independent output sequence.
///
/// Only the raw `std::mt19937_64` stream is used (its output is fixed by the
/// standard); bounded integers and unit doubles are derived here rather than
/// through `<random>` distributions, whose algorithms vary by vendor.
class Rng {
 public:
  static constexpr std::string_view k_algorithm = "mt19937_64/lemire-v1";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform double in [0, 1) with 53 random bits.
  double unit();

  bool bernoulli(double p) { return unit() < p; }

  /// k distinct indices from [0, n), uniformly, in draw order.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  /// Derives an independent child seed; used to give each plan its own stream.
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

}  // namespace skillmix
