#ifndef FEDGEO_RNG_HPP
#define FEDGEO_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace fedgeo {

/// Mixes a list of integers into one 64-bit seed (splitmix64 chaining).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

/// Seeded generator with platform-independent draws.
///
/// The standard distributions are implementation-defined, so uniform reals
/// and bounded integers are derived directly from the mt19937_64 bit stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in (0, 1].
  double uniform_open_zero() { return 1.0 - uniform(); }
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fedgeo

#endif  // FEDGEO_RNG_HPP
