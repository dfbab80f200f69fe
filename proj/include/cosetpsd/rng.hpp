#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace cosetpsd {

/// Stream roles mixed into the key so that draws for different purposes never
/// share a generator.
enum class StreamRole : std::uint64_t {
  user_signal = 1,
  fading = 2,
  noise = 3,
  symbol = 4,
  test = 5,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Folds a list of counters into one 64-bit key.
inline constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

/// Generator keyed by (seed, run, index, user, role). The stream depends only on
/// the key, never on how many draws other streams made, which keeps synthesis
/// independent of scheduling.
inline std::mt19937_64 keyed_stream(std::uint64_t seed, std::uint64_t run, std::uint64_t index,
                                    std::uint64_t user, StreamRole role) {
  return std::mt19937_64(stream_key({seed, run, index, user, static_cast<std::uint64_t>(role)}));
}

/// Circular complex Gaussian CN(0, variance).
class ComplexNormal {
 public:
  explicit ComplexNormal(double variance = 1.0) : dist_(0.0, std::sqrt(variance / 2.0)) {}

  template <typename Gen>
  std::complex<double> operator()(Gen& gen) {
    const double re = dist_(gen);
    const double im = dist_(gen);
    return {re, im};
  }

 private:
  std::normal_distribution<double> dist_;
};

}  // namespace cosetpsd
