// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#ifndef COOLDRMC_RNG_HPP_
#define COOLDRMC_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cooldrmc {

/**
 * @brief Deterministic, platform-independent pseudo-random stream.
 *
 * SplitMix64 core with Box-Muller normals. The standard library engines and
 * distributions are implementation-defined, which would break the
 * bit-reproducibility guarantees of seeded episodes; this generator produces
 * identical streams on every platform.
 */
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Stream tag: either an integer or a label, folded into the seed.
  struct Tag {
    std::uint64_t value;
    Tag(std::uint64_t v) : value(v) {}
    Tag(int v) : value(static_cast<std::uint64_t>(v)) {}
    Tag(std::string_view label) : value(fnv1a(label)) {}
    Tag(const char* label) : value(fnv1a(label)) {}
  };

  /// Derives an independent stream from a seed and a list of stream tags.
  static Rng derive(std::uint64_t seed, std::initializer_list<Tag> tags) {
    std::uint64_t s = seed;
    for (const Tag& t : tags) {
      s = mix(s ^ mix(t.value + 0x9e3779b97f4a7c15ULL));
    }
    return Rng(s);
  }

  /// Next raw 64-bit value.
  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Standard normal via Box-Muller (uses one cached value).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(theta);
    have_spare_ = true;
    return radius * std::cos(theta);
  }

  /// Samples an index from a discrete distribution given by weights.
  std::size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u <= 0.0) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

private:
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cooldrmc

#endif  // COOLDRMC_RNG_HPP_
