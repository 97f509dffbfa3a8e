#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace cpg {

// Deterministic random source. std::mt19937_64 is fully specified by the
// standard, but the std:: distributions are not, so the draw methods here
// implement their own mappings. Two runs with the same seed produce the
// same stream on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925287 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derives an independent, reproducible stream for a named purpose.
  Rng child(std::string_view tag) const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the tag
    for (char c : tag) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return Rng(mix(seed_state() ^ h));
  }

 private:
  std::uint64_t seed_state() const {
    // mt19937_64 has no state accessor; children are derived from a hash of
    // the textual state instead. Cheap at the call rates we have.
    std::uint64_t h = 14695981039346656037ull;
    std::mt19937_64 copy = engine_;
    for (int i = 0; i < 4; ++i) {
      std::uint64_t v = copy();
      h = (h ^ v) * 1099511628211ull;
    }
    return h;
  }

  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cpg
