#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace amplify {

#ifdef AMPLIFY_REAL32
using Real = float;
#else
using Real = double;
#endif

/// Invalid model/strategy/run configuration. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Corpus file missing, malformed, or unreadable. CLI exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shape mismatch between operands.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A call violated an API contract (non-scalar backward root,
/// non-normalized target rows, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss. CLI exit code 4.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Seedable RNG stream. Every source of randomness in a run is an explicit
/// Rng owned by the caller; independent concerns (init, data order, mix
/// plans, dropout) each get their own named stream derived from the run
/// seed, so that e.g. two strategies see identical batch orderings.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  /// Stream seeded from (seed, name) so distinct names give independent
  /// sequences for the same run seed.
  static Rng stream(uint64_t seed, std::string_view name) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return Rng(splitmix(seed ^ h));
  }

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in the open interval (0, 1).
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n), unbiased. n must be positive.
  size_t uniform_index(size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be > 0");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<size_t>(x % n);
  }

  double normal(double mean, double stddev) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u = uniform_open();
    double v = uniform_open();
    double r = std::sqrt(-2.0 * std::log(u));
    spare_ = r * std::sin(2.0 * M_PI * v);
    has_spare_ = true;
    return mean + stddev * r * std::cos(2.0 * M_PI * v);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace amplify
