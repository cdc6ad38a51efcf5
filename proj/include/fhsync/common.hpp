#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace fhsync {

// Bad configuration or out-of-range parameters. The CLI maps this to exit 2.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Calling an operation in a state where it is not allowed (step after
// termination, backward before forward, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Coarse acquisition could not start an episode.
struct EpisodeSetupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kPi = std::numbers::pi;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ splitmix64(v));
}

template <class... Ts>
constexpr std::uint64_t hash_values(std::uint64_t first, Ts... rest) {
  std::uint64_t h = splitmix64(first);
  ((h = hash_combine(h, static_cast<std::uint64_t>(rest))), ...);
  return h;
}

// 53-bit mantissa in [0,1)
constexpr double u01_from_bits(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Engine output is pinned by the standard; conversions are done here so
// results do not depend on the library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }
  double uniform() { return u01_from_bits(eng_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // index in [0, n)
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("Rng::below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Rounds t*fs to an integer sample count and checks it is (numerically) exact.
inline std::int64_t exact_samples(double t_s, double fs, const char* what) {
  const double x = t_s * fs;
  const double r = std::round(x);
  if (std::abs(x - r) > 1e-6 * std::max(1.0, std::abs(x))) {
    throw ConfigError(std::string(what) + " is not a whole number of samples");
  }
  return static_cast<std::int64_t>(r);
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace fhsync
