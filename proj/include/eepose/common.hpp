// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace eepose {

// ---------------------------------------------------------------------------
// Error taxonomy. CLI maps these onto exit codes: config 2, data 3, numeric 4.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Data / IO problems.
struct DataError : Error {
  using Error::Error;
};
struct EmptyInput : DataError {
  using DataError::DataError;
};
struct EmptyCloud : DataError {
  using DataError::DataError;
};
struct SizeMismatch : DataError {
  using DataError::DataError;
};
struct TooLarge : DataError {
  using DataError::DataError;
};
struct InsufficientData : DataError {
  using DataError::DataError;
};
struct ShapeMismatch : DataError {
  using DataError::DataError;
};
struct IoError : DataError {
  using DataError::DataError;
};
struct FormatError : DataError {
  using DataError::DataError;
};
struct ModelMissing : DataError {
  using DataError::DataError;
};
struct EmptyTestSplit : DataError {
  using DataError::DataError;
};
struct MissingInput : DataError {
  using DataError::DataError;
};

// Numeric failures.
struct NumericError : Error {
  using Error::Error;
};
struct DegenerateInput : NumericError {
  using NumericError::NumericError;
};
struct NonConvergence : NumericError {
  using NumericError::NumericError;
};
struct NonFiniteLoss : NumericError {
  using NumericError::NumericError;
};
struct NonFiniteState : NumericError {
  using NumericError::NumericError;
};

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// ---------------------------------------------------------------------------
// Seeding and hashing. Sub-generators are derived by mixing a base seed with
// stream labels so per-sample/per-candidate streams are order independent.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

inline std::uint64_t hash_label(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label,
                                 std::uint64_t index = 0) {
  return mix_seed(mix_seed(base, hash_label(label)), index);
}

// FNV-1a over raw bytes, used for provenance checksums.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a_file(const std::string& path);
std::string to_hex(std::uint64_t v);

// ---------------------------------------------------------------------------
// Deterministic RNG. Distribution transforms are implemented here rather than
// with std:: distributions, whose sequences are not pinned by the standard.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw DegenerateInput("uniform_index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller (one value per call, two uniforms).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace eepose
