#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dmkrr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// =============================================================================
// Errors
// =============================================================================

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training-side density underflow (bandwidth far too small for the data).
class IllConditionedBandwidth : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Query-side density underflow (point too far from every anchor).
class IllConditionedQuery : public NumericError {
 public:
  using NumericError::NumericError;
};

class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

inline void warn(const std::string& msg) {
  std::cerr << "[dmkrr] warning: " << msg << '\n';
}

// =============================================================================
// Deterministic RNG
//
// All randomness flows through this wrapper so that results are reproducible
// bit-for-bit from a seed on any platform: raw engine bits are mapped to
// doubles explicitly instead of relying on implementation-defined
// distributions.
// =============================================================================

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent stream seed from a master seed and a salt.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
  return splitmix64(splitmix64(master) ^ splitmix64(salt + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt_a,
                                 std::uint64_t salt_b) {
  return derive_seed(derive_seed(master, salt_a), salt_b);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t index(std::uint64_t n) {
    if (n == 0) throw InvalidParameter("Rng::index: n must be positive");
    const std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= lim);
    return x % n;
  }

  /// Standard normal via Box-Muller (portable, unlike std::normal_distribution).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  /// In-place Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::uint64_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// =============================================================================
// Thread pool helper
// =============================================================================

/// Resolve a thread-count request: positive values pass through, zero means
/// "DMKRR_THREADS env var if set, else hardware concurrency".
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DMKRR_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

/// Run fn(i) for i in [0, count). Results must depend only on i, never on the
/// execution order, so output is identical for any thread count.
template <class Fn>
void parallel_for(std::int64_t count, int threads, Fn&& fn) {
  if (count <= 0) return;
  const int nthreads =
      static_cast<int>(std::min<std::int64_t>(resolve_threads(threads), count));
  if (nthreads <= 1) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::int64_t i = next.fetch_add(1);
      if (i >= count) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace dmkrr
