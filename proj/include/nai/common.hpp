#pragma once
// Shared substrate: dense row-major matrices, seeded RNG streams, error type.
//
// All numeric work in this project runs in 64-bit floats so that correctness
// tests can pin exact bit patterns. Linear algebra is written as plain loops
// on purpose: the cost model counts multiply-accumulates at the call sites,
// and the counted code must be the executed code.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nai {

using i64 = std::int64_t;

enum class Errc {
  invalid_argument = 1,
  io = 2,
  format = 3,
  numeric = 4,
  state = 5,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

// ---------------------------------------------------------------------------
// Matrix

struct Matrix {
  i64 rows = 0;
  i64 cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(i64 r, i64 c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {
    assert(r >= 0 && c >= 0);
  }

  double* row(i64 i) { return data.data() + i * cols; }
  const double* row(i64 i) const { return data.data() + i * cols; }
  double& at(i64 i, i64 j) { return data[i * cols + j]; }
  double at(i64 i, i64 j) const { return data[i * cols + j]; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  i64 size() const { return rows * cols; }
};

inline Matrix zeros_like(const Matrix& a) { return Matrix(a.rows, a.cols); }

// Plain triple-loop product; used off the hot path and as the reference kernel.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows, Errc::invalid_argument, "matmul: inner dimensions disagree");
  Matrix out(a.rows, b.cols);
  for (i64 i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* or_ = out.row(i);
    for (i64 t = 0; t < a.cols; ++t) {
      const double av = ar[t];
      if (av == 0.0) continue;
      const double* br = b.row(t);
      for (i64 j = 0; j < b.cols; ++j) or_[j] += av * br[j];
    }
  }
  return out;
}

inline bool bit_equal(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), Errc::invalid_argument, "max_abs_diff: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::fabs(a.data[i] - b.data[i]));
  return worst;
}

inline bool all_finite(const Matrix& a) {
  for (double v : a.data)
    if (!std::isfinite(v)) return false;
  return true;
}

inline Matrix gather_rows(const Matrix& a, std::span<const i64> idx) {
  Matrix out(static_cast<i64>(idx.size()), a.cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] >= 0 && idx[r] < a.rows, Errc::invalid_argument, "gather_rows: index out of range");
    std::copy(a.row(idx[r]), a.row(idx[r]) + a.cols, out.row(static_cast<i64>(r)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// RNG
//
// mt19937_64 supplies raw bits; every distribution transform is written out
// here so that streams stay reproducible regardless of the standard library.

struct Rng {
  std::mt19937_64 gen;

  explicit Rng(std::uint64_t seed) : gen(seed) {}

  std::uint64_t next() { return gen(); }

  // [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; second deviate cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Standard Gumbel via inverse CDF; argument kept away from 0 and 1.
  double gumbel() {
    const double u = std::max(uniform(), 1e-300);
    return -std::log(-std::log(std::max(1.0 - u, 1e-300)));
  }

  // Uniform integer in [0, n) without modulo bias.
  i64 below(i64 n) {
    assert(n > 0);
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t lim = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t v;
    do {
      v = next();
    } while (v >= lim);
    return static_cast<i64>(v % un);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (i64 i = static_cast<i64>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[below(i + 1)]);
    }
  }

 private:
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream for a pipeline stage from the run seed.
inline std::uint64_t stage_seed(std::uint64_t root, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(root ^ h);
}

}  // namespace nai
