#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "protoquad/errors.hpp"

namespace protoquad {

using Vec = std::vector<double>;

// Dense row-major matrix. Symmetric inputs are required (and checked) by the
// spectral routines below.
struct Mat {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(size_t i, size_t j) { return data[i * cols + j]; }
  double operator()(size_t i, size_t j) const { return data[i * cols + j]; }

  static Mat identity(size_t n) {
    Mat m(n, n);
    for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool all_finite(const Mat& m) {
  for (double x : m.data)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool is_symmetric(const Mat& a) {
  if (a.rows != a.cols) return false;
  for (size_t i = 0; i < a.rows; ++i)
    for (size_t j = i + 1; j < a.cols; ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-9 * std::max(1.0, std::abs(a(i, j))))
        return false;
  return true;
}

inline double dot(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "dot: dimension mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline Vec sub(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "sub: dimension mismatch");
  Vec out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline Vec add(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "add: dimension mismatch");
  Vec out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline void axpy(double alpha, const Vec& x, Vec& y) {
  require(x.size() == y.size(), "axpy: dimension mismatch");
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec scaled(const Vec& a, double s) {
  Vec out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

inline Vec matvec(const Mat& a, const Vec& x) {
  require(a.cols == x.size(), "matvec: dimension mismatch");
  Vec out(a.rows, 0.0);
  for (size_t i = 0; i < a.rows; ++i) {
    double s = 0.0;
    for (size_t j = 0; j < a.cols; ++j) s += a(i, j) * x[j];
    out[i] = s;
  }
  return out;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  require(a.cols == b.rows, "matmul: dimension mismatch");
  Mat out(a.rows, b.cols);
  for (size_t i = 0; i < a.rows; ++i)
    for (size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline double euclidean_distance(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "euclidean_distance: dimension mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Cosine similarity with a zero-norm guard: degenerate inputs yield 0 and
// raise the optional diagnostic flag instead of dividing by zero.
inline double cosine_similarity(const Vec& a, const Vec& b, bool* zero_norm = nullptr) {
  require(a.size() == b.size(), "cosine_similarity: dimension mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (na < 1e-12 || nb < 1e-12) {
    if (zero_norm) *zero_norm = true;
    return 0.0;
  }
  if (zero_norm) *zero_norm = false;
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

struct SymEig {
  Vec values;   // ascending not guaranteed; paired with columns of vectors
  Mat vectors;  // orthogonal, columns are eigenvectors: A = V diag(values) V^T
};

// Cyclic Jacobi eigendecomposition for symmetric matrices. Converges when the
// off-diagonal Frobenius norm drops below 1e-12 (capped at 64 sweeps).
// Adequate for the M <= 256 covariance blocks this project works with.
inline SymEig sym_eig(const Mat& a0) {
  require(a0.rows == a0.cols, "sym_eig: matrix not square");
  require(is_symmetric(a0), "sym_eig: matrix not symmetric");
  const size_t n = a0.rows;
  Mat a = a0;
  Mat v = Mat::identity(n);

  auto off_diag_fro = [&]() {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < 64 && off_diag_fro() >= 1e-12; ++sweep) {
    for (size_t p = 0; p + 1 < n; ++p) {
      for (size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  SymEig out;
  out.values.resize(n);
  for (size_t i = 0; i < n; ++i) out.values[i] = a(i, i);
  out.vectors = std::move(v);
  return out;
}

namespace detail {

// V f(lambda) V^T with negative eigenvalues clamped to zero beforehand;
// sample covariances are PSD up to round-off, so the clamp only removes noise.
template <typename F>
Mat spectral_map(const Mat& a, F&& f) {
  const SymEig eig = sym_eig(a);
  const size_t n = a.rows;
  Mat out(n, n);
  for (size_t k = 0; k < n; ++k) {
    const double fk = f(std::max(0.0, eig.values[k]));
    for (size_t i = 0; i < n; ++i) {
      const double vik = eig.vectors(i, k) * fk;
      for (size_t j = 0; j < n; ++j) out(i, j) += vik * eig.vectors(j, k);
    }
  }
  // symmetrize round-off
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (out(i, j) + out(j, i));
      out(i, j) = m;
      out(j, i) = m;
    }
  return out;
}

}  // namespace detail

// B with B*B = A + ridge*I.
inline Mat psd_sqrt(const Mat& a, double ridge) {
  require(ridge >= 0.0, "psd_sqrt: ridge must be nonnegative");
  return detail::spectral_map(a, [ridge](double l) { return std::sqrt(l + ridge); });
}

// (A + ridge*I)^{-1/2}; ridge > 0 guarantees invertibility.
inline Mat psd_inv_sqrt(const Mat& a, double ridge) {
  require(ridge > 0.0, "psd_inv_sqrt: ridge must be positive");
  return detail::spectral_map(a, [ridge](double l) { return 1.0 / std::sqrt(l + ridge); });
}

// Max-shifted for stability: exp of the outputs sums to 1.
inline Vec log_softmax(const Vec& scores) {
  require(!scores.empty(), "log_softmax: empty input");
  require(all_finite(scores), "log_softmax: non-finite input");
  const double m = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - m);
  const double lse = m + std::log(sum);
  Vec out(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] - lse;
  return out;
}

inline Vec softmax(const Vec& scores) {
  Vec out = log_softmax(scores);
  for (double& x : out) x = std::exp(x);
  return out;
}

}  // namespace protoquad
