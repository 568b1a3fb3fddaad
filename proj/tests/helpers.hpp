#pragma once

#include <cmath>
#include <vector>

#include "protoquad/linalg.hpp"
#include "protoquad/rng.hpp"

namespace testutil {

using protoquad::Mat;
using protoquad::Vec;

inline Vec random_vec(protoquad::Rng& rng, size_t n, double scale = 1.0) {
  Vec v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

inline Mat random_mat(protoquad::Rng& rng, size_t rows, size_t cols, double scale = 1.0) {
  Mat m(rows, cols);
  for (auto& x : m.data) x = scale * rng.normal();
  return m;
}

// PSD via G^T G / n.
inline Mat random_psd(protoquad::Rng& rng, size_t n) {
  Mat g = random_mat(rng, n, n);
  Mat a(n, n);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (size_t k = 0; k < n; ++k) s += g(k, i) * g(k, j);
      a(i, j) = s / static_cast<double>(n);
    }
  return a;
}

inline double frob_dist(const Mat& a, const Mat& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Central finite difference of a scalar function along one coordinate of its
// parameter vector, via caller-provided get/set accessors.
template <typename GetSet, typename Loss>
double central_diff(GetSet&& access, Loss&& loss, double h = 1e-5) {
  const double saved = access(0.0, false);
  access(saved + h, true);
  const double up = loss();
  access(saved - h, true);
  const double down = loss();
  access(saved, true);
  return (up - down) / (2.0 * h);
}

inline bool rel_close(double analytic, double fd, double tol, double guard = 1e-6) {
  return std::abs(analytic - fd) <=
         tol * std::max({std::abs(analytic), std::abs(fd), guard});
}

}  // namespace testutil
