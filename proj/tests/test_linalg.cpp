#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "protoquad/linalg.hpp"
#include "protoquad/rng.hpp"

using namespace protoquad;
using testutil::frob_dist;
using testutil::random_psd;
using testutil::random_vec;

TEST_CASE("euclidean_distance basics") {
  Rng rng(1);
  const Vec x = random_vec(rng, 8);
  CHECK(euclidean_distance(x, x) == 0.0);
  CHECK(euclidean_distance({0, 0}, {3, 4}) == Catch::Approx(5.0));
  CHECK_THROWS_AS(euclidean_distance({1, 2}, {1, 2, 3}), contract_error);
}

TEST_CASE("euclidean_distance matches componentwise oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec a = random_vec(rng, 8);
    const Vec b = random_vec(rng, 8);
    double s = 0.0;
    for (size_t i = 0; i < 8; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(std::abs(euclidean_distance(a, b) - std::sqrt(s)) < 1e-12);
  }
}

TEST_CASE("euclidean_distance symmetry and triangle inequality") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec a = random_vec(rng, 6);
    const Vec b = random_vec(rng, 6);
    const Vec c = random_vec(rng, 6);
    const double dab = euclidean_distance(a, b);
    CHECK(dab >= 0.0);
    CHECK(dab == euclidean_distance(b, a));
    CHECK(dab <= euclidean_distance(a, c) + euclidean_distance(c, b) + 1e-12);
  }
}

TEST_CASE("cosine_similarity basics") {
  Rng rng(4);
  const Vec x = random_vec(rng, 8);
  CHECK(cosine_similarity(x, x) == Catch::Approx(1.0).margin(1e-12));
  CHECK(cosine_similarity({1, 0}, {0, 1}) == 0.0);

  bool flag = false;
  CHECK(cosine_similarity({0, 0}, {1, 2}, &flag) == 0.0);
  CHECK(flag);
  cosine_similarity({1, 0}, {0, 1}, &flag);
  CHECK_FALSE(flag);
}

TEST_CASE("cosine_similarity matches dot/norm oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec a = random_vec(rng, 8);
    const Vec b = random_vec(rng, 8);
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (size_t i = 0; i < 8; ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    const double oracle = ab / (std::sqrt(aa) * std::sqrt(bb));
    CHECK(std::abs(cosine_similarity(a, b) - oracle) < 1e-12);
  }
}

TEST_CASE("cosine_similarity invariant to positive scaling") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec a = random_vec(rng, 5);
    const Vec b = random_vec(rng, 5);
    const double alpha = 0.01 + 100.0 * rng.uniform();
    const double beta = 0.01 + 100.0 * rng.uniform();
    const double base = cosine_similarity(a, b);
    const double scl = cosine_similarity(scaled(a, alpha), scaled(b, beta));
    CHECK(std::abs(base - scl) <= 1e-10 * std::max(1.0, std::abs(base)));
  }
}

TEST_CASE("psd_sqrt identity and diagonal cases") {
  Mat eye = Mat::identity(3);
  CHECK(frob_dist(psd_sqrt(eye, 0.0), eye) < 1e-12);

  Mat d(2, 2);
  d(0, 0) = 4.0;
  d(1, 1) = 9.0;
  const Mat r = psd_sqrt(d, 0.0);
  CHECK(r(0, 0) == Catch::Approx(2.0).margin(1e-12));
  CHECK(r(1, 1) == Catch::Approx(3.0).margin(1e-12));
  CHECK(std::abs(r(0, 1)) < 1e-12);

  Mat bad(2, 2);
  bad(0, 1) = 1.0;  // asymmetric
  CHECK_THROWS_AS(psd_sqrt(bad, 0.0), contract_error);
}

TEST_CASE("psd_sqrt squared reconstructs A + ridge*I") {
  Rng rng(7);
  for (size_t n : {2u, 8u, 32u, 64u}) {
    const Mat a = random_psd(rng, n);
    for (double ridge : {0.0, 1e-6}) {
      const Mat b = psd_sqrt(a, ridge);
      Mat target = a;
      for (size_t i = 0; i < n; ++i) target(i, i) += ridge;
      CHECK(frob_dist(matmul(b, b), target) < 1e-9);
    }
  }
}

TEST_CASE("psd_inv_sqrt diagonal case and inverse property") {
  Mat d(2, 2);
  d(0, 0) = 4.0;
  d(1, 1) = 16.0;
  const Mat r = psd_inv_sqrt(d, 1e-12);
  CHECK(r(0, 0) == Catch::Approx(0.5).margin(1e-9));
  CHECK(r(1, 1) == Catch::Approx(0.25).margin(1e-9));

  const Mat almost_eye = psd_inv_sqrt(Mat::identity(4), 1e-12);
  CHECK(frob_dist(almost_eye, Mat::identity(4)) < 1e-9);

  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat a = random_psd(rng, 16);
    const double ridge = 1e-6;
    const Mat prod = matmul(psd_sqrt(a, ridge), psd_inv_sqrt(a, ridge));
    CHECK(frob_dist(prod, Mat::identity(16)) < 1e-8);
  }
}

TEST_CASE("log_softmax symmetry, stability, and oracle") {
  const Vec two = log_softmax({0.0, 0.0});
  CHECK(two[0] == Catch::Approx(-std::log(2.0)).margin(1e-15));
  CHECK(two[1] == Catch::Approx(-std::log(2.0)).margin(1e-15));

  const Vec big = log_softmax({1000.0, 0.0});
  CHECK(big[0] == Catch::Approx(0.0).margin(1e-12));
  CHECK(big[1] == Catch::Approx(-1000.0).margin(1e-9));

  CHECK_THROWS_AS(log_softmax({}), contract_error);

  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Vec x(10);
    for (auto& v : x) v = 2e3 * (rng.uniform() - 0.5);  // magnitudes up to 1e3
    const Vec ls = log_softmax(x);

    // extended-precision oracle
    long double m = x[0];
    for (double v : x) m = std::max<long double>(m, v);
    long double sum = 0.0L;
    for (double v : x) sum += expl(static_cast<long double>(v) - m);
    const long double lse = m + logl(sum);
    double total = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(ls[i] - static_cast<double>(x[i] - lse)) < 1e-12);
      total += std::exp(ls[i]);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("sym_eig reconstructs the input") {
  Rng rng(10);
  const Mat a = random_psd(rng, 12);
  const SymEig eig = sym_eig(a);
  Mat recon(12, 12);
  for (size_t k = 0; k < 12; ++k)
    for (size_t i = 0; i < 12; ++i)
      for (size_t j = 0; j < 12; ++j)
        recon(i, j) += eig.values[k] * eig.vectors(i, k) * eig.vectors(j, k);
  CHECK(frob_dist(recon, a) < 1e-10);
}
