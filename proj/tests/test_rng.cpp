#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <vector>

#include "protoquad/rng.hpp"

using protoquad::Rng;

TEST_CASE("identical (seed, stream) reproduces identical sequences") {
  Rng a(42, 7);
  Rng b(42, 7);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42, 7);
  Rng d(42, 7);
  for (int i = 0; i < 100; ++i) {
    CHECK(c.uniform() == d.uniform());
    CHECK(c.normal() == d.normal());
    CHECK(c.uniform_int(97) == d.uniform_int(97));
  }
}

TEST_CASE("distinct streams decorrelate") {
  Rng a(42, 0);
  Rng b(42, 1);
  int equal = 0;
  for (int i = 0; i < 64; ++i) equal += (a.next_u64() == b.next_u64());
  CHECK(equal == 0);
}

TEST_CASE("derive is deterministic") {
  Rng root(9, 0);
  Rng x = root.derive(3);
  Rng y = Rng(9, 0).derive(3);
  for (int i = 0; i < 50; ++i) CHECK(x.next_u64() == y.next_u64());
}

TEST_CASE("sample_without_replacement draws distinct in-range indices") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = rng.sample_without_replacement(20, 7);
    std::set<size_t> seen(s.begin(), s.end());
    CHECK(seen.size() == 7);
    for (size_t v : s) CHECK(v < 20);
  }
  CHECK(rng.sample_without_replacement(3, 3).size() == 3);
  CHECK_THROWS(rng.sample_without_replacement(3, 4));
}

TEST_CASE("uniform_int stays in range and covers it") {
  Rng rng(6);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) counts[rng.uniform_int(10)]++;
  for (int c : counts) CHECK(c > 500);  // crude uniformity floor
}
