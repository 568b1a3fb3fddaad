#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "protoquad/eval.hpp"

using namespace protoquad;
using testutil::random_vec;

namespace {

MlpParams identity_net(size_t dim) {
  MlpParams p;
  p.layers.resize(1);
  p.layers[0].weights = Mat::identity(dim);
  p.layers[0].bias.assign(dim, 0.0);
  return p;
}

}  // namespace

TEST_CASE("classify_ncm: exact hit, tie-break, empty bank") {
  PrototypeBank bank(3);
  bank.install_class(3, {1.0, 0.0, 0.0}, 0);
  bank.install_class(7, {-1.0, 0.0, 0.0}, 0);

  CHECK(classify_ncm(bank, {1.0, 0.0, 0.0}) == 3);
  CHECK(classify_ncm(bank, {-1.0, 0.0, 0.0}) == 7);
  // equidistant: smallest class id wins
  CHECK(classify_ncm(bank, {0.0, 0.5, 0.0}) == 3);

  PrototypeBank empty(3);
  CHECK_THROWS_AS(classify_ncm(empty, {0.0, 0.0, 0.0}), contract_error);
}

TEST_CASE("classify_ncm matches the exhaustive scan oracle") {
  Rng rng(61);
  PrototypeBank bank(8);
  std::vector<std::pair<uint32_t, Vec>> protos;
  for (uint32_t c = 0; c < 10; ++c) {
    const Vec p = random_vec(rng, 8);
    bank.install_class(c, p, 0);
    protos.emplace_back(c, p);
  }
  for (int q = 0; q < 100; ++q) {
    const Vec z = random_vec(rng, 8, 2.0);
    uint32_t best = 0;
    double best_d = 1e300;
    for (const auto& [id, p] : protos) {
      const double d = euclidean_distance(z, p);
      if (d < best_d || (d == best_d && id < best)) {
        best_d = d;
        best = id;
      }
    }
    CHECK(classify_ncm(bank, z) == best);
  }
}

TEST_CASE("classify_ncm with avg_copies anchors on the copy mean") {
  PrototypeBank bank(2);
  bank.install_class(0, {0.0, 0.0}, 0);
  bank.install_class(1, {10.0, 0.0}, 0);
  auto& h = bank.classes()[0];
  h.copies.push_back({4.0, 0.0});  // newest drifts toward class 1

  // newest copy of class 0 sits at (4,0): query (6.5,0) is closer to it than to (10,0)
  CHECK(classify_ncm(bank, {6.5, 0.0}) == 0);
  // averaged copies anchor class 0 at (2,0): class 1 wins the same query
  CHECK(classify_ncm(bank, {6.5, 0.0}, /*avg_copies=*/true) == 1);
}

TEST_CASE("session_accuracy: separable blobs score 1.0 and pooling is weighted") {
  Rng rng(62);
  const size_t dim = 4;
  const MlpParams net = identity_net(dim);

  PrototypeBank bank(dim);
  std::vector<SessionDataset> splits(2);
  uint32_t label = 0;
  for (size_t s = 0; s < 2; ++s) {
    splits[s].session_index = s;
    for (int c = 0; c < 2; ++c, ++label) {
      Vec mean(dim, 0.0);
      mean[label] = 10.0;
      bank.install_class(label, mean, s);
      const size_t count = s == 0 ? 12 : 4;  // uneven split sizes
      for (size_t i = 0; i < count; ++i) {
        Vec x = mean;
        for (auto& v : x) v += 0.1 * rng.normal();
        splits[s].features.push_back(x);
        splits[s].labels.push_back(label);
      }
    }
    splits[s].finalize();
  }

  const SessionEval ev = session_accuracy(bank, net, splits, 1);
  CHECK(ev.pooled == 1.0);
  CHECK(ev.per_split[0] == 1.0);
  CHECK(ev.per_split[1] == 1.0);

  // single session: A_1 equals R[1][1]
  const SessionEval first = session_accuracy(bank, net, splits, 0);
  CHECK(first.pooled == first.per_split[0]);

  // pooled equals the sample-count-weighted mean of per-split accuracies
  const double weighted = (24.0 * ev.per_split[0] + 8.0 * ev.per_split[1]) / 32.0;
  CHECK(std::abs(ev.pooled - weighted) < 1e-12);
}

TEST_CASE("session_accuracy: chance level for a random-label bank") {
  Rng rng(63);
  const size_t dim = 6;
  const size_t n_classes = 5;
  const MlpParams net = identity_net(dim);

  // prototypes unrelated to the data: accuracy should sit near 1/C
  PrototypeBank bank(dim);
  for (uint32_t c = 0; c < n_classes; ++c) bank.install_class(c, random_vec(rng, dim), 0);

  std::vector<SessionDataset> splits(1);
  splits[0].session_index = 0;
  const size_t n = 4000;
  for (size_t i = 0; i < n; ++i) {
    splits[0].features.push_back(random_vec(rng, dim, 5.0));
    splits[0].labels.push_back(static_cast<uint32_t>(rng.uniform_int(n_classes)));
  }
  splits[0].finalize();

  const SessionEval ev = session_accuracy(bank, net, splits, 0);
  const double p = 1.0 / static_cast<double>(n_classes);
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(n));
  CHECK(std::abs(ev.pooled - p) < 3.0 * sigma + 1e-12);
}

TEST_CASE("empty split becomes an absent cell, pooled over the rest") {
  const size_t dim = 2;
  const MlpParams net = identity_net(dim);
  PrototypeBank bank(dim);
  bank.install_class(0, {1.0, 0.0}, 0);
  bank.install_class(1, {0.0, 1.0}, 1);

  std::vector<SessionDataset> splits(2);
  splits[0].session_index = 0;
  splits[0].features = {{1.0, 0.1}, {0.9, 0.0}};
  splits[0].labels = {0, 0};
  splits[0].finalize();
  splits[1].session_index = 1;
  splits[1].finalize();  // empty

  const SessionEval ev = session_accuracy(bank, net, splits, 1);
  CHECK(std::isnan(ev.per_split[1]));
  CHECK(ev.pooled == 1.0);
  CHECK(ev.total == 2);
}

TEST_CASE("evaluation is identical for any PQ_THREADS setting") {
  Rng rng(64);
  const size_t dim = 4;
  const MlpParams net = identity_net(dim);
  PrototypeBank bank(dim);
  for (uint32_t c = 0; c < 4; ++c) bank.install_class(c, random_vec(rng, dim), 0);

  std::vector<SessionDataset> splits(1);
  splits[0].session_index = 0;
  for (int i = 0; i < 500; ++i) {
    splits[0].features.push_back(random_vec(rng, dim, 3.0));
    splits[0].labels.push_back(static_cast<uint32_t>(rng.uniform_int(4)));
  }
  splits[0].finalize();

  setenv("PQ_THREADS", "1", 1);
  const SessionEval serial = session_accuracy(bank, net, splits, 0);
  setenv("PQ_THREADS", "8", 1);
  const SessionEval parallel = session_accuracy(bank, net, splits, 0);
  unsetenv("PQ_THREADS");
  CHECK(serial.pooled == parallel.pooled);
  CHECK(serial.correct == parallel.correct);
}

TEST_CASE("backward_transfer formula and edge cases") {
  // no forgetting
  std::vector<std::vector<double>> flat = {{0.9}, {0.9, 0.8}, {0.9, 0.8, 0.7}};
  CHECK(backward_transfer(flat) == Catch::Approx(0.0).margin(1e-15));

  // worked example: diag (0.9, 0.8), final row (0.7, 0.6)
  std::vector<std::vector<double>> drop = {{0.9}, {0.5, 0.8}, {0.7, 0.6, 0.5}};
  CHECK(backward_transfer(drop) == Catch::Approx(-0.2));

  // improvement gives positive BWT
  std::vector<std::vector<double>> gain = {{0.5}, {0.7, 0.6}};
  CHECK(backward_transfer(gain) == Catch::Approx(0.2));

  CHECK(std::isnan(backward_transfer({{0.9}})));
  CHECK(std::isnan(backward_transfer({})));
}

TEST_CASE("report JSON round-trips") {
  RunReport r;
  r.seed = 77;
  r.accuracy = {{0.9}, {0.7, 0.85}};
  r.accuracy[1].push_back(std::numeric_limits<double>::quiet_NaN());
  r.cumulative = {0.9, 0.8};
  r.bwt = -0.05;
  r.memory_vectors = 12;
  r.memory_stat_means = 12;
  r.memory_stat_matrices = 12;
  r.config_echo = {{"alpha1", 1.0}, {"loss_mode", "quadruplet"}};

  const auto j = report_to_json(r);
  const RunReport back = report_from_json(nlohmann::json::parse(j.dump()));
  CHECK(report_to_json(back).dump() == j.dump());
  CHECK(back.seed == 77);
  CHECK(std::isnan(back.accuracy[1][2]));
  CHECK(back.bwt == -0.05);

  const std::string csv = accuracy_csv(r);
  CHECK(csv.find("session,cumulative,r1,r2") == 0);
  CHECK(csv.find("\n1,") != std::string::npos);
}
