#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "protoquad/checkpoint.hpp"

using namespace protoquad;
using testutil::random_vec;

namespace {

std::string tmp_file(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("net checkpoint round-trips bitwise") {
  Rng rng(71);
  MlpParams params = make_mlp({5, 7, 4}, rng);
  for (auto& l : params.layers)
    for (auto& b : l.bias) b = rng.normal();
  OutputHead head = make_head(9, 4, rng);
  const FreezeMask mask = select_freeze_mask(params, 0.3);

  const std::string path = tmp_file("pq_net_test.pqnet");
  save_net(path, params, head, mask);
  const NetCheckpoint ck = load_net(path);

  REQUIRE(ck.params.layers.size() == params.layers.size());
  for (size_t l = 0; l < params.layers.size(); ++l) {
    CHECK(ck.params.layers[l].weights.data == params.layers[l].weights.data);
    CHECK(ck.params.layers[l].bias == params.layers[l].bias);
    CHECK(ck.mask.layers[l].weights == mask.layers[l].weights);
    CHECK(ck.mask.layers[l].bias == mask.layers[l].bias);
  }
  CHECK(ck.head.weights.data == head.weights.data);
  std::filesystem::remove(path);
}

TEST_CASE("net checkpoint layout starts with the magic and little-endian counts") {
  Rng rng(72);
  MlpParams params = make_mlp({2, 3}, rng);
  OutputHead head = make_head(4, 3, rng);
  const std::string path = tmp_file("pq_net_layout.pqnet");
  save_net(path, params, head, full_trainable(params));

  std::ifstream in(path, std::ios::binary);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(data.size() > 18);
  CHECK(data.substr(0, 6) == "PQNET1");
  // u32 layer count = 1, little-endian
  CHECK(static_cast<unsigned char>(data[6]) == 1);
  CHECK(static_cast<unsigned char>(data[7]) == 0);
  // first layer rows=3, cols=2
  CHECK(static_cast<unsigned char>(data[10]) == 3);
  CHECK(static_cast<unsigned char>(data[14]) == 2);
  std::filesystem::remove(path);
}

TEST_CASE("bank snapshot round-trips") {
  Rng rng(73);
  PrototypeBank bank(6);
  for (uint32_t c = 0; c < 4; ++c) {
    bank.install_class(c * 3, random_vec(rng, 6), 0);
  }
  BankConfig cfg;
  cfg.b_max = 3;
  for (int round = 0; round < 4; ++round) calibrate_and_update(bank, cfg);

  const std::string path = tmp_file("pq_bank_test.pqbank");
  save_bank(path, bank);
  const PrototypeBank loaded = load_bank(path);

  REQUIRE(loaded.class_count() == bank.class_count());
  CHECK(loaded.dim() == 6);
  for (size_t i = 0; i < bank.class_count(); ++i) {
    const auto& a = bank.classes()[i];
    const auto& b = loaded.classes()[i];
    CHECK(a.class_id == b.class_id);
    REQUIRE(a.copies.size() == b.copies.size());
    for (size_t c = 0; c < a.copies.size(); ++c) CHECK(a.copies[c] == b.copies[c]);
    CHECK(a.initial_footprint == b.initial_footprint);
    CHECK(a.running_mean == b.running_mean);
    CHECK(a.running_cov.data == b.running_cov.data);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loaders reject corrupt files") {
  const std::string path = tmp_file("pq_corrupt.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTMAGIC";
  }
  CHECK_THROWS_AS(load_net(path), io_error);
  CHECK_THROWS_AS(load_bank(path), io_error);
  {
    std::ofstream out(path, std::ios::binary);
    out << "PQNET1";  // truncated right after the magic
  }
  CHECK_THROWS_AS(load_net(path), io_error);
  CHECK_THROWS_AS(load_net(tmp_file("pq_missing_file.bin")), io_error);
  std::filesystem::remove(path);
}
