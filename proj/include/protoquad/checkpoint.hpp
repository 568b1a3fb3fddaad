#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "protoquad/bank.hpp"
#include "protoquad/mlp.hpp"
#include "protoquad/optim.hpp"

namespace protoquad {

namespace detail {

// All multi-byte fields are little-endian regardless of host order.
inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  const uint64_t bits = std::bit_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }

  void magic(const char* expect) {
    const size_t n = std::strlen(expect);
    need(n);
    if (data_.compare(pos_, n, expect) != 0)
      throw io_error(path_ + ": bad magic (expected " + expect + ")");
    pos_ += n;
  }

  uint8_t byte() {
    need(1);
    return static_cast<uint8_t>(data_[pos_++]);
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(size_t n) {
    if (pos_ + n > data_.size()) throw io_error(path_ + ": truncated file");
  }
  const std::string& data_;
  std::string path_;
  size_t pos_ = 0;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void spill(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw io_error("write failed: " + path);
}

}  // namespace detail

// Network checkpoint: magic "PQNET1", u32 layer count, then per layer
// u32 rows / u32 cols, row-major f64 weights, f64 bias; then the head the
// same way; then the freeze mask packed LSB-first over the flattened
// parameters (per layer, weights then bias).
inline void save_net(const std::string& path, const MlpParams& params, const OutputHead& head,
                     const FreezeMask& mask) {
  require(mask.layers.size() == params.layers.size(), "save_net: mask/params mismatch");
  std::string out = "PQNET1";
  detail::put_u32(out, static_cast<uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    detail::put_u32(out, static_cast<uint32_t>(l.weights.rows));
    detail::put_u32(out, static_cast<uint32_t>(l.weights.cols));
    for (double v : l.weights.data) detail::put_f64(out, v);
    for (double v : l.bias) detail::put_f64(out, v);
  }
  detail::put_u32(out, static_cast<uint32_t>(head.weights.rows));
  detail::put_u32(out, static_cast<uint32_t>(head.weights.cols));
  for (double v : head.weights.data) detail::put_f64(out, v);

  uint8_t acc = 0;
  int nbits = 0;
  auto push_bit = [&](uint8_t bit) {
    acc |= static_cast<uint8_t>((bit & 1) << nbits);
    if (++nbits == 8) {
      out.push_back(static_cast<char>(acc));
      acc = 0;
      nbits = 0;
    }
  };
  for (const auto& l : mask.layers) {
    for (uint8_t b : l.weights) push_bit(b);
    for (uint8_t b : l.bias) push_bit(b);
  }
  if (nbits > 0) out.push_back(static_cast<char>(acc));
  detail::spill(path, out);
}

struct NetCheckpoint {
  MlpParams params;
  OutputHead head;
  FreezeMask mask;
};

inline NetCheckpoint load_net(const std::string& path) {
  const std::string data = detail::slurp(path);
  detail::ByteReader r(data, path);
  r.magic("PQNET1");

  NetCheckpoint ck;
  const uint32_t layers = r.u32();
  ck.params.layers.resize(layers);
  for (uint32_t l = 0; l < layers; ++l) {
    const uint32_t rows = r.u32();
    const uint32_t cols = r.u32();
    ck.params.layers[l].weights = Mat(rows, cols);
    for (auto& v : ck.params.layers[l].weights.data) v = r.f64();
    ck.params.layers[l].bias.resize(rows);
    for (auto& v : ck.params.layers[l].bias) v = r.f64();
  }
  const uint32_t hrows = r.u32();
  const uint32_t hcols = r.u32();
  ck.head.weights = Mat(hrows, hcols);
  for (auto& v : ck.head.weights.data) v = r.f64();

  ck.mask.layers.resize(layers);
  uint8_t acc = 0;
  int nbits = 0;
  auto pull_bit = [&]() {
    if (nbits == 0) {
      acc = r.byte();
      nbits = 8;
    }
    const uint8_t bit = acc & 1;
    acc >>= 1;
    --nbits;
    return bit;
  };
  size_t trainable = 0, total = 0;
  for (uint32_t l = 0; l < layers; ++l) {
    ck.mask.layers[l].weights.resize(ck.params.layers[l].weights.data.size());
    for (auto& b : ck.mask.layers[l].weights) b = pull_bit();
    ck.mask.layers[l].bias.resize(ck.params.layers[l].bias.size());
    for (auto& b : ck.mask.layers[l].bias) b = pull_bit();
    trainable += std::count(ck.mask.layers[l].weights.begin(), ck.mask.layers[l].weights.end(),
                            uint8_t{1});
    trainable += std::count(ck.mask.layers[l].bias.begin(), ck.mask.layers[l].bias.end(),
                            uint8_t{1});
    total += ck.mask.layers[l].weights.size() + ck.mask.layers[l].bias.size();
  }
  ck.mask.trainable_fraction =
      total == 0 ? 1.0 : static_cast<double>(trainable) / static_cast<double>(total);
  return ck;
}

// Bank snapshot: magic "PQBANK1", u32 class count, u32 dimension M, then per
// class u32 class_id, u32 copy count, the copies (M f64 each), the footprint,
// the running mean, and the row-major running covariance.
inline void save_bank(const std::string& path, const PrototypeBank& bank) {
  std::string out = "PQBANK1";
  detail::put_u32(out, static_cast<uint32_t>(bank.class_count()));
  detail::put_u32(out, static_cast<uint32_t>(bank.dim()));
  for (const auto& h : bank.classes()) {
    detail::put_u32(out, h.class_id);
    detail::put_u32(out, static_cast<uint32_t>(h.copies.size()));
    for (const auto& c : h.copies)
      for (double v : c) detail::put_f64(out, v);
    for (double v : h.initial_footprint) detail::put_f64(out, v);
    for (double v : h.running_mean) detail::put_f64(out, v);
    for (double v : h.running_cov.data) detail::put_f64(out, v);
  }
  detail::spill(path, out);
}

inline PrototypeBank load_bank(const std::string& path) {
  const std::string data = detail::slurp(path);
  detail::ByteReader r(data, path);
  r.magic("PQBANK1");
  const uint32_t classes = r.u32();
  const uint32_t dim = r.u32();
  PrototypeBank bank(dim);
  for (uint32_t c = 0; c < classes; ++c) {
    ClassHistory h;
    h.class_id = r.u32();
    const uint32_t copies = r.u32();
    if (copies == 0) throw io_error(path + ": class with no copies");
    for (uint32_t i = 0; i < copies; ++i) {
      Vec v(dim);
      for (auto& x : v) x = r.f64();
      h.copies.push_back(std::move(v));
    }
    h.initial_footprint.resize(dim);
    for (auto& x : h.initial_footprint) x = r.f64();
    h.running_mean.resize(dim);
    for (auto& x : h.running_mean) x = r.f64();
    h.running_cov = Mat(dim, dim);
    for (auto& x : h.running_cov.data) x = r.f64();
    // the snapshot stores no flattened statistics; they refresh on the next
    // smoothing round
    h.flattened_mean = h.running_mean;
    h.flattened_cov = h.running_cov;
    bank.classes().push_back(std::move(h));
  }
  if (!r.at_end()) throw io_error(path + ": trailing bytes");
  return bank;
}

}  // namespace protoquad
