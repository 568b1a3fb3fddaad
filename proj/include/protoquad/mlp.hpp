#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "protoquad/linalg.hpp"
#include "protoquad/rng.hpp"

namespace protoquad {

// One fully connected layer: out x in weights plus a bias per output unit.
struct LayerParams {
  Mat weights;
  Vec bias;
};

// Embedding network f_theta. Hidden layers use tanh, the final layer is
// linear, so the embedding itself is unbounded.
struct MlpParams {
  std::vector<LayerParams> layers;

  size_t input_dim() const { return layers.empty() ? 0 : layers.front().weights.cols; }
  size_t embedding_dim() const { return layers.empty() ? 0 : layers.back().weights.rows; }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.weights.data.size() + l.bias.size();
    return n;
  }
};

using MlpGrads = MlpParams;

// Xavier-uniform init in +-sqrt(6/(fan_in+fan_out)), biases zero.
inline MlpParams make_mlp(const std::vector<size_t>& dims, Rng& rng) {
  require(dims.size() >= 2, "make_mlp: need at least input and output dims");
  MlpParams p;
  p.layers.resize(dims.size() - 1);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const size_t fan_in = dims[l];
    const size_t fan_out = dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    p.layers[l].weights = Mat(fan_out, fan_in);
    for (auto& w : p.layers[l].weights.data) w = bound * (2.0 * rng.uniform() - 1.0);
    p.layers[l].bias.assign(fan_out, 0.0);
  }
  return p;
}

inline MlpGrads zeros_like(const MlpParams& p) {
  MlpGrads g;
  g.layers.resize(p.layers.size());
  for (size_t l = 0; l < p.layers.size(); ++l) {
    g.layers[l].weights = Mat(p.layers[l].weights.rows, p.layers[l].weights.cols);
    g.layers[l].bias.assign(p.layers[l].bias.size(), 0.0);
  }
  return g;
}

inline void accumulate(MlpGrads& acc, const MlpGrads& g, double scale = 1.0) {
  require(acc.layers.size() == g.layers.size(), "accumulate: layer count mismatch");
  for (size_t l = 0; l < g.layers.size(); ++l) {
    for (size_t i = 0; i < g.layers[l].weights.data.size(); ++i)
      acc.layers[l].weights.data[i] += scale * g.layers[l].weights.data[i];
    for (size_t i = 0; i < g.layers[l].bias.size(); ++i)
      acc.layers[l].bias[i] += scale * g.layers[l].bias[i];
  }
}

// Per-layer activations recorded by forward for the matching backward call.
// activations[0] is the input; activations[l+1] is layer l's output.
struct ForwardCache {
  std::vector<Vec> activations;
};

inline Vec forward(const MlpParams& p, const Vec& x, ForwardCache* cache = nullptr) {
  require(!p.layers.empty(), "forward: empty network");
  require(x.size() == p.input_dim(), "forward: input dimension mismatch");
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(p.layers.size() + 1);
    cache->activations.push_back(x);
  }
  Vec a = x;
  for (size_t l = 0; l < p.layers.size(); ++l) {
    Vec z = matvec(p.layers[l].weights, a);
    for (size_t i = 0; i < z.size(); ++i) z[i] += p.layers[l].bias[i];
    if (l + 1 < p.layers.size())
      for (double& v : z) v = std::tanh(v);
    a = std::move(z);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

// Reverse-mode pass. grad_embedding is dL/d(output); returns dL/d(params).
inline MlpGrads backward(const MlpParams& p, const ForwardCache& cache,
                         const Vec& grad_embedding) {
  require(cache.activations.size() == p.layers.size() + 1,
          "backward: cache does not match network depth");
  require(grad_embedding.size() == p.embedding_dim(),
          "backward: upstream gradient dimension mismatch");
  for (size_t l = 0; l < p.layers.size(); ++l)
    require(cache.activations[l].size() == p.layers[l].weights.cols &&
                cache.activations[l + 1].size() == p.layers[l].weights.rows,
            "backward: stale cache");

  MlpGrads g = zeros_like(p);
  Vec delta = grad_embedding;  // final layer is linear
  for (size_t l = p.layers.size(); l-- > 0;) {
    const Vec& in = cache.activations[l];
    auto& gl = g.layers[l];
    for (size_t i = 0; i < delta.size(); ++i) {
      const double di = delta[i];
      gl.bias[i] = di;
      if (di == 0.0) continue;
      double* row = &gl.weights.data[i * gl.weights.cols];
      for (size_t j = 0; j < in.size(); ++j) row[j] += di * in[j];
    }
    if (l == 0) break;
    const Mat& w = p.layers[l].weights;
    Vec prev(w.cols, 0.0);
    for (size_t i = 0; i < w.rows; ++i) {
      const double di = delta[i];
      if (di == 0.0) continue;
      const double* row = &w.data[i * w.cols];
      for (size_t j = 0; j < w.cols; ++j) prev[j] += row[j] * di;
    }
    // chain through tanh of layer l-1
    const Vec& act = cache.activations[l];
    for (size_t j = 0; j < prev.size(); ++j) prev[j] *= 1.0 - act[j] * act[j];
    delta = std::move(prev);
  }
  return g;
}

// Linear classification head over the embedding; trained in the base session
// only. d rows, one per class the stream can ever contain.
struct OutputHead {
  Mat weights;  // d x M
};

inline OutputHead make_head(size_t class_capacity, size_t embedding_dim, Rng& rng) {
  OutputHead h;
  const double bound = std::sqrt(6.0 / static_cast<double>(class_capacity + embedding_dim));
  h.weights = Mat(class_capacity, embedding_dim);
  for (auto& w : h.weights.data) w = bound * (2.0 * rng.uniform() - 1.0);
  return h;
}

inline Vec head_logits(const OutputHead& head, const Vec& z) {
  return matvec(head.weights, z);
}

struct CrossEntropyResult {
  double loss = 0.0;
  Vec grad_logits;
};

// loss = -log_softmax(logits)[label]; grad = softmax(logits) - one_hot(label)
inline CrossEntropyResult cross_entropy_loss(const Vec& logits, size_t label) {
  require(label < logits.size(), "cross_entropy_loss: label out of range");
  CrossEntropyResult r;
  const Vec ls = log_softmax(logits);
  r.loss = -ls[label];
  r.grad_logits.resize(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) r.grad_logits[i] = std::exp(ls[i]);
  r.grad_logits[label] -= 1.0;
  return r;
}

}  // namespace protoquad
