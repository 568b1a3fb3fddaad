#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "protoquad/mlp.hpp"

namespace protoquad {

// Per-scalar trainability flags, parallel to MlpParams. true = trainable.
// High-magnitude weights carry the knowledge of previous sessions and stay
// frozen; only the low-magnitude remainder adapts to new classes.
struct FreezeMask {
  struct Layer {
    std::vector<uint8_t> weights;
    std::vector<uint8_t> bias;
  };
  std::vector<Layer> layers;
  double trainable_fraction = 1.0;

  size_t trainable_count() const {
    size_t n = 0;
    for (const auto& l : layers) {
      n += std::count(l.weights.begin(), l.weights.end(), uint8_t{1});
      n += std::count(l.bias.begin(), l.bias.end(), uint8_t{1});
    }
    return n;
  }
};

namespace detail {

// Marks the round(fraction * n) smallest-magnitude entries trainable.
// Ties break by flat index ascending.
inline void mark_trainable(const std::vector<double>& values, double fraction,
                           std::vector<uint8_t>& out) {
  const size_t n = values.size();
  require(n > 0, "select_freeze_mask: empty parameter tensor");
  out.assign(n, 0);
  const size_t keep = std::min<size_t>(n, static_cast<size_t>(std::llround(fraction * static_cast<double>(n))));
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const double ma = std::abs(values[a]);
    const double mb = std::abs(values[b]);
    return ma != mb ? ma < mb : a < b;
  });
  for (size_t i = 0; i < keep; ++i) out[order[i]] = 1;
}

}  // namespace detail

// The quantile is taken per parameter tensor (each layer's weight matrix and
// bias vector form their own pools), matching per-layer threshold selection.
inline FreezeMask select_freeze_mask(const MlpParams& p, double trainable_fraction) {
  require(trainable_fraction > 0.0 && trainable_fraction <= 1.0,
          "select_freeze_mask: trainable_fraction must be in (0,1]");
  FreezeMask mask;
  mask.trainable_fraction = trainable_fraction;
  mask.layers.resize(p.layers.size());
  for (size_t l = 0; l < p.layers.size(); ++l) {
    detail::mark_trainable(p.layers[l].weights.data, trainable_fraction,
                           mask.layers[l].weights);
    detail::mark_trainable(p.layers[l].bias, trainable_fraction, mask.layers[l].bias);
  }
  return mask;
}

inline FreezeMask full_trainable(const MlpParams& p) {
  FreezeMask mask;
  mask.trainable_fraction = 1.0;
  mask.layers.resize(p.layers.size());
  for (size_t l = 0; l < p.layers.size(); ++l) {
    mask.layers[l].weights.assign(p.layers[l].weights.data.size(), 1);
    mask.layers[l].bias.assign(p.layers[l].bias.size(), 1);
  }
  return mask;
}

struct Milestone {
  size_t epoch = 0;
  double multiplier = 1.0;
};

struct SgdConfig {
  double initial_lr = 2.0;
  std::vector<Milestone> milestones{{25, 0.2}, {35, 0.2}, {45, 0.2}, {55, 0.2}};
  double weight_decay = 1e-5;
  double momentum_stat = 0.9;  // running-statistic EMA coefficient, mirrored by the bank

  void validate() const {
    require(initial_lr > 0.0, "SgdConfig: initial_lr must be positive");
    require(weight_decay >= 0.0, "SgdConfig: weight_decay must be nonnegative");
    require(momentum_stat >= 0.0 && momentum_stat <= 1.0,
            "SgdConfig: momentum_stat must be in [0,1]");
    for (size_t i = 0; i < milestones.size(); ++i) {
      require(milestones[i].multiplier > 0.0 && milestones[i].multiplier <= 1.0,
              "SgdConfig: milestone multipliers must be in (0,1]");
      if (i > 0)
        require(milestones[i].epoch > milestones[i - 1].epoch,
                "SgdConfig: milestone epochs must be strictly increasing");
    }
  }
};

// initial_lr times the product of multipliers of all milestones already passed.
inline double learning_rate(const SgdConfig& cfg, size_t epoch) {
  double lr = cfg.initial_lr;
  for (const auto& m : cfg.milestones)
    if (epoch >= m.epoch) lr *= m.multiplier;
  return lr;
}

// w -= lr * (grad + weight_decay * w) on trainable entries; frozen entries
// are never touched, so they stay bit-for-bit identical.
inline void sgd_step(MlpParams& p, const MlpGrads& g, const FreezeMask& mask,
                     size_t epoch, const SgdConfig& cfg) {
  require(p.layers.size() == g.layers.size() && p.layers.size() == mask.layers.size(),
          "sgd_step: shape mismatch");
  const double lr = learning_rate(cfg, epoch);
  for (size_t l = 0; l < p.layers.size(); ++l) {
    auto& w = p.layers[l].weights.data;
    const auto& gw = g.layers[l].weights.data;
    const auto& mw = mask.layers[l].weights;
    require(w.size() == gw.size() && w.size() == mw.size(), "sgd_step: weight shape mismatch");
    for (size_t i = 0; i < w.size(); ++i)
      if (mw[i]) w[i] -= lr * (gw[i] + cfg.weight_decay * w[i]);

    auto& b = p.layers[l].bias;
    const auto& gb = g.layers[l].bias;
    const auto& mb = mask.layers[l].bias;
    require(b.size() == gb.size() && b.size() == mb.size(), "sgd_step: bias shape mismatch");
    for (size_t i = 0; i < b.size(); ++i)
      if (mb[i]) b[i] -= lr * (gb[i] + cfg.weight_decay * b[i]);
  }
}

}  // namespace protoquad
