#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "protoquad/linalg.hpp"
#include "protoquad/mlp.hpp"
#include "protoquad/sampler.hpp"

namespace protoquad {

struct Margins {
  double alpha1 = 1.0;
  double alpha2 = 0.5;
};

enum class LossMode { kQuadruplet, kTriplet, kContrastive };

inline const char* to_string(LossMode m) {
  switch (m) {
    case LossMode::kQuadruplet: return "quadruplet";
    case LossMode::kTriplet: return "triplet";
    case LossMode::kContrastive: return "contrastive";
  }
  return "?";
}

struct QuadrupletResult {
  double value = 0.0;
  Vec grad_query;
  Vec grad_positive;
  Vec grad_negative;
  Vec grad_second_negative;
};

namespace detail {

// d ||a-b|| / da, zero at coincident points (subgradient choice).
inline Vec distance_grad(const Vec& a, const Vec& b, double dist) {
  Vec g(a.size(), 0.0);
  if (dist < 1e-12) return g;
  for (size_t i = 0; i < a.size(); ++i) g[i] = (a[i] - b[i]) / dist;
  return g;
}

}  // namespace detail

// Embedding loss g for one (query, positive, negative, second-negative)
// quadruplet:
//   d1 = [d(zq,ckp) - d(zq,ckn) + a1]+      (clamp dropped when hinge=false)
//   d2 = [d(zq,ckp) - d(ckn,cknn) + a2]+
// quadruplet: g = d1 + d2; triplet: g = d1;
// contrastive: g = d(zq,ckp)^2 + [a1 - d(zq,ckn)]+^2.
// Gradients are zero through clamped branches.
inline QuadrupletResult quadruplet_terms(const Vec& zq, const Vec& c_kp, const Vec& c_kn,
                                         const Vec& c_knn, const Margins& m, LossMode mode,
                                         bool hinge = true) {
  require(zq.size() == c_kp.size() && zq.size() == c_kn.size() && zq.size() == c_knn.size(),
          "quadruplet_terms: dimension mismatch");
  QuadrupletResult r;
  const size_t n = zq.size();
  r.grad_query.assign(n, 0.0);
  r.grad_positive.assign(n, 0.0);
  r.grad_negative.assign(n, 0.0);
  r.grad_second_negative.assign(n, 0.0);

  const double dp = euclidean_distance(zq, c_kp);
  const double dn = euclidean_distance(zq, c_kn);

  if (mode == LossMode::kContrastive) {
    r.value = dp * dp;
    for (size_t i = 0; i < n; ++i) {
      r.grad_query[i] += 2.0 * (zq[i] - c_kp[i]);
      r.grad_positive[i] -= 2.0 * (zq[i] - c_kp[i]);
    }
    const double probe = m.alpha1 - dn;
    if (probe > 0.0) {
      r.value += probe * probe;
      const Vec gn = detail::distance_grad(zq, c_kn, dn);
      for (size_t i = 0; i < n; ++i) {
        r.grad_query[i] -= 2.0 * probe * gn[i];
        r.grad_negative[i] += 2.0 * probe * gn[i];
      }
    }
    return r;
  }

  const Vec gp = detail::distance_grad(zq, c_kp, dp);
  const Vec gn = detail::distance_grad(zq, c_kn, dn);

  const double d1_raw = dp - dn + m.alpha1;
  if (!hinge || d1_raw > 0.0) {
    r.value += hinge ? std::max(0.0, d1_raw) : d1_raw;
    for (size_t i = 0; i < n; ++i) {
      r.grad_query[i] += gp[i] - gn[i];
      r.grad_positive[i] -= gp[i];
      r.grad_negative[i] += gn[i];
    }
  }

  if (mode == LossMode::kQuadruplet) {
    const double dnn = euclidean_distance(c_kn, c_knn);
    const double d2_raw = dp - dnn + m.alpha2;
    if (!hinge || d2_raw > 0.0) {
      r.value += hinge ? std::max(0.0, d2_raw) : d2_raw;
      const Vec gnn = detail::distance_grad(c_kn, c_knn, dnn);
      for (size_t i = 0; i < n; ++i) {
        r.grad_query[i] += gp[i];
        r.grad_positive[i] -= gp[i];
        r.grad_negative[i] -= gnn[i];
        r.grad_second_negative[i] += gnn[i];
      }
    }
  }
  return r;
}

struct EpisodeLoss {
  double value = 0.0;  // mean over the episode's N^C * N_Q queries
  MlpGrads grads;
};

// Negative log-likelihood of the softmax over per-class embedding losses,
// averaged over all queries. The posterior runs over the episode's classes,
// each scored with its own sampled negative pair. Prototypes are constants
// here; gradients flow into the extractor through the query embeddings only.
inline EpisodeLoss episode_nll(const Episode& ep, const MlpParams& params, const Margins& m,
                               LossMode mode, bool hinge = true) {
  require(!ep.classes.empty(), "episode_nll: empty episode");
  const size_t n_classes = ep.classes.size();

  EpisodeLoss out;
  out.grads = zeros_like(params);
  size_t n_queries = 0;

  ForwardCache cache;
  for (size_t k = 0; k < n_classes; ++k) {
    for (const Vec& xq : ep.classes[k].query_features) {
      const Vec zq = forward(params, xq, &cache);
      if (!all_finite(zq)) throw numerical_error("non-finite query embedding");

      std::vector<QuadrupletResult> per_class(n_classes);
      Vec neg_g(n_classes);
      for (size_t j = 0; j < n_classes; ++j) {
        const auto& c = ep.classes[j];
        per_class[j] = quadruplet_terms(zq, c.positive_prototype, c.negative_prototype,
                                        c.second_negative_prototype, m, mode, hinge);
        if (!std::isfinite(per_class[j].value))
          throw numerical_error("non-finite embedding loss");
        neg_g[j] = -per_class[j].value;
      }

      const Vec p = softmax(neg_g);
      double lse = 0.0;
      {
        const double mx = *std::max_element(neg_g.begin(), neg_g.end());
        double s = 0.0;
        for (double v : neg_g) s += std::exp(v - mx);
        lse = mx + std::log(s);
      }
      out.value += per_class[k].value + lse;

      Vec dz(zq.size(), 0.0);
      for (size_t j = 0; j < n_classes; ++j) {
        const double w = (j == k ? 1.0 : 0.0) - p[j];
        if (w != 0.0) axpy(w, per_class[j].grad_query, dz);
      }
      accumulate(out.grads, backward(params, cache, dz));
      ++n_queries;
    }
  }

  require(n_queries > 0, "episode_nll: episode has no queries");
  const double inv = 1.0 / static_cast<double>(n_queries);
  out.value *= inv;
  if (!std::isfinite(out.value)) throw numerical_error("non-finite episode loss");
  MlpGrads scaled_grads = zeros_like(params);
  accumulate(scaled_grads, out.grads, inv);
  out.grads = std::move(scaled_grads);

  // -log softmax is bounded below by -log(N^C)
  require(out.value >= -std::log(static_cast<double>(n_classes)) - 1e-9,
          "episode_nll: loss below the -log(N^C) bound");
  return out;
}

}  // namespace protoquad
