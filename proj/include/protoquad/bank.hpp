#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "protoquad/linalg.hpp"

namespace protoquad {

enum class KernelKind { kDelta, kUniform, kGaussian };

// Symmetric kernel over copy-age positions within one class history.
// gap is the integer position distance from the newest entry.
struct SmoothingKernel {
  KernelKind kind = KernelKind::kGaussian;
  double bandwidth = 1.0;

  double weight(size_t gap) const {
    switch (kind) {
      case KernelKind::kDelta:
        return gap == 0 ? 1.0 : 0.0;
      case KernelKind::kUniform:
        return 1.0;
      case KernelKind::kGaussian: {
        const double g = static_cast<double>(gap) / bandwidth;
        return std::exp(-0.5 * g * g);
      }
    }
    return 0.0;
  }
};

struct BankConfig {
  size_t b_max = 4;
  // Retention depth per session index (0-based). Empty entries fall back to
  // the default schedule: the base session keeps b_max copies, each later
  // session one fewer, down to 1.
  std::vector<size_t> b_schedule;
  double lambda = 0.1;      // prototype refinement step size
  double ridge = 1e-6;      // added to covariance roots; histories are rank-deficient
  double ema_momentum = 0.9;
  SmoothingKernel kernel;
  double anchor_sign = 1.0;  // sign of the footprint-similarity term in the update

  size_t retention_depth(size_t session) const {
    size_t depth;
    if (session < b_schedule.size()) {
      depth = b_schedule[session];
    } else {
      depth = b_max > session ? b_max - session : 1;
    }
    return depth < 1 ? 1 : depth;
  }

  void validate() const {
    require(b_max >= 1, "BankConfig: b_max must be at least 1");
    require(lambda >= 0.0, "BankConfig: lambda must be nonnegative");
    require(ridge > 0.0, "BankConfig: ridge must be positive");
    require(ema_momentum >= 0.0 && ema_momentum < 1.0 + 1e-15,
            "BankConfig: ema_momentum must be in [0,1]");
    require(kernel.bandwidth > 0.0, "BankConfig: kernel bandwidth must be positive");
    for (size_t d : b_schedule)
      require(d >= 1 && d <= b_max, "BankConfig: schedule depths must be in [1, b_max]");
  }
};

// Everything the bank remembers about one class: the rolling prototype
// copies, the immutable initial footprint, running statistics over the
// copies, per-age snapshots of those statistics, and their kernel-smoothed
// (flattened) versions.
struct ClassHistory {
  uint32_t class_id = 0;
  size_t session_created = 0;
  std::deque<Vec> copies;  // newest last
  Vec initial_footprint;
  Vec running_mean;
  Mat running_cov;
  std::deque<std::pair<Vec, Mat>> stats_history;  // newest last, one per past append
  Vec flattened_mean;
  Mat flattened_cov;

  const Vec& newest() const {
    require(!copies.empty(), "ClassHistory: no copies stored");
    return copies.back();
  }
};

class PrototypeBank {
 public:
  explicit PrototypeBank(size_t dim) : dim_(dim) {}

  size_t dim() const { return dim_; }
  size_t class_count() const { return classes_.size(); }
  std::vector<ClassHistory>& classes() { return classes_; }
  const std::vector<ClassHistory>& classes() const { return classes_; }

  const ClassHistory* find(uint32_t class_id) const {
    for (const auto& c : classes_)
      if (c.class_id == class_id) return &c;
    return nullptr;
  }

  // Registers a freshly seen class: the prototype becomes the first copy,
  // the footprint, and the seed of the running statistics.
  void install_class(uint32_t class_id, const Vec& prototype, size_t session) {
    require(prototype.size() == dim_, "install_class: dimension mismatch");
    require(all_finite(prototype), "install_class: non-finite prototype");
    require(find(class_id) == nullptr, "install_class: class already present");
    ClassHistory h;
    h.class_id = class_id;
    h.session_created = session;
    h.copies.push_back(prototype);
    h.initial_footprint = prototype;
    h.running_mean = prototype;
    h.running_cov = Mat(dim_, dim_);
    h.flattened_mean = prototype;
    h.flattened_cov = Mat(dim_, dim_);
    classes_.push_back(std::move(h));
  }

  // Newest calibrated copy; the classification anchor for this class.
  const Vec& prototype_of(uint32_t class_id) const {
    const ClassHistory* h = find(class_id);
    require(h != nullptr, "prototype_of: unknown class " + std::to_string(class_id));
    return h->newest();
  }

  // Class ids created before the given session (negative-prototype pool).
  std::vector<uint32_t> classes_before(size_t session) const {
    std::vector<uint32_t> out;
    for (const auto& c : classes_)
      if (c.session_created < session) out.push_back(c.class_id);
    return out;
  }

 private:
  size_t dim_;
  std::vector<ClassHistory> classes_;
};

// Arithmetic mean of the embeddings (the class prototype).
inline Vec compute_prototype(const std::vector<Vec>& embeddings) {
  require(!embeddings.empty(), "compute_prototype: empty embedding list");
  Vec mean(embeddings.front().size(), 0.0);
  for (const auto& e : embeddings) {
    require(e.size() == mean.size(), "compute_prototype: dimension mismatch");
    axpy(1.0, e, mean);
  }
  const double inv = 1.0 / static_cast<double>(embeddings.size());
  for (double& v : mean) v *= inv;
  return mean;
}

// Batch mean/covariance over the stored copies, blended into the running
// statistics by exponential moving average: new = m*old + (1-m)*batch.
inline void update_running_stats(ClassHistory& h, const BankConfig& cfg) {
  require(!h.copies.empty(), "update_running_stats: empty history");
  const size_t m = h.copies.front().size();
  Vec mean(m, 0.0);
  for (const auto& c : h.copies) axpy(1.0, c, mean);
  const double inv = 1.0 / static_cast<double>(h.copies.size());
  for (double& v : mean) v *= inv;

  Mat cov(m, m);
  for (const auto& c : h.copies) {
    const Vec d = sub(c, mean);
    for (size_t i = 0; i < m; ++i) {
      if (d[i] == 0.0) continue;
      for (size_t j = 0; j < m; ++j) cov(i, j) += d[i] * d[j];
    }
  }
  for (double& v : cov.data) v *= inv;

  const double mom = cfg.ema_momentum;
  for (size_t i = 0; i < m; ++i)
    h.running_mean[i] = mom * h.running_mean[i] + (1.0 - mom) * mean[i];
  for (size_t i = 0; i < cov.data.size(); ++i)
    h.running_cov.data[i] = mom * h.running_cov.data[i] + (1.0 - mom) * cov.data[i];
}

// Kernel-smoothed (flattened) statistics for one class. Position 0 is the
// current running statistics; older snapshots sit at gaps 1, 2, ... The
// weights are normalized to sum to 1, so a delta kernel reproduces the raw
// running statistics exactly.
inline void smooth_stats(ClassHistory& h, const SmoothingKernel& kernel) {
  const size_t m = h.running_mean.size();
  const size_t positions = 1 + h.stats_history.size();
  double total = 0.0;
  std::vector<double> w(positions);
  for (size_t gap = 0; gap < positions; ++gap) {
    w[gap] = kernel.weight(gap);
    total += w[gap];
  }
  require(total > 0.0, "smooth_stats: kernel weights sum to zero");

  Vec mean(m, 0.0);
  Mat cov(m, m);
  for (size_t gap = 0; gap < positions; ++gap) {
    const double wk = w[gap] / total;
    if (wk == 0.0) continue;
    const Vec& mu = gap == 0 ? h.running_mean
                             : h.stats_history[h.stats_history.size() - gap].first;
    const Mat& sg = gap == 0 ? h.running_cov
                             : h.stats_history[h.stats_history.size() - gap].second;
    axpy(wk, mu, mean);
    for (size_t i = 0; i < cov.data.size(); ++i) cov.data[i] += wk * sg.data[i];
  }
  h.flattened_mean = std::move(mean);
  h.flattened_cov = std::move(cov);
}

inline void smooth_stats(PrototypeBank& bank, const SmoothingKernel& kernel) {
  for (auto& h : bank.classes()) smooth_stats(h, kernel);
}

// Whitens by the raw statistics and re-colors by the flattened ones:
// c~ = (Sigma~ + ridge I)^{1/2} (Sigma + ridge I)^{-1/2} (c - mu) + mu~.
inline Vec whiten_recolor(const Vec& c, const Vec& mu, const Mat& sigma, const Vec& mu_f,
                          const Mat& sigma_f, double ridge) {
  require(is_symmetric(sigma) && is_symmetric(sigma_f),
          "whiten_recolor: covariance not symmetric");
  const Mat color = psd_sqrt(sigma_f, ridge);
  const Mat whiten = psd_inv_sqrt(sigma, ridge);
  return add(matvec(color, matvec(whiten, sub(c, mu))), mu_f);
}

struct PrototypeLoss {
  double value = 0.0;
  std::vector<Vec> grads;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// d cos(u,v) / d u for fixed v, zero when either norm degenerates.
inline Vec cosine_grad_wrt_first(const Vec& u, const Vec& v) {
  const double nu = norm(u);
  const double nv = norm(v);
  Vec g(u.size(), 0.0);
  if (nu < 1e-12 || nv < 1e-12) return g;
  const double c = dot(u, v) / (nu * nv);
  for (size_t i = 0; i < u.size(); ++i) g[i] = (v[i] / nv - c * u[i] / nu) / nu;
  return g;
}

inline Vec tanh_of(const Vec& c) {
  Vec u(c.size());
  for (size_t i = 0; i < c.size(); ++i) u[i] = std::tanh(c[i]);
  return u;
}

// chain rule through u = tanh(c)
inline void chain_tanh(const Vec& u, Vec& grad) {
  for (size_t i = 0; i < grad.size(); ++i) grad[i] *= 1.0 - u[i] * u[i];
}

}  // namespace detail

// Cross-correlation penalty over ordered pairs of distinct prototypes:
// sum_{i != j} sigmoid(cos(tanh(c_i), tanh(c_j))). Each unordered pair
// therefore counts twice.
inline PrototypeLoss correlation_loss(const std::vector<Vec>& prototypes) {
  PrototypeLoss out;
  out.grads.resize(prototypes.size());
  for (size_t i = 0; i < prototypes.size(); ++i)
    out.grads[i].assign(prototypes[i].size(), 0.0);
  if (prototypes.size() < 2) return out;

  std::vector<Vec> u(prototypes.size());
  for (size_t i = 0; i < prototypes.size(); ++i) u[i] = detail::tanh_of(prototypes[i]);

  for (size_t i = 0; i < prototypes.size(); ++i) {
    for (size_t j = i + 1; j < prototypes.size(); ++j) {
      const double c = cosine_similarity(u[i], u[j]);
      const double s = detail::sigmoid(c);
      out.value += 2.0 * s;
      const double slope = 2.0 * s * (1.0 - s);

      Vec gi = detail::cosine_grad_wrt_first(u[i], u[j]);
      detail::chain_tanh(u[i], gi);
      axpy(slope, gi, out.grads[i]);

      Vec gj = detail::cosine_grad_wrt_first(u[j], u[i]);
      detail::chain_tanh(u[j], gj);
      axpy(slope, gj, out.grads[j]);
    }
  }
  return out;
}

// Footprint-similarity term: sum_i cos(tanh(c_i), tanh(c_i^(0))).
// Gradients flow into the current prototypes only; footprints are constants.
inline PrototypeLoss cosine_anchor_loss(const std::vector<Vec>& current,
                                        const std::vector<Vec>& initial) {
  require(current.size() == initial.size(), "cosine_anchor_loss: count mismatch");
  PrototypeLoss out;
  out.grads.resize(current.size());
  for (size_t i = 0; i < current.size(); ++i) {
    const Vec u = detail::tanh_of(current[i]);
    const Vec w = detail::tanh_of(initial[i]);
    out.value += cosine_similarity(u, w);
    Vec g = detail::cosine_grad_wrt_first(u, w);
    detail::chain_tanh(u, g);
    out.grads[i] = std::move(g);
  }
  return out;
}

namespace detail {

// One descent step on (correlation + anchor_sign * footprint-similarity).
inline void refine_step(std::vector<Vec>& prototypes, const std::vector<Vec>& footprints,
                        double lambda, double anchor_sign) {
  if (prototypes.empty() || lambda == 0.0) return;
  const PrototypeLoss cor = correlation_loss(prototypes);
  const PrototypeLoss anchor = cosine_anchor_loss(prototypes, footprints);
  for (size_t i = 0; i < prototypes.size(); ++i) {
    axpy(-lambda, cor.grads[i], prototypes[i]);
    axpy(-lambda * anchor_sign, anchor.grads[i], prototypes[i]);
  }
}

}  // namespace detail

// One refinement step applied in place to the newest copy of every class.
inline void refine_prototypes(PrototypeBank& bank, const BankConfig& cfg) {
  if (bank.class_count() == 0) return;
  std::vector<Vec> current, footprints;
  current.reserve(bank.class_count());
  for (const auto& h : bank.classes()) {
    current.push_back(h.newest());
    footprints.push_back(h.initial_footprint);
  }
  detail::refine_step(current, footprints, cfg.lambda, cfg.anchor_sign);
  size_t i = 0;
  for (auto& h : bank.classes()) h.copies.back() = std::move(current[i++]);
}

// Full calibration round over every stored class:
//   running stats -> (optionally) flattened stats -> whiten/re-color the
//   newest copy -> one refinement step -> append as the new copy, evicting
//   the oldest beyond the scheduled depth.
// Flattened statistics are meant to stay fixed within a training epoch, so
// callers pass refresh_flattened=true only on epoch boundaries.
inline void calibrate_and_update(PrototypeBank& bank, const BankConfig& cfg,
                                 bool refresh_flattened = true) {
  if (bank.class_count() == 0) return;

  for (auto& h : bank.classes()) update_running_stats(h, cfg);
  if (refresh_flattened)
    for (auto& h : bank.classes()) smooth_stats(h, cfg.kernel);

  std::vector<Vec> candidates;
  std::vector<Vec> footprints;
  candidates.reserve(bank.class_count());
  for (const auto& h : bank.classes()) {
    candidates.push_back(whiten_recolor(h.newest(), h.running_mean, h.running_cov,
                                        h.flattened_mean, h.flattened_cov, cfg.ridge));
    footprints.push_back(h.initial_footprint);
  }

  detail::refine_step(candidates, footprints, cfg.lambda, cfg.anchor_sign);

  size_t i = 0;
  for (auto& h : bank.classes()) {
    const size_t depth = cfg.retention_depth(h.session_created);
    h.stats_history.emplace_back(h.running_mean, h.running_cov);
    while (h.stats_history.size() + 1 > depth) h.stats_history.pop_front();
    h.copies.push_back(std::move(candidates[i++]));
    while (h.copies.size() > depth) h.copies.pop_front();
  }
}

// Prototype-vector budget: scheduled retention depth summed over classes,
// equivalently depth(session) * session size summed over sessions. The same
// count of statistic means and matrices is reported alongside.
inline size_t memory_budget(const PrototypeBank& bank, const BankConfig& cfg) {
  size_t k = 0;
  for (const auto& h : bank.classes()) k += cfg.retention_depth(h.session_created);
  return k;
}

}  // namespace protoquad
