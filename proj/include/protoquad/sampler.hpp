#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "protoquad/bank.hpp"
#include "protoquad/linalg.hpp"
#include "protoquad/rng.hpp"

namespace protoquad {

// One session's labeled feature set. Label sets are disjoint across sessions.
struct SessionDataset {
  size_t session_index = 0;
  std::vector<Vec> features;
  std::vector<uint32_t> labels;
  std::vector<uint32_t> label_set;  // sorted unique

  void finalize() {
    require(features.size() == labels.size(), "SessionDataset: feature/label count mismatch");
    by_label_.clear();
    label_set.clear();
    for (size_t i = 0; i < labels.size(); ++i) by_label_[labels[i]].push_back(i);
    label_set.reserve(by_label_.size());
    for (const auto& [label, idx] : by_label_) label_set.push_back(label);
    std::sort(label_set.begin(), label_set.end());
  }

  const std::vector<size_t>& indices_of(uint32_t label) const {
    auto it = by_label_.find(label);
    require(it != by_label_.end(),
            "SessionDataset: label " + std::to_string(label) + " not present");
    return it->second;
  }

  size_t class_count() const { return label_set.size(); }

 private:
  std::unordered_map<uint32_t, std::vector<size_t>> by_label_;
};

struct SessionStream {
  size_t input_dim = 0;
  size_t total_classes = 0;
  std::vector<SessionDataset> train;
  std::vector<SessionDataset> test;
};

// Synthetic stream: every class is an isotropic Gaussian blob whose mean sits
// on a sphere of radius `separation` (in units of the within-class sigma when
// variance = 1). The base session holds base_classes classes; each of the
// incremental sessions adds n_way classes with k_shot training samples.
struct StreamSpec {
  size_t base_classes = 12;
  size_t incremental_sessions = 4;
  size_t n_way = 3;
  size_t k_shot = 5;
  size_t input_dim = 16;
  double separation = 4.0;
  double variance = 1.0;
  size_t base_train_per_class = 40;
  size_t test_per_class = 20;

  size_t total_classes() const { return base_classes + incremental_sessions * n_way; }
  size_t session_count() const { return incremental_sessions + 1; }

  void validate() const {
    if (base_classes < 1) throw config_error("stream: base_classes must be >= 1");
    if (input_dim < 1) throw config_error("stream: input_dim must be >= 1");
    if (incremental_sessions > 0 && (n_way < 1 || k_shot < 1))
      throw config_error("stream: n_way and k_shot must be >= 1");
    if (separation < 0.0) throw config_error("stream: separation must be >= 0");
    if (variance <= 0.0) throw config_error("stream: variance must be > 0");
    if (base_train_per_class < 1) throw config_error("stream: base_train_per_class must be >= 1");
  }
};

inline SessionStream make_session_stream(const StreamSpec& spec, Rng& rng) {
  spec.validate();
  SessionStream out;
  out.input_dim = spec.input_dim;
  out.total_classes = spec.total_classes();
  const double sigma = std::sqrt(spec.variance);

  // class means: separation * random unit direction
  std::vector<Vec> means(out.total_classes);
  for (auto& m : means) {
    m.resize(spec.input_dim);
    double n2 = 0.0;
    for (auto& v : m) {
      v = rng.normal();
      n2 += v * v;
    }
    const double scale = spec.separation / std::max(std::sqrt(n2), 1e-12);
    for (auto& v : m) v *= scale;
  }

  auto draw_sample = [&](const Vec& mean) {
    Vec x(spec.input_dim);
    for (size_t i = 0; i < spec.input_dim; ++i) x[i] = mean[i] + sigma * rng.normal();
    return x;
  };

  uint32_t next_label = 0;
  for (size_t s = 0; s < spec.session_count(); ++s) {
    SessionDataset train, test;
    train.session_index = s;
    test.session_index = s;
    const size_t classes = s == 0 ? spec.base_classes : spec.n_way;
    const size_t train_per_class = s == 0 ? spec.base_train_per_class : spec.k_shot;
    for (size_t c = 0; c < classes; ++c, ++next_label) {
      for (size_t i = 0; i < train_per_class; ++i) {
        train.features.push_back(draw_sample(means[next_label]));
        train.labels.push_back(next_label);
      }
      for (size_t i = 0; i < spec.test_per_class; ++i) {
        test.features.push_back(draw_sample(means[next_label]));
        test.labels.push_back(next_label);
      }
    }
    train.finalize();
    test.finalize();
    out.train.push_back(std::move(train));
    out.test.push_back(std::move(test));
  }
  return out;
}

// Checks the partition invariants a stream must satisfy before training.
inline void validate_stream(const SessionStream& stream) {
  if (stream.train.empty()) throw config_error("stream: no sessions");
  std::vector<uint32_t> all;
  for (const auto& s : stream.train)
    all.insert(all.end(), s.label_set.begin(), s.label_set.end());
  std::sort(all.begin(), all.end());
  for (size_t i = 0; i < all.size(); ++i) {
    if (i > 0 && all[i] == all[i - 1])
      throw config_error("stream: label " + std::to_string(all[i]) +
                         " appears in more than one session");
    if (all[i] != i)
      throw config_error("stream: labels must partition [0, total classes)");
  }
  if (all.size() != stream.total_classes)
    throw config_error("stream: total_classes does not match the label partition");
  for (const auto& s : stream.train)
    for (const auto& f : s.features)
      if (f.size() != stream.input_dim)
        throw config_error("stream: feature dimension mismatch in session " +
                           std::to_string(s.session_index));
}

struct EpisodeConfig {
  size_t episode_classes = 3;    // classes per episode
  size_t support_per_class = 3;  // N_S
  size_t query_per_class = 2;    // N_Q
  double p_bank_negative = 0.5;  // chance both negatives come from the bank

  void validate() const {
    if (episode_classes < 1) throw config_error("episode: episode_classes must be >= 1");
    if (support_per_class < 1) throw config_error("episode: support_per_class must be >= 1");
    if (query_per_class < 1) throw config_error("episode: query_per_class must be >= 1");
    if (p_bank_negative < 0.0 || p_bank_negative > 1.0)
      throw config_error("episode: p_bank_negative must be in [0,1]");
  }
};

enum class NegativeSource : uint8_t { kCurrentSession, kBank };

struct EpisodeClass {
  uint32_t class_id = 0;
  std::vector<size_t> support_idx;
  std::vector<size_t> query_idx;
  std::vector<Vec> query_features;
  uint32_t negative_class = 0;
  uint32_t second_negative_class = 0;
  NegativeSource negative_source = NegativeSource::kCurrentSession;
  Vec positive_prototype;
  Vec negative_prototype;
  Vec second_negative_prototype;

  bool operator==(const EpisodeClass&) const = default;
};

struct Episode {
  size_t session_index = 0;
  std::vector<EpisodeClass> classes;

  bool operator==(const Episode&) const = default;
};

using Embedder = std::function<Vec(const Vec&)>;

// One training episode: pick episode_classes classes, split each into a
// disjoint support/query pair, and source each class's two distinct negative
// prototypes either from the other episode classes or from the bank's
// previous-session prototypes.
inline Episode sample_episode(const SessionDataset& data, const PrototypeBank& bank,
                              Rng& rng, const EpisodeConfig& cfg, const Embedder& embed) {
  cfg.validate();
  if (cfg.episode_classes > data.class_count())
    throw config_error("episode: requested " + std::to_string(cfg.episode_classes) +
                       " classes but session " + std::to_string(data.session_index) +
                       " has " + std::to_string(data.class_count()));

  const std::vector<uint32_t> past = bank.classes_before(data.session_index);
  const bool can_bank = data.session_index > 0 && past.size() >= 2;
  const bool can_current = cfg.episode_classes >= 3;
  if (!can_bank && !can_current)
    throw config_error(
        "episode: needs at least 3 episode classes or 2 banked past classes "
        "to source two distinct negatives");

  Episode ep;
  ep.session_index = data.session_index;

  std::vector<uint32_t> picked;
  for (size_t i : rng.sample_without_replacement(data.class_count(), cfg.episode_classes))
    picked.push_back(data.label_set[i]);

  auto draw_subset = [&](const std::vector<size_t>& pool, size_t n,
                         const std::vector<size_t>& exclude) {
    std::vector<size_t> remaining;
    remaining.reserve(pool.size());
    for (size_t idx : pool)
      if (std::find(exclude.begin(), exclude.end(), idx) == exclude.end())
        remaining.push_back(idx);
    require(remaining.size() >= n, "sample_episode: pool exhausted");
    std::vector<size_t> out;
    for (size_t i : rng.sample_without_replacement(remaining.size(), n))
      out.push_back(remaining[i]);
    return out;
  };

  auto prototype_from = [&](const std::vector<size_t>& idx) {
    std::vector<Vec> emb;
    emb.reserve(idx.size());
    for (size_t i : idx) emb.push_back(embed(data.features[i]));
    return compute_prototype(emb);
  };

  for (size_t k = 0; k < picked.size(); ++k) {
    EpisodeClass ec;
    ec.class_id = picked[k];
    const auto& pool = data.indices_of(ec.class_id);
    if (pool.size() < cfg.support_per_class + cfg.query_per_class)
      throw config_error("episode: class " + std::to_string(ec.class_id) + " has " +
                         std::to_string(pool.size()) + " samples but needs " +
                         std::to_string(cfg.support_per_class + cfg.query_per_class));

    ec.support_idx = draw_subset(pool, cfg.support_per_class, {});
    ec.query_idx = draw_subset(pool, cfg.query_per_class, ec.support_idx);
    for (size_t i : ec.query_idx) ec.query_features.push_back(data.features[i]);
    ec.positive_prototype = prototype_from(ec.support_idx);

    bool use_bank;
    if (can_bank && can_current)
      use_bank = rng.bernoulli(cfg.p_bank_negative);
    else
      use_bank = can_bank;

    if (use_bank) {
      ec.negative_source = NegativeSource::kBank;
      const auto pick = rng.sample_without_replacement(past.size(), 2);
      ec.negative_class = past[pick[0]];
      ec.second_negative_class = past[pick[1]];
      ec.negative_prototype = bank.prototype_of(ec.negative_class);
      ec.second_negative_prototype = bank.prototype_of(ec.second_negative_class);
    } else {
      ec.negative_source = NegativeSource::kCurrentSession;
      std::vector<uint32_t> others;
      for (uint32_t c : picked)
        if (c != ec.class_id) others.push_back(c);
      const size_t first = rng.uniform_int(others.size());
      ec.negative_class = others[first];
      others.erase(others.begin() + static_cast<long>(first));
      ec.second_negative_class = others[rng.uniform_int(others.size())];

      const auto neg_support =
          draw_subset(data.indices_of(ec.negative_class), cfg.support_per_class, {});
      const auto nneg_support =
          draw_subset(data.indices_of(ec.second_negative_class), cfg.support_per_class, {});
      ec.negative_prototype = prototype_from(neg_support);
      ec.second_negative_prototype = prototype_from(nneg_support);
    }
    ep.classes.push_back(std::move(ec));
  }
  return ep;
}

}  // namespace protoquad
