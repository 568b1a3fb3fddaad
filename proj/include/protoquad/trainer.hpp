#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "protoquad/bank.hpp"
#include "protoquad/eval.hpp"
#include "protoquad/losses.hpp"
#include "protoquad/mlp.hpp"
#include "protoquad/optim.hpp"
#include "protoquad/sampler.hpp"

namespace protoquad {

struct TrainPlan {
  size_t base_epochs = 50;
  size_t incremental_epochs = 60;
  size_t episodes_per_epoch = 10;
  size_t batch_size = 1024;
  Margins margins;
  LossMode loss_mode = LossMode::kQuadruplet;
  bool hinge = true;
  SgdConfig sgd;       // incremental-session schedule
  SgdConfig base_sgd;  // base-session cross-entropy schedule
  BankConfig bank;
  double trainable_fraction = 0.10;
  EpisodeConfig episode;
  std::vector<size_t> hidden_dims{64, 64};
  size_t embedding_dim = 32;
  bool calibrate_per_query = false;
  bool classify_avg_copies = false;

  enum class Baseline { kNone, kFinetune };
  Baseline baseline = Baseline::kNone;

  uint64_t seed = 0;

  TrainPlan() {
    base_sgd.initial_lr = 0.5;
  }

  void validate() const {
    // zero-epoch plans are legal: they skip training and install prototypes
    // of the untouched embedding
    if (episodes_per_epoch < 1) throw config_error("plan: episodes_per_epoch must be >= 1");
    if (batch_size < 1) throw config_error("plan: batch_size must be >= 1");
    if (!(trainable_fraction > 0.0 && trainable_fraction <= 1.0))
      throw config_error("plan: trainable_fraction must be in (0,1]");
    if (embedding_dim < 1) throw config_error("plan: embedding_dim must be >= 1");
    if (!std::isfinite(margins.alpha1) || !std::isfinite(margins.alpha2))
      throw config_error("plan: margins must be finite");
    episode.validate();
    sgd.validate();
    base_sgd.validate();
    bank.validate();
  }

  std::vector<size_t> net_dims(size_t input_dim) const {
    std::vector<size_t> dims{input_dim};
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(embedding_dim);
    return dims;
  }
};

namespace detail {

// One cross-entropy pass over a batch of sample indices; updates the
// extractor through the mask and (optionally) the output head.
inline double ce_batch_step(const SessionDataset& data, const std::vector<size_t>& batch,
                            MlpParams& params, OutputHead& head, bool train_head,
                            const FreezeMask& mask, size_t epoch, const SgdConfig& cfg) {
  MlpGrads grads = zeros_like(params);
  Mat head_grad(head.weights.rows, head.weights.cols);
  double loss_sum = 0.0;

  ForwardCache cache;
  for (size_t idx : batch) {
    const Vec z = forward(params, data.features[idx], &cache);
    if (!all_finite(z)) throw numerical_error("non-finite embedding");
    const Vec logits = head_logits(head, z);
    if (!all_finite(logits)) throw numerical_error("non-finite logits");
    const auto ce = cross_entropy_loss(logits, data.labels[idx]);
    loss_sum += ce.loss;

    Vec dz(z.size(), 0.0);
    for (size_t c = 0; c < head.weights.rows; ++c) {
      const double g = ce.grad_logits[c];
      if (g == 0.0) continue;
      for (size_t j = 0; j < z.size(); ++j) {
        head_grad(c, j) += g * z[j];
        dz[j] += head.weights(c, j) * g;
      }
    }
    accumulate(grads, backward(params, cache, dz));
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  MlpGrads mean_grads = zeros_like(params);
  accumulate(mean_grads, grads, inv);
  sgd_step(params, mean_grads, mask, epoch, cfg);

  if (train_head) {
    const double lr = learning_rate(cfg, epoch);
    for (size_t i = 0; i < head.weights.data.size(); ++i)
      head.weights.data[i] -=
          lr * (inv * head_grad.data[i] + cfg.weight_decay * head.weights.data[i]);
  }
  return loss_sum * inv;
}

inline void check_finite_loss(double loss, const std::string& where) {
  if (!std::isfinite(loss)) throw numerical_error("non-finite loss at " + where);
}

// re-throws numerical errors with the location of the offending step
template <typename Body>
auto locate_numerics(const std::string& where, Body&& body) {
  try {
    return body();
  } catch (const numerical_error& e) {
    throw numerical_error(std::string(e.what()) + " at " + where);
  }
}

// Class means over all of a session's samples under the current extractor,
// installed as both the first copy and the immutable footprint.
inline void install_session_prototypes(const SessionDataset& data, const MlpParams& params,
                                       PrototypeBank& bank) {
  for (uint32_t label : data.label_set) {
    std::vector<Vec> emb;
    for (size_t i : data.indices_of(label)) emb.push_back(forward(params, data.features[i]));
    bank.install_class(label, compute_prototype(emb), data.session_index);
  }
}

}  // namespace detail

// Base session: minibatch cross-entropy over extractor plus head, then the
// per-class prototypes of the final embedding become the bank's first copies
// and footprints.
inline void run_base_session(const SessionDataset& data, MlpParams& params, OutputHead& head,
                             PrototypeBank& bank, const TrainPlan& plan, Rng& rng) {
  require(data.session_index == 0, "run_base_session: not the base session");
  const FreezeMask mask = full_trainable(params);

  std::vector<size_t> order(data.features.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (size_t epoch = 0; epoch < plan.base_epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += plan.batch_size) {
      const size_t end = std::min(order.size(), start + plan.batch_size);
      const std::vector<size_t> batch(order.begin() + start, order.begin() + end);
      const std::string where = "base session epoch " + std::to_string(epoch);
      const double loss = detail::locate_numerics(where, [&]() {
        return detail::ce_batch_step(data, batch, params, head, /*train_head=*/true, mask,
                                     epoch, plan.base_sgd);
      });
      detail::check_finite_loss(loss, where);
    }
  }
  detail::install_session_prototypes(data, params, bank);
}

// Incremental session: freeze mask at entry, then per epoch and episode run
// the quadruplet NLL, the masked step, and a bank calibration round.
// Flattened statistics refresh on epoch boundaries only. New classes join the
// bank at session end from their support embeddings. Returns the mask used.
inline FreezeMask run_incremental_session(const SessionDataset& data, MlpParams& params,
                                          PrototypeBank& bank, const TrainPlan& plan, Rng& rng) {
  require(data.session_index >= 1, "run_incremental_session: base session is not incremental");
  require(bank.class_count() > 0, "run_incremental_session: bank not initialized");

  const FreezeMask mask = select_freeze_mask(params, plan.trainable_fraction);
  const Embedder embed = [&params](const Vec& x) { return forward(params, x); };

  for (size_t epoch = 0; epoch < plan.incremental_epochs; ++epoch) {
    for (size_t e = 0; e < plan.episodes_per_epoch; ++e) {
      const std::string where = "session " + std::to_string(data.session_index) + " epoch " +
                                std::to_string(epoch) + " episode " + std::to_string(e);
      const Episode ep = sample_episode(data, bank, rng, plan.episode, embed);
      const EpisodeLoss loss = detail::locate_numerics(where, [&]() {
        return episode_nll(ep, params, plan.margins, plan.loss_mode, plan.hinge);
      });
      detail::check_finite_loss(loss.value, where);
      sgd_step(params, loss.grads, mask, epoch, plan.sgd);

      const size_t rounds =
          plan.calibrate_per_query ? ep.classes.size() * plan.episode.query_per_class : 1;
      for (size_t r = 0; r < rounds; ++r)
        calibrate_and_update(bank, plan.bank, /*refresh_flattened=*/e == 0 && r == 0);
    }
  }
  detail::install_session_prototypes(data, params, bank);
  return mask;
}

// Ft-CNN-style control: keep fine-tuning extractor and head with
// cross-entropy on each session's sparse samples. No freezing, no bank,
// no episodic loss. Takes the same number of update steps per epoch as the
// full method takes episodes, so the two consume equal step budgets.
// Used by the `--baseline finetune` mode.
inline void run_finetune_session(const SessionDataset& data, MlpParams& params, OutputHead& head,
                                 const TrainPlan& plan, Rng& rng) {
  const FreezeMask mask = full_trainable(params);
  const size_t n = data.features.size();
  const size_t batch_size = std::min(plan.batch_size, n);
  for (size_t epoch = 0; epoch < plan.incremental_epochs; ++epoch) {
    for (size_t step = 0; step < plan.episodes_per_epoch; ++step) {
      std::vector<size_t> batch = rng.sample_without_replacement(n, batch_size);
      const std::string where = "finetune session " + std::to_string(data.session_index) +
                                " epoch " + std::to_string(epoch) + " step " +
                                std::to_string(step);
      const double loss = detail::locate_numerics(where, [&]() {
        return detail::ce_batch_step(data, batch, params, head, /*train_head=*/true, mask,
                                     epoch, plan.sgd);
      });
      detail::check_finite_loss(loss, where);
    }
  }
}

struct StreamRun {
  MlpParams params;
  OutputHead head;
  PrototypeBank bank;
  FreezeMask last_mask;  // mask of the most recent incremental session
  RunReport report;

  StreamRun() : bank(0) {}
};

// Full Algorithm-3 run: base session, then the incremental sessions, with an
// evaluation over every seen test split after each session.
inline StreamRun run_stream(const SessionStream& stream, const TrainPlan& plan) {
  validate_stream(stream);
  plan.validate();

  StreamRun run;
  Rng root(plan.seed);
  Rng init_rng = root.derive(1);
  Rng base_rng = root.derive(2);

  run.params = make_mlp(plan.net_dims(stream.input_dim), init_rng);
  run.head = make_head(stream.total_classes, plan.embedding_dim, init_rng);
  run.bank = PrototypeBank(plan.embedding_dim);
  run.report.seed = plan.seed;

  const bool finetune = plan.baseline == TrainPlan::Baseline::kFinetune;

  // Baseline classification uses the head restricted to the classes seen so
  // far; the full method classifies by nearest prototype.
  std::vector<uint32_t> seen_labels;
  auto evaluate_after = [&](size_t t) {
    SessionEval ev;
    if (finetune) {
      auto classify = [&](const Vec& x) {
        const Vec logits = head_logits(run.head, forward(run.params, x));
        uint32_t best = seen_labels.front();
        for (uint32_t label : seen_labels)
          if (logits[label] > logits[best]) best = label;
        return best;
      };
      ev = evaluate_splits(classify, stream.test, t);
    } else {
      ev = session_accuracy(run.bank, run.params, stream.test, t, plan.classify_avg_copies);
    }
    run.report.accuracy.push_back(ev.per_split);
    run.report.cumulative.push_back(ev.pooled);
  };

  for (size_t t = 0; t < stream.train.size(); ++t) {
    const SessionDataset& data = stream.train[t];
    seen_labels.insert(seen_labels.end(), data.label_set.begin(), data.label_set.end());
    if (t == 0) {
      run_base_session(data, run.params, run.head, run.bank, plan, base_rng);
      run.last_mask = full_trainable(run.params);
      if (finetune) run.bank = PrototypeBank(plan.embedding_dim);  // baseline keeps no bank
    } else {
      Rng session_rng = root.derive(100 + t);
      if (finetune)
        run_finetune_session(data, run.params, run.head, plan, session_rng);
      else
        run.last_mask = run_incremental_session(data, run.params, run.bank, plan, session_rng);
    }
    evaluate_after(t);
  }

  run.report.bwt = backward_transfer(run.report.accuracy);
  const size_t k = memory_budget(run.bank, plan.bank);
  run.report.memory_vectors = k;
  run.report.memory_stat_means = k;
  run.report.memory_stat_matrices = k;
  return run;
}

}  // namespace protoquad
