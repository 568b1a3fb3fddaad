#pragma once

#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "protoquad/bank.hpp"
#include "protoquad/mlp.hpp"
#include "protoquad/sampler.hpp"

namespace protoquad {

// Nearest class mean over the stored prototypes (newest calibrated copy per
// class, or the average over the copy history when avg_copies is set).
// Equidistant candidates resolve to the smallest class id.
inline uint32_t classify_ncm(const PrototypeBank& bank, const Vec& z, bool avg_copies = false) {
  require(bank.class_count() > 0, "classify_ncm: empty bank");
  double best = std::numeric_limits<double>::infinity();
  uint32_t best_id = 0;
  bool first = true;
  for (const auto& h : bank.classes()) {
    Vec anchor;
    if (avg_copies) {
      std::vector<Vec> copies(h.copies.begin(), h.copies.end());
      anchor = compute_prototype(copies);
    } else {
      anchor = h.newest();
    }
    const double d = euclidean_distance(z, anchor);
    if (first || d < best || (d == best && h.class_id < best_id)) {
      best = d;
      best_id = h.class_id;
      first = false;
    }
  }
  return best_id;
}

inline size_t eval_thread_count(size_t samples) {
  size_t threads = std::thread::hardware_concurrency();
  if (threads == 0) threads = 1;
  if (const char* env = std::getenv("PQ_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) threads = std::min<size_t>(threads, static_cast<size_t>(cap));
  }
  return std::max<size_t>(1, std::min(threads, samples == 0 ? 1 : samples));
}

struct SessionEval {
  double pooled = 0.0;                // accuracy over all splits up to t
  std::vector<double> per_split;      // R[t][i]; NaN where the split is empty
  size_t correct = 0;
  size_t total = 0;
};

// Accuracy of an arbitrary feature -> label classifier over splits [0, upto].
// Counts are integers and reduced in split order, so any thread count yields
// identical results.
inline SessionEval evaluate_splits(const std::function<uint32_t(const Vec&)>& classify,
                                   const std::vector<SessionDataset>& splits, size_t upto) {
  require(upto < splits.size(), "evaluate_splits: session index out of range");
  SessionEval ev;
  for (size_t s = 0; s <= upto; ++s) {
    const auto& split = splits[s];
    const size_t n = split.features.size();
    if (n == 0) {
      ev.per_split.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const size_t threads = eval_thread_count(n);
    std::vector<size_t> correct(threads, 0);
    std::vector<std::thread> pool;
    const size_t chunk = (n + threads - 1) / threads;
    for (size_t t = 0; t < threads; ++t) {
      const size_t lo = t * chunk;
      const size_t hi = std::min(n, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back([&, lo, hi, t]() {
        size_t c = 0;
        for (size_t i = lo; i < hi; ++i)
          if (classify(split.features[i]) == split.labels[i]) ++c;
        correct[t] = c;
      });
    }
    for (auto& th : pool) th.join();
    size_t split_correct = 0;
    for (size_t c : correct) split_correct += c;
    ev.per_split.push_back(static_cast<double>(split_correct) / static_cast<double>(n));
    ev.correct += split_correct;
    ev.total += n;
  }
  require(ev.total > 0, "evaluate_splits: all splits empty");
  ev.pooled = static_cast<double>(ev.correct) / static_cast<double>(ev.total);
  return ev;
}

// Nearest-class-mean accuracy over all test splits seen so far.
inline SessionEval session_accuracy(const PrototypeBank& bank, const MlpParams& params,
                                    const std::vector<SessionDataset>& test_splits,
                                    size_t upto, bool avg_copies = false) {
  auto classify = [&](const Vec& x) { return classify_ncm(bank, forward(params, x), avg_copies); };
  return evaluate_splits(classify, test_splits, upto);
}

// GEM-style backward transfer: mean over earlier sessions of the accuracy
// change between when a session was learned and the end of the stream.
// Undefined (NaN) for single-session runs.
inline double backward_transfer(const std::vector<std::vector<double>>& accuracy) {
  const size_t t = accuracy.size();
  if (t < 2) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i + 1 < t; ++i) {
    const double final_acc = accuracy[t - 1][i];
    const double learned_acc = accuracy[i][i];
    if (std::isnan(final_acc) || std::isnan(learned_acc)) continue;
    sum += final_acc - learned_acc;
    ++count;
  }
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum / static_cast<double>(count);
}

struct RunReport {
  uint64_t seed = 0;
  std::vector<std::vector<double>> accuracy;  // R[t][i] for i <= t; NaN = absent
  std::vector<double> cumulative;             // A_t
  double bwt = std::numeric_limits<double>::quiet_NaN();
  size_t memory_vectors = 0;
  size_t memory_stat_means = 0;
  size_t memory_stat_matrices = 0;
  nlohmann::ordered_json config_echo = nlohmann::ordered_json::object();
};

inline nlohmann::ordered_json report_to_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["schema"] = "pq-report-v1";
  j["seed"] = r.seed;
  j["config"] = r.config_echo;
  j["sessions"] = r.accuracy.size();
  auto cell = [](double v) {
    return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
  };
  j["accuracy_matrix"] = nlohmann::ordered_json::array();
  for (const auto& row : r.accuracy) {
    nlohmann::ordered_json jrow = nlohmann::ordered_json::array();
    for (double v : row) jrow.push_back(cell(v));
    j["accuracy_matrix"].push_back(jrow);
  }
  j["cumulative_accuracy"] = r.cumulative;
  j["bwt"] = cell(r.bwt);
  j["memory"] = {{"prototype_vectors", r.memory_vectors},
                 {"stat_means", r.memory_stat_means},
                 {"stat_matrices", r.memory_stat_matrices}};
  return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  r.seed = j.at("seed").get<uint64_t>();
  r.config_echo = j.at("config");
  auto cell = [](const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  for (const auto& row : j.at("accuracy_matrix")) {
    std::vector<double> out;
    for (const auto& v : row) out.push_back(cell(v));
    r.accuracy.push_back(std::move(out));
  }
  r.cumulative = j.at("cumulative_accuracy").get<std::vector<double>>();
  r.bwt = cell(j.at("bwt"));
  r.memory_vectors = j.at("memory").at("prototype_vectors").get<size_t>();
  r.memory_stat_means = j.at("memory").at("stat_means").get<size_t>();
  r.memory_stat_matrices = j.at("memory").at("stat_matrices").get<size_t>();
  return r;
}

// Rows are sessions; columns are the cumulative accuracy followed by the
// per-session cells R[t][i]. Cells above the diagonal stay blank.
inline std::string accuracy_csv(const RunReport& r) {
  std::string out = "session,cumulative";
  const size_t t = r.accuracy.size();
  for (size_t i = 0; i < t; ++i) out += ",r" + std::to_string(i + 1);
  out += "\n";
  char buf[64];
  for (size_t row = 0; row < t; ++row) {
    out += std::to_string(row + 1);
    std::snprintf(buf, sizeof(buf), ",%.17g", r.cumulative[row]);
    out += buf;
    for (size_t i = 0; i < t; ++i) {
      if (i < r.accuracy[row].size() && !std::isnan(r.accuracy[row][i])) {
        std::snprintf(buf, sizeof(buf), ",%.17g", r.accuracy[row][i]);
        out += buf;
      } else {
        out += ",";
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace protoquad
