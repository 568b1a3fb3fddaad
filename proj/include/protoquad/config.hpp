#pragma once

#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoquad/sampler.hpp"
#include "protoquad/trainer.hpp"

namespace protoquad {

// Fixed substream ids so that the CLI and the library derive identical
// randomness for the same purpose.
inline constexpr uint64_t kInitStream = 1;
inline constexpr uint64_t kBaseStream = 2;
inline constexpr uint64_t kDataStream = 3;

struct RunConfig {
  StreamSpec stream;
  std::string manifest;  // when set, ingest features instead of generating
  TrainPlan plan;
  std::string output_dir = ".";
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const char* section,
                           std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok)
      throw config_error(std::string("config: unknown key '") + key + "' in " + section);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error(std::string("config: bad value for '") + key + "'");
  }
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "quadruplet") return LossMode::kQuadruplet;
  if (s == "triplet") return LossMode::kTriplet;
  if (s == "contrastive") return LossMode::kContrastive;
  throw config_error("config: loss_mode must be quadruplet, triplet, or contrastive");
}

inline KernelKind parse_kernel(const std::string& s) {
  if (s == "delta") return KernelKind::kDelta;
  if (s == "uniform") return KernelKind::kUniform;
  if (s == "gaussian") return KernelKind::kGaussian;
  throw config_error("config: kernel must be delta, uniform, or gaussian");
}

inline const char* kernel_name(KernelKind k) {
  switch (k) {
    case KernelKind::kDelta: return "delta";
    case KernelKind::kUniform: return "uniform";
    case KernelKind::kGaussian: return "gaussian";
  }
  return "?";
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& root) {
  using detail::read;
  detail::reject_unknown(root, "the top level",
                         {"seed", "output_dir", "stream", "plan", "bank"});
  RunConfig cfg;
  read(root, "seed", cfg.plan.seed);
  read(root, "output_dir", cfg.output_dir);

  if (root.contains("stream")) {
    const auto& s = root.at("stream");
    detail::reject_unknown(
        s, "stream",
        {"manifest", "base_classes", "sessions", "n_way", "k_shot", "input_dim",
         "separation", "variance", "base_train_per_class", "test_per_class"});
    read(s, "manifest", cfg.manifest);
    read(s, "base_classes", cfg.stream.base_classes);
    read(s, "sessions", cfg.stream.incremental_sessions);
    read(s, "n_way", cfg.stream.n_way);
    read(s, "k_shot", cfg.stream.k_shot);
    read(s, "input_dim", cfg.stream.input_dim);
    read(s, "separation", cfg.stream.separation);
    read(s, "variance", cfg.stream.variance);
    read(s, "base_train_per_class", cfg.stream.base_train_per_class);
    read(s, "test_per_class", cfg.stream.test_per_class);
    if (!cfg.manifest.empty() && s.size() > 1)
      throw config_error("config: stream.manifest excludes the synthetic stream keys");
  }

  if (root.contains("plan")) {
    const auto& p = root.at("plan");
    detail::reject_unknown(
        p, "plan",
        {"base_epochs", "incremental_epochs", "episodes_per_epoch", "batch_size", "alpha1",
         "alpha2", "loss_mode", "hinge", "initial_lr", "base_lr", "milestones",
         "base_milestones", "weight_decay", "trainable_fraction", "episode_classes", "support_per_class",
         "query_per_class", "p_bank_negative", "hidden_dims", "embedding_dim",
         "calibrate_per_query", "classify_avg_copies", "baseline"});
    read(p, "base_epochs", cfg.plan.base_epochs);
    read(p, "incremental_epochs", cfg.plan.incremental_epochs);
    read(p, "episodes_per_epoch", cfg.plan.episodes_per_epoch);
    read(p, "batch_size", cfg.plan.batch_size);
    read(p, "alpha1", cfg.plan.margins.alpha1);
    read(p, "alpha2", cfg.plan.margins.alpha2);
    if (p.contains("loss_mode"))
      cfg.plan.loss_mode = detail::parse_loss_mode(p.at("loss_mode").get<std::string>());
    read(p, "hinge", cfg.plan.hinge);
    read(p, "initial_lr", cfg.plan.sgd.initial_lr);
    read(p, "base_lr", cfg.plan.base_sgd.initial_lr);
    auto read_milestones = [](const nlohmann::json& arr, std::vector<Milestone>& out) {
      out.clear();
      for (const auto& m : arr) {
        if (!m.is_array() || m.size() != 2)
          throw config_error("config: milestones must be [epoch, multiplier] pairs");
        out.push_back({m[0].get<size_t>(), m[1].get<double>()});
      }
    };
    if (p.contains("milestones")) read_milestones(p.at("milestones"), cfg.plan.sgd.milestones);
    if (p.contains("base_milestones"))
      read_milestones(p.at("base_milestones"), cfg.plan.base_sgd.milestones);
    read(p, "weight_decay", cfg.plan.sgd.weight_decay);
    cfg.plan.base_sgd.weight_decay = cfg.plan.sgd.weight_decay;
    read(p, "trainable_fraction", cfg.plan.trainable_fraction);
    read(p, "episode_classes", cfg.plan.episode.episode_classes);
    read(p, "support_per_class", cfg.plan.episode.support_per_class);
    read(p, "query_per_class", cfg.plan.episode.query_per_class);
    read(p, "p_bank_negative", cfg.plan.episode.p_bank_negative);
    read(p, "hidden_dims", cfg.plan.hidden_dims);
    read(p, "embedding_dim", cfg.plan.embedding_dim);
    read(p, "calibrate_per_query", cfg.plan.calibrate_per_query);
    read(p, "classify_avg_copies", cfg.plan.classify_avg_copies);
    if (p.contains("baseline")) {
      const std::string b = p.at("baseline").get<std::string>();
      if (b == "none")
        cfg.plan.baseline = TrainPlan::Baseline::kNone;
      else if (b == "finetune")
        cfg.plan.baseline = TrainPlan::Baseline::kFinetune;
      else
        throw config_error("config: baseline must be none or finetune");
    }
  }

  if (root.contains("bank")) {
    const auto& b = root.at("bank");
    detail::reject_unknown(b, "bank",
                           {"b_max", "b_schedule", "lambda", "ridge", "ema_momentum",
                            "kernel", "bandwidth", "anchor_sign"});
    read(b, "b_max", cfg.plan.bank.b_max);
    read(b, "b_schedule", cfg.plan.bank.b_schedule);
    read(b, "lambda", cfg.plan.bank.lambda);
    read(b, "ridge", cfg.plan.bank.ridge);
    read(b, "ema_momentum", cfg.plan.bank.ema_momentum);
    if (b.contains("kernel"))
      cfg.plan.bank.kernel.kind = detail::parse_kernel(b.at("kernel").get<std::string>());
    read(b, "bandwidth", cfg.plan.bank.kernel.bandwidth);
    read(b, "anchor_sign", cfg.plan.bank.anchor_sign);
  }
  cfg.plan.sgd.momentum_stat = cfg.plan.bank.ema_momentum;
  cfg.plan.base_sgd.momentum_stat = cfg.plan.bank.ema_momentum;

  if (cfg.manifest.empty()) cfg.stream.validate();
  cfg.plan.validate();
  if (cfg.plan.bank.anchor_sign != 1.0 && cfg.plan.bank.anchor_sign != -1.0)
    throw config_error("config: anchor_sign must be 1 or -1");
  return cfg;
}

// Canonical echo of every resolved field, in stable order.
inline nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.plan.seed;
  j["output_dir"] = cfg.output_dir;

  nlohmann::ordered_json stream;
  if (!cfg.manifest.empty()) {
    stream["manifest"] = cfg.manifest;
  } else {
    stream["base_classes"] = cfg.stream.base_classes;
    stream["sessions"] = cfg.stream.incremental_sessions;
    stream["n_way"] = cfg.stream.n_way;
    stream["k_shot"] = cfg.stream.k_shot;
    stream["input_dim"] = cfg.stream.input_dim;
    stream["separation"] = cfg.stream.separation;
    stream["variance"] = cfg.stream.variance;
    stream["base_train_per_class"] = cfg.stream.base_train_per_class;
    stream["test_per_class"] = cfg.stream.test_per_class;
  }
  j["stream"] = stream;

  nlohmann::ordered_json plan;
  plan["base_epochs"] = cfg.plan.base_epochs;
  plan["incremental_epochs"] = cfg.plan.incremental_epochs;
  plan["episodes_per_epoch"] = cfg.plan.episodes_per_epoch;
  plan["batch_size"] = cfg.plan.batch_size;
  plan["alpha1"] = cfg.plan.margins.alpha1;
  plan["alpha2"] = cfg.plan.margins.alpha2;
  plan["loss_mode"] = to_string(cfg.plan.loss_mode);
  plan["hinge"] = cfg.plan.hinge;
  plan["initial_lr"] = cfg.plan.sgd.initial_lr;
  plan["base_lr"] = cfg.plan.base_sgd.initial_lr;
  plan["milestones"] = nlohmann::ordered_json::array();
  for (const auto& m : cfg.plan.sgd.milestones)
    plan["milestones"].push_back({m.epoch, m.multiplier});
  plan["base_milestones"] = nlohmann::ordered_json::array();
  for (const auto& m : cfg.plan.base_sgd.milestones)
    plan["base_milestones"].push_back({m.epoch, m.multiplier});
  plan["weight_decay"] = cfg.plan.sgd.weight_decay;
  plan["trainable_fraction"] = cfg.plan.trainable_fraction;
  plan["episode_classes"] = cfg.plan.episode.episode_classes;
  plan["support_per_class"] = cfg.plan.episode.support_per_class;
  plan["query_per_class"] = cfg.plan.episode.query_per_class;
  plan["p_bank_negative"] = cfg.plan.episode.p_bank_negative;
  plan["hidden_dims"] = cfg.plan.hidden_dims;
  plan["embedding_dim"] = cfg.plan.embedding_dim;
  plan["calibrate_per_query"] = cfg.plan.calibrate_per_query;
  plan["classify_avg_copies"] = cfg.plan.classify_avg_copies;
  plan["baseline"] = cfg.plan.baseline == TrainPlan::Baseline::kFinetune ? "finetune" : "none";
  j["plan"] = plan;

  nlohmann::ordered_json bank;
  bank["b_max"] = cfg.plan.bank.b_max;
  bank["b_schedule"] = cfg.plan.bank.b_schedule;
  bank["lambda"] = cfg.plan.bank.lambda;
  bank["ridge"] = cfg.plan.bank.ridge;
  bank["ema_momentum"] = cfg.plan.bank.ema_momentum;
  bank["kernel"] = detail::kernel_name(cfg.plan.bank.kernel.kind);
  bank["bandwidth"] = cfg.plan.bank.kernel.bandwidth;
  bank["anchor_sign"] = cfg.plan.bank.anchor_sign;
  j["bank"] = bank;
  return j;
}

// Flag override table: key -> (section, json key, value kind). Flag values
// arrive as strings and are parsed by kind before being spliced into the
// config JSON, so `--key value` always wins over the file.
enum class OverrideKind { kUnsigned, kDouble, kBool, kString, kUintList, kMilestones };

struct OverrideSpec {
  const char* key;
  const char* section;  // "", "stream", "plan", "bank"
  OverrideKind kind;
};

inline const std::vector<OverrideSpec>& override_table() {
  static const std::vector<OverrideSpec> table = {
      {"seed", "", OverrideKind::kUnsigned},
      {"output_dir", "", OverrideKind::kString},
      {"manifest", "stream", OverrideKind::kString},
      {"base_classes", "stream", OverrideKind::kUnsigned},
      {"sessions", "stream", OverrideKind::kUnsigned},
      {"n_way", "stream", OverrideKind::kUnsigned},
      {"k_shot", "stream", OverrideKind::kUnsigned},
      {"input_dim", "stream", OverrideKind::kUnsigned},
      {"separation", "stream", OverrideKind::kDouble},
      {"variance", "stream", OverrideKind::kDouble},
      {"base_train_per_class", "stream", OverrideKind::kUnsigned},
      {"test_per_class", "stream", OverrideKind::kUnsigned},
      {"base_epochs", "plan", OverrideKind::kUnsigned},
      {"incremental_epochs", "plan", OverrideKind::kUnsigned},
      {"episodes_per_epoch", "plan", OverrideKind::kUnsigned},
      {"batch_size", "plan", OverrideKind::kUnsigned},
      {"alpha1", "plan", OverrideKind::kDouble},
      {"alpha2", "plan", OverrideKind::kDouble},
      {"loss_mode", "plan", OverrideKind::kString},
      {"hinge", "plan", OverrideKind::kBool},
      {"initial_lr", "plan", OverrideKind::kDouble},
      {"base_lr", "plan", OverrideKind::kDouble},
      {"milestones", "plan", OverrideKind::kMilestones},
      {"base_milestones", "plan", OverrideKind::kMilestones},
      {"weight_decay", "plan", OverrideKind::kDouble},
      {"trainable_fraction", "plan", OverrideKind::kDouble},
      {"episode_classes", "plan", OverrideKind::kUnsigned},
      {"support_per_class", "plan", OverrideKind::kUnsigned},
      {"query_per_class", "plan", OverrideKind::kUnsigned},
      {"p_bank_negative", "plan", OverrideKind::kDouble},
      {"hidden_dims", "plan", OverrideKind::kUintList},
      {"embedding_dim", "plan", OverrideKind::kUnsigned},
      {"calibrate_per_query", "plan", OverrideKind::kBool},
      {"classify_avg_copies", "plan", OverrideKind::kBool},
      {"baseline", "plan", OverrideKind::kString},
      {"b_max", "bank", OverrideKind::kUnsigned},
      {"b_schedule", "bank", OverrideKind::kUintList},
      {"lambda", "bank", OverrideKind::kDouble},
      {"ridge", "bank", OverrideKind::kDouble},
      {"ema_momentum", "bank", OverrideKind::kDouble},
      {"kernel", "bank", OverrideKind::kString},
      {"bandwidth", "bank", OverrideKind::kDouble},
      {"anchor_sign", "bank", OverrideKind::kDouble},
  };
  return table;
}

namespace detail {

inline nlohmann::json parse_override_value(const OverrideSpec& spec, const std::string& value) {
  auto bad = [&]() {
    return config_error("config: bad value '" + value + "' for --" + spec.key);
  };
  try {
    switch (spec.kind) {
      case OverrideKind::kUnsigned:
        return nlohmann::json(static_cast<uint64_t>(std::stoull(value)));
      case OverrideKind::kDouble:
        return nlohmann::json(std::stod(value));
      case OverrideKind::kBool:
        if (value == "true" || value == "1") return nlohmann::json(true);
        if (value == "false" || value == "0") return nlohmann::json(false);
        throw bad();
      case OverrideKind::kString:
        return nlohmann::json(value);
      case OverrideKind::kUintList: {
        nlohmann::json list = nlohmann::json::array();
        size_t start = 0;
        while (start <= value.size()) {
          const size_t comma = value.find(',', start);
          const std::string item = value.substr(
              start, comma == std::string::npos ? std::string::npos : comma - start);
          if (!item.empty()) list.push_back(static_cast<uint64_t>(std::stoull(item)));
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
        return list;
      }
      case OverrideKind::kMilestones: {
        // "25:0.2,35:0.2" -> [[25,0.2],[35,0.2]]
        nlohmann::json list = nlohmann::json::array();
        size_t start = 0;
        while (start < value.size()) {
          const size_t comma = value.find(',', start);
          const std::string item = value.substr(
              start, comma == std::string::npos ? std::string::npos : comma - start);
          const size_t colon = item.find(':');
          if (colon == std::string::npos) throw bad();
          list.push_back({static_cast<uint64_t>(std::stoull(item.substr(0, colon))),
                          std::stod(item.substr(colon + 1))});
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
        return list;
      }
    }
  } catch (const config_error&) {
    throw;
  } catch (const std::exception&) {
    throw bad();
  }
  throw bad();
}

}  // namespace detail

inline void apply_override(nlohmann::json& root, const std::string& key,
                           const std::string& value) {
  for (const auto& spec : override_table()) {
    if (key != spec.key) continue;
    const nlohmann::json parsed = detail::parse_override_value(spec, value);
    if (key == "manifest") {
      // a manifest flag supersedes any synthetic stream keys from the file
      root["stream"] = nlohmann::json{{"manifest", parsed}};
    } else if (spec.section[0] == '\0') {
      root[spec.key] = parsed;
    } else {
      root[spec.section][spec.key] = parsed;
    }
    return;
  }
  throw config_error("config: no overridable key named '" + key + "'");
}

// Assembles the effective config: file (optional), then PQ_SEED, then flags.
inline RunConfig resolve_config(const std::string& config_path,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  nlohmann::json root = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw io_error("cannot open config: " + config_path);
    try {
      in >> root;
    } catch (const nlohmann::json::exception& e) {
      throw config_error("config parse error: " + std::string(e.what()));
    }
  }
  if (const char* env_seed = std::getenv("PQ_SEED"))
    apply_override(root, "seed", env_seed);
  for (const auto& [key, value] : overrides) apply_override(root, key, value);
  return parse_run_config(root);
}

}  // namespace protoquad
