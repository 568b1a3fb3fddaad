// pq: few-shot class-incremental training and evaluation on feature streams.
//
// Subcommands:
//   gen-data  write a synthetic session stream (train/test CSV + manifest)
//   train     run base + incremental sessions, emit report and checkpoints
//   eval      score checkpoints against a dataset manifest
//   sweep     grid of train runs over hyperparameter values
//   report    merge report JSON files into one CSV table
//
// Exit codes: 0 ok, 1 usage, 2 config validation, 3 data I/O, 4 numerical
// failure (non-finite loss; the offending episode is logged to stderr).

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <thread>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "protoquad/checkpoint.hpp"
#include "protoquad/config.hpp"
#include "protoquad/dataio.hpp"
#include "protoquad/eval.hpp"
#include "protoquad/trainer.hpp"

namespace {

namespace pq = protoquad;
namespace fs = std::filesystem;

using Overrides = std::vector<std::pair<std::string, std::string>>;

std::string dashed(const std::string& key) {
  std::string out = key;
  for (char& c : out)
    if (c == '_') c = '-';
  return out;
}

// one --flag per overridable config key; bools also get a --no- form
void add_override_flags(CLI::App* cmd, std::shared_ptr<Overrides> store) {
  for (const auto& spec : pq::override_table()) {
    const std::string key = spec.key;
    std::string names = "--" + dashed(key);
    if (dashed(key) != key) names += ",--" + key;
    if (spec.kind == pq::OverrideKind::kBool) {
      cmd->add_flag_function(
          names, [store, key](int64_t) { store->emplace_back(key, "true"); },
          "set " + key + " = true");
      cmd->add_flag_function(
          "--no-" + dashed(key), [store, key](int64_t) { store->emplace_back(key, "false"); },
          "set " + key + " = false");
    } else {
      cmd->add_option_function<std::string>(
          names, [store, key](const std::string& v) { store->emplace_back(key, v); },
          "override config key " + key);
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw pq::io_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw pq::io_error("write failed: " + path.string());
}

pq::SessionStream obtain_stream(const pq::RunConfig& cfg) {
  if (!cfg.manifest.empty()) return pq::load_stream(cfg.manifest);
  pq::Rng data_rng = pq::Rng(cfg.plan.seed).derive(pq::kDataStream);
  return pq::make_session_stream(cfg.stream, data_rng);
}

int cmd_gen_data(const pq::RunConfig& cfg, const std::string& out_dir) {
  if (!cfg.manifest.empty())
    throw pq::config_error("gen-data: config already points at a manifest");
  pq::Rng data_rng = pq::Rng(cfg.plan.seed).derive(pq::kDataStream);
  const pq::SessionStream stream = pq::make_session_stream(cfg.stream, data_rng);
  pq::save_stream(out_dir, stream);
  std::cout << "wrote " << stream.total_classes << " classes over " << stream.train.size()
            << " sessions to " << out_dir << "\n";
  return 0;
}

pq::RunReport train_once(const pq::RunConfig& cfg, const pq::SessionStream& stream,
                         const std::string& out_dir, bool quiet) {
  const pq::StreamRun run = pq::run_stream(stream, cfg.plan);
  pq::RunReport report = run.report;
  report.config_echo = pq::config_to_json(cfg);

  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "report.json", pq::report_to_json(report).dump(2) + "\n");
  write_text(fs::path(out_dir) / "accuracy.csv", pq::accuracy_csv(report));
  pq::save_net((fs::path(out_dir) / "net.pqnet").string(), run.params, run.head, run.last_mask);
  pq::save_bank((fs::path(out_dir) / "bank.pqbank").string(), run.bank);

  if (!quiet) {
    for (size_t t = 0; t < report.cumulative.size(); ++t)
      std::cout << "session " << t + 1 << ": cumulative accuracy "
                << report.cumulative[t] << "\n";
    if (!std::isnan(report.bwt)) std::cout << "bwt " << report.bwt << "\n";
    std::cout << "memory: " << report.memory_vectors << " prototype vectors\n";
  }
  return report;
}

int cmd_train(const pq::RunConfig& cfg, const std::string& out_dir) {
  const pq::SessionStream stream = obtain_stream(cfg);
  train_once(cfg, stream, out_dir, /*quiet=*/false);
  return 0;
}

int cmd_eval(const std::string& net_path, const std::string& bank_path,
             const std::string& manifest, int upto, bool avg_copies) {
  const pq::NetCheckpoint net = pq::load_net(net_path);
  const pq::PrototypeBank bank = pq::load_bank(bank_path);
  const pq::SessionStream stream = pq::load_stream(manifest);
  const size_t last = upto < 0 ? stream.test.size() - 1 : static_cast<size_t>(upto);
  if (last >= stream.test.size())
    throw pq::config_error("eval: --session out of range for this manifest");

  const pq::SessionEval ev =
      pq::session_accuracy(bank, net.params, stream.test, last, avg_copies);
  nlohmann::ordered_json j;
  j["pooled_accuracy"] = ev.pooled;
  j["per_split"] = nlohmann::ordered_json::array();
  for (double v : ev.per_split)
    j["per_split"].push_back(std::isnan(v) ? nlohmann::ordered_json(nullptr)
                                           : nlohmann::ordered_json(v));
  j["samples"] = ev.total;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const Overrides& base_overrides,
              const std::vector<std::string>& params,
              const std::vector<std::string>& value_lists, const std::string& out_dir) {
  if (params.empty()) throw pq::config_error("sweep: at least one --param is required");
  if (params.size() != value_lists.size())
    throw pq::config_error("sweep: every --param needs a matching --values list");

  std::vector<std::vector<std::string>> grid_values;
  for (const auto& list : value_lists) {
    std::vector<std::string> vals;
    size_t start = 0;
    while (start <= list.size()) {
      const size_t comma = list.find(',', start);
      vals.push_back(list.substr(
          start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (vals.empty()) throw pq::config_error("sweep: empty --values list");
    grid_values.push_back(std::move(vals));
  }

  size_t cells = 1;
  for (const auto& v : grid_values) cells *= v.size();

  fs::create_directories(out_dir);
  const uint64_t base_seed = pq::resolve_config(config_path, base_overrides).plan.seed;

  struct Cell {
    std::vector<std::string> values;
    uint64_t seed = 0;
    std::string report_name;
    pq::RunReport report;
  };
  std::vector<Cell> grid(cells);
  for (size_t cell = 0; cell < cells; ++cell) {
    size_t rest = cell;
    for (size_t p = 0; p < params.size(); ++p) {
      const auto& vals = grid_values[p];
      grid[cell].values.push_back(vals[rest % vals.size()]);
      rest /= vals.size();
    }
    grid[cell].seed = base_seed ^ static_cast<uint64_t>(cell);
    char name[48];
    std::snprintf(name, sizeof(name), "report_%03zu.json", cell);
    grid[cell].report_name = name;
  }

  // cells are independent runs; fan out over a small worker pool
  std::atomic<size_t> next{0};
  std::vector<std::string> errors(cells);
  auto worker = [&]() {
    while (true) {
      const size_t cell = next.fetch_add(1);
      if (cell >= cells) return;
      try {
        Overrides overrides = base_overrides;
        for (size_t p = 0; p < params.size(); ++p)
          overrides.emplace_back(params[p], grid[cell].values[p]);
        overrides.emplace_back("seed", std::to_string(grid[cell].seed));
        pq::RunConfig cfg = pq::resolve_config(config_path, overrides);
        const pq::SessionStream stream = obtain_stream(cfg);
        const std::string cell_dir =
            (fs::path(out_dir) / ("cell_" + std::to_string(cell))).string();
        grid[cell].report = train_once(cfg, stream, cell_dir, /*quiet=*/true);
        fs::copy_file(fs::path(cell_dir) / "report.json",
                      fs::path(out_dir) / grid[cell].report_name,
                      fs::copy_options::overwrite_existing);
      } catch (const std::exception& e) {
        errors[cell] = e.what();
      }
    }
  };
  const size_t workers =
      std::min<size_t>(cells, std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (size_t cell = 0; cell < cells; ++cell)
    if (!errors[cell].empty())
      throw pq::config_error("sweep cell " + std::to_string(cell) + ": " + errors[cell]);

  std::string csv = "cell";
  for (const auto& p : params) csv += "," + p;
  csv += ",seed,final_cumulative,bwt,report\n";
  for (size_t cell = 0; cell < cells; ++cell) {
    char row[256];
    std::snprintf(row, sizeof(row), "%zu", cell);
    csv += row;
    for (const auto& v : grid[cell].values) csv += "," + v;
    std::snprintf(row, sizeof(row), ",%llu,%.17g,%.17g,%s\n",
                  static_cast<unsigned long long>(grid[cell].seed),
                  grid[cell].report.cumulative.back(), grid[cell].report.bwt,
                  grid[cell].report_name.c_str());
    csv += row;
    std::cout << "cell " << cell << ": final accuracy "
              << grid[cell].report.cumulative.back() << "\n";
  }
  write_text(fs::path(out_dir) / "sweep.csv", csv);
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_path) {
  if (inputs.empty()) throw pq::config_error("report: no input report files");
  std::vector<pq::RunReport> reports;
  size_t max_sessions = 0;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw pq::io_error("cannot open: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw pq::io_error("report parse error in " + path + ": " + e.what());
    }
    reports.push_back(pq::report_from_json(j));
    max_sessions = std::max(max_sessions, reports.back().cumulative.size());
  }

  std::string csv =
      "report,seed,baseline,loss_mode,alpha1,alpha2,lambda,b_max,trainable_fraction";
  for (size_t t = 1; t <= max_sessions; ++t) csv += ",a" + std::to_string(t);
  csv += ",bwt\n";
  char buf[64];
  for (size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const auto& e = r.config_echo;
    auto echo = [&](const char* section, const char* key) -> std::string {
      if (e.contains(section) && e[section].contains(key)) {
        const auto& v = e[section][key];
        return v.is_string() ? v.get<std::string>() : v.dump();
      }
      return "";
    };
    csv += fs::path(inputs[i]).filename().string();
    csv += "," + std::to_string(r.seed);
    csv += "," + echo("plan", "baseline");
    csv += "," + echo("plan", "loss_mode");
    csv += "," + echo("plan", "alpha1");
    csv += "," + echo("plan", "alpha2");
    csv += "," + echo("bank", "lambda");
    csv += "," + echo("bank", "b_max");
    csv += "," + echo("plan", "trainable_fraction");
    for (size_t t = 0; t < max_sessions; ++t) {
      if (t < r.cumulative.size()) {
        std::snprintf(buf, sizeof(buf), ",%.17g", r.cumulative[t]);
        csv += buf;
      } else {
        csv += ",";
      }
    }
    if (std::isnan(r.bwt)) {
      csv += ",\n";
    } else {
      std::snprintf(buf, sizeof(buf), ",%.17g\n", r.bwt);
      csv += buf;
    }
  }
  write_text(out_path, csv);
  std::cout << "wrote " << out_path << " (" << reports.size() << " runs)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prototypical-quadruplet class-incremental learning engine"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  auto overrides = std::make_shared<Overrides>();

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic session stream");
  gen->add_option("--config", config_path, "config JSON file");
  gen->add_option("--out", out_dir, "output directory");
  add_override_flags(gen, overrides);

  CLI::App* train = app.add_subcommand("train", "train on a stream and write reports");
  train->add_option("--config", config_path, "config JSON file");
  train->add_option("--out", out_dir, "output directory (default: config output_dir)");
  add_override_flags(train, overrides);

  CLI::App* eval = app.add_subcommand("eval", "score checkpoints on a manifest");
  std::string net_path, bank_path, manifest;
  int upto = -1;
  bool avg_copies = false;
  eval->add_option("--net", net_path, "PQNET1 checkpoint")->required();
  eval->add_option("--bank", bank_path, "PQBANK1 snapshot")->required();
  eval->add_option("--manifest", manifest, "dataset manifest JSON")->required();
  eval->add_option("--session", upto, "evaluate splits up to this 0-based session");
  eval->add_flag("--avg-copies", avg_copies, "classify against the mean of stored copies");

  CLI::App* sweep = app.add_subcommand("sweep", "grid of train runs");
  std::vector<std::string> sweep_params, sweep_values;
  sweep->add_option("--config", config_path, "config JSON file");
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_option("--param", sweep_params, "config key to sweep (repeatable)");
  sweep->add_option("--values", sweep_values, "comma-separated values (one per --param)");
  add_override_flags(sweep, overrides);

  CLI::App* report = app.add_subcommand("report", "merge report JSONs into a CSV table");
  std::vector<std::string> report_inputs;
  std::string report_out = "tables.csv";
  report->add_option("inputs", report_inputs, "report.json files")->required();
  report->add_option("--out", report_out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (sweep->parsed())
      return cmd_sweep(config_path, *overrides, sweep_params, sweep_values,
                       out_dir.empty() ? "sweep_out" : out_dir);
    if (gen->parsed() || train->parsed()) {
      // the echo must not depend on where results land, so --out never
      // touches the config itself
      const pq::RunConfig cfg = pq::resolve_config(config_path, *overrides);
      const std::string dir = out_dir.empty() ? cfg.output_dir : out_dir;
      return gen->parsed() ? cmd_gen_data(cfg, dir) : cmd_train(cfg, dir);
    }
    if (eval->parsed()) return cmd_eval(net_path, bank_path, manifest, upto, avg_copies);
    if (report->parsed()) return cmd_report(report_inputs, report_out);
  } catch (const pq::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pq::io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const pq::numerical_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
