#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoquad/sampler.hpp"

namespace protoquad {

namespace detail {

// Shortest text that round-trips a 64-bit float.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw io_error("csv: bad float field '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

struct LabeledRows {
  std::vector<Vec> features;
  std::vector<uint32_t> labels;
};

// Feature CSV: header `label,f0,...,f{D-1}`, one sample per row.
inline void write_features_csv(const std::string& path, const LabeledRows& rows,
                               size_t input_dim) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open for writing: " + path);
  out << "label";
  for (size_t i = 0; i < input_dim; ++i) out << ",f" << i;
  out << "\n";
  for (size_t r = 0; r < rows.features.size(); ++r) {
    out << rows.labels[r];
    for (double v : rows.features[r]) out << ',' << detail::format_double(v);
    out << "\n";
  }
  if (!out) throw io_error("write failed: " + path);
}

inline LabeledRows read_features_csv(const std::string& path, size_t expected_dim) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw io_error("csv: empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = detail::split_csv_line(line);
  if (header.empty() || header[0] != "label")
    throw io_error("csv: first header column must be 'label': " + path);
  if (header.size() != expected_dim + 1)
    throw io_error("csv: expected " + std::to_string(expected_dim) +
                   " feature columns, found " + std::to_string(header.size() - 1) + ": " + path);
  for (size_t i = 1; i < header.size(); ++i)
    if (header[i] != "f" + std::to_string(i - 1))
      throw io_error("csv: bad header column '" + std::string(header[i]) + "': " + path);

  LabeledRows rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != expected_dim + 1)
      throw io_error("csv: row " + std::to_string(lineno) + " has " +
                     std::to_string(fields.size()) + " fields, expected " +
                     std::to_string(expected_dim + 1) + ": " + path);
    uint32_t label = 0;
    const auto [p, ec] =
        std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), label);
    if (ec != std::errc{} || p != fields[0].data() + fields[0].size())
      throw io_error("csv: bad label on row " + std::to_string(lineno) + ": " + path);
    Vec f(expected_dim);
    for (size_t i = 0; i < expected_dim; ++i) f[i] = detail::parse_double(fields[i + 1]);
    rows.labels.push_back(label);
    rows.features.push_back(std::move(f));
  }
  return rows;
}

// Sidecar manifest assigning labels to sessions. CSV paths are resolved
// relative to the manifest's directory.
inline void save_stream(const std::string& dir, const SessionStream& stream) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);

  LabeledRows train, test;
  for (const auto& s : stream.train)
    for (size_t i = 0; i < s.features.size(); ++i) {
      train.features.push_back(s.features[i]);
      train.labels.push_back(s.labels[i]);
    }
  for (const auto& s : stream.test)
    for (size_t i = 0; i < s.features.size(); ++i) {
      test.features.push_back(s.features[i]);
      test.labels.push_back(s.labels[i]);
    }
  write_features_csv((fs::path(dir) / "train.csv").string(), train, stream.input_dim);
  write_features_csv((fs::path(dir) / "test.csv").string(), test, stream.input_dim);

  nlohmann::ordered_json manifest;
  manifest["input_dim"] = stream.input_dim;
  manifest["train_csv"] = "train.csv";
  manifest["test_csv"] = "test.csv";
  manifest["sessions"] = nlohmann::ordered_json::array();
  for (const auto& s : stream.train) {
    nlohmann::ordered_json session;
    session["labels"] = s.label_set;
    manifest["sessions"].push_back(session);
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw io_error("cannot open manifest for writing in " + dir);
  out << manifest.dump(2) << "\n";
}

inline SessionStream load_stream(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  if (!in) throw io_error("cannot open manifest: " + manifest_path);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("manifest parse error: " + std::string(e.what()));
  }
  for (const auto& [key, _] : manifest.items())
    if (key != "input_dim" && key != "train_csv" && key != "test_csv" && key != "sessions")
      throw config_error("manifest: unknown key '" + key + "'");
  if (!manifest.contains("input_dim") || !manifest.contains("sessions") ||
      !manifest.contains("train_csv") || !manifest.contains("test_csv"))
    throw config_error("manifest: input_dim, train_csv, test_csv, sessions are required");

  SessionStream stream;
  stream.input_dim = manifest["input_dim"].get<size_t>();
  const fs::path base = fs::path(manifest_path).parent_path();
  const LabeledRows train = read_features_csv(
      (base / manifest["train_csv"].get<std::string>()).string(), stream.input_dim);
  const LabeledRows test = read_features_csv(
      (base / manifest["test_csv"].get<std::string>()).string(), stream.input_dim);

  std::unordered_map<uint32_t, size_t> session_of;
  size_t session_index = 0;
  for (const auto& session : manifest["sessions"]) {
    if (!session.contains("labels"))
      throw config_error("manifest: each session needs a labels array");
    for (const auto& l : session["labels"]) {
      const uint32_t label = l.get<uint32_t>();
      if (session_of.count(label))
        throw config_error("manifest: label " + std::to_string(label) +
                           " assigned to more than one session");
      session_of[label] = session_index;
    }
    ++session_index;
  }
  stream.total_classes = session_of.size();

  stream.train.resize(session_index);
  stream.test.resize(session_index);
  for (size_t s = 0; s < session_index; ++s) {
    stream.train[s].session_index = s;
    stream.test[s].session_index = s;
  }
  auto distribute = [&](const LabeledRows& rows, std::vector<SessionDataset>& dst,
                        const char* what) {
    for (size_t i = 0; i < rows.features.size(); ++i) {
      auto it = session_of.find(rows.labels[i]);
      if (it == session_of.end())
        throw config_error(std::string(what) + ": label " + std::to_string(rows.labels[i]) +
                           " is not assigned to any session");
      dst[it->second].features.push_back(rows.features[i]);
      dst[it->second].labels.push_back(rows.labels[i]);
    }
    for (auto& d : dst) d.finalize();
  };
  distribute(train, stream.train, "train csv");
  distribute(test, stream.test, "test csv");

  for (size_t s = 0; s < session_index; ++s)
    if (stream.train[s].features.empty())
      throw config_error("manifest: session " + std::to_string(s) + " has no training rows");

  validate_stream(stream);
  return stream;
}

}  // namespace protoquad
