#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "odelap/common.hpp"
#include "odelap/inference.hpp"
#include "odelap/laplace.hpp"
#include "odelap/posterior.hpp"

namespace odelap {

using nlohmann::json;

/// FNV-1a over the canonical (sorted-key) JSON dump.
inline std::string config_hash(const json& config) {
  const std::string dump = config.dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

namespace io_detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write file: " + path);
  out << content;
}

inline json parse_json(const std::string& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw InputError("malformed JSON in " + path);
  return j;
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  require(j.is_array() && !j.empty(), "expected a non-empty matrix array");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    require(static_cast<int>(j[i].size()) == cols, "ragged matrix rows");
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline Vector vector_from_json(const json& j) {
  Vector v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

inline json vector_to_json(const Vector& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace io_detail

// ---------------------------------------------------------------- dataset CSV

/// Header `t,x1,...,xp` preceded by a `# config_hash=` comment line.
inline void save_dataset_csv(const std::string& path, const Dataset& data,
                             const std::string& hash) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "# config_hash=" << hash << "\n";
  out << "t";
  for (int j = 0; j < data.Y.cols(); ++j) out << ",x" << (j + 1);
  out << "\n";
  for (size_t i = 0; i < data.times.size(); ++i) {
    out << data.times[i];
    for (int j = 0; j < data.Y.cols(); ++j) out << "," << data.Y(i, j);
    out << "\n";
  }
  io_detail::write_file(path, out.str());
}

inline Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset: " + path);
  std::string line;
  std::vector<std::vector<double>> rows;
  int cols = -1;
  bool header_seen = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      require(line.rfind("t,", 0) == 0,
              "dataset header must start with 't,' (line " +
                  std::to_string(lineno) + ")");
      header_seen = true;
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        size_t used = 0;
        row.push_back(std::stod(cell, &used));
        require(used == cell.size(), "trailing characters");
      } catch (...) {
        throw InputError("bad numeric value at line " +
                         std::to_string(lineno) + ": '" + cell + "'");
      }
    }
    if (cols < 0) cols = static_cast<int>(row.size());
    require(static_cast<int>(row.size()) == cols,
            "inconsistent column count at line " + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  require(header_seen && cols >= 2 && rows.size() >= 2,
          "dataset needs a header, a time column, and at least two rows");

  Dataset data;
  data.Y.resize(rows.size(), cols - 1);
  for (size_t i = 0; i < rows.size(); ++i) {
    data.times.push_back(rows[i][0]);
    for (int j = 1; j < cols; ++j) data.Y(i, j - 1) = rows[i][j];
  }
  data.validate();
  return data;
}

// ------------------------------------------------------------------ mode JSON

inline void save_mode(const std::string& path, const ModeEstimate& mode,
                      const json& meta) {
  json j;
  j["lambda"] = mode.lambda;
  j["theta"] = io_detail::vector_to_json(mode.theta);
  j["X"] = io_detail::matrix_to_json(mode.X);
  j["meta"] = meta;
  j["meta"]["provenance"] = mode.provenance;
  j["meta"]["grad_sup_norm"] = mode.grad_sup_norm;
  io_detail::write_file(path, j.dump(2) + "\n");
}

inline ModeEstimate load_mode(const std::string& path, const Prior& prior) {
  const json j = io_detail::parse_json(path);
  require(j.contains("lambda") && j.contains("theta") && j.contains("X"),
          "mode file missing lambda/theta/X");
  ModeEstimate mode;
  mode.lambda = j["lambda"].get<double>();
  mode.theta = io_detail::vector_from_json(j["theta"]);
  mode.X = io_detail::matrix_from_json(j["X"]);
  mode.provenance = "loaded";
  if (j.contains("meta") && j["meta"].contains("grad_sup_norm"))
    mode.grad_sup_norm = j["meta"]["grad_sup_norm"].get<double>();

  require(std::isfinite(mode.lambda) && mode.lambda > 0.0,
          "mode lambda must be positive");
  require(mode.theta.allFinite() && mode.X.allFinite(),
          "mode contains non-finite values");
  for (size_t k = 0; k < prior.theta_bounds.size(); ++k)
    require(mode.theta[k] >= prior.theta_bounds[k].first &&
                mode.theta[k] <= prior.theta_bounds[k].second,
            "mode theta[" + std::to_string(k) + "] violates the prior bounds");
  for (size_t l = 0; l < prior.x0_bounds.size(); ++l)
    require(mode.X(0, l) >= prior.x0_bounds[l].first &&
                mode.X(0, l) <= prior.x0_bounds[l].second,
            "mode x0[" + std::to_string(l) + "] violates the prior bounds");
  return mode;
}

// ---------------------------------------------------------------- report JSON

inline void save_report(const std::string& path,
                        const CovarianceReport& report, const json& meta) {
  json j;
  j["method"] = report.method;
  j["labels"] = report.labels;
  j["covariance"] = io_detail::matrix_to_json(report.covariance.dense());
  j["correlation"] = io_detail::matrix_to_json(report.correlation.dense());
  j["variances"] = io_detail::vector_to_json(report.variances);
  j["flags"] = report.flags;
  j["pd_status"] = to_string(report.covariance.pd_status());
  j["meta"] = meta;
  io_detail::write_file(path, j.dump(2) + "\n");
}

inline CovarianceReport load_report(const std::string& path) {
  const json j = io_detail::parse_json(path);
  require(j.contains("method") && j.contains("labels") &&
              j.contains("covariance"),
          "report file missing method/labels/covariance");
  CovarianceReport report;
  report.method = j["method"].get<std::string>();
  report.labels = j["labels"].get<std::vector<std::string>>();
  report.covariance =
      SymmetricMatrix(io_detail::matrix_from_json(j["covariance"]));
  report.correlation =
      SymmetricMatrix(io_detail::matrix_from_json(j["correlation"]));
  report.variances = io_detail::vector_from_json(j["variances"]);
  if (j.contains("flags"))
    report.flags = j["flags"].get<std::vector<std::string>>();
  return report;
}

// ------------------------------------------------------------------ chain CSV

inline void save_chain_csv(const std::string& path, const Chain& chain,
                           const std::vector<std::string>& labels,
                           const std::string& hash) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "# config_hash=" << hash << "\n";
  for (size_t i = 0; i < labels.size(); ++i)
    out << (i ? "," : "") << labels[i];
  out << "\n";
  for (int r = 0; r < chain.samples.rows(); ++r) {
    for (int c = 0; c < chain.samples.cols(); ++c)
      out << (c ? "," : "") << chain.samples(r, c);
    out << "\n";
  }
  io_detail::write_file(path, out.str());
}

// --------------------------------------------------------------- matrices CSV

inline void save_matrix_csv(const std::string& path, const Matrix& m,
                            const std::vector<std::string>& labels,
                            const std::string& hash) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "# config_hash=" << hash << "\n";
  for (size_t i = 0; i < labels.size(); ++i)
    out << (i ? "," : "") << labels[i];
  out << "\n";
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
    out << "\n";
  }
  io_detail::write_file(path, out.str());
}

// ------------------------------------------------------------------- manifest

struct RunManifest {
  std::string hash;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> artifacts;
  std::vector<std::pair<std::string, double>> timings_sec;
  std::vector<std::string> flags;
};

inline void save_manifest(const std::string& path, const RunManifest& mf) {
  json j;
  j["config_hash"] = mf.hash;
  j["seeds"] = mf.seeds;
  j["artifacts"] = mf.artifacts;
  json t = json::object();
  for (const auto& [name, sec] : mf.timings_sec) t[name] = sec;
  j["timings_sec"] = t;
  j["flags"] = mf.flags;
  io_detail::write_file(path, j.dump(2) + "\n");
}

}  // namespace odelap
