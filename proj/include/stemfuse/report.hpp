// Report files: run manifest, chain, fit summary, posterior tables, subject
// diagnoses and benchmark tables. Every file carries the manifest of the run
// that produced it (`# manifest {...}` in tables, a "manifest" key in JSON).
// Wall-clock timings live only in timing files so that all other outputs are
// byte-identical across re-runs.

#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bench.hpp"
#include "config.hpp"
#include "dataset_io.hpp"
#include "engine.hpp"

namespace stemfuse {

inline constexpr const char* kSoftwareVersion = "0.3.1";

[[nodiscard]] inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 digest failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return out.str();
}

[[nodiscard]] inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct InputDigest {
  std::string role;
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  json config;
  std::vector<InputDigest> inputs;
  std::uint64_t seed = 0;
  std::string software_version = kSoftwareVersion;

  [[nodiscard]] json to_json() const {
    json in = json::array();
    for (const auto& d : inputs) in.push_back({{"role", d.role}, {"path", d.path}, {"sha256", d.sha256}});
    return {{"command", command}, {"config", config}, {"inputs", in}, {"seed", seed}, {"software_version", software_version}};
  }
  [[nodiscard]] std::string header_line() const { return "# manifest " + to_json().dump() + "\n"; }
};

/// Writes `content` to `path`, throwing on failure.
inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_json(const std::string& path, const RunManifest& m, json body) {
  body["manifest"] = m.to_json();
  write_file(path, body.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Chain

[[nodiscard]] inline std::vector<std::string> parameter_names(const Params& p) {
  std::vector<std::string> names{"x", "y", "p0", "p1"};
  for (std::size_t k = 1; k <= p.s0.size(); ++k) names.push_back("s0[" + std::to_string(k) + "]");
  for (std::size_t k = 1; k <= p.s1.size(); ++k) names.push_back("s1[" + std::to_string(k) + "]");
  if (p.imputed) {
    names.emplace_back("x_imputed");
    names.emplace_back("y_imputed");
  }
  for (std::size_t j = 0; j < p.beta.size(); ++j) names.push_back("beta[" + std::to_string(j) + "]");
  return names;
}

[[nodiscard]] inline std::string chain_table(const Chain& chain, const RunManifest& m) {
  std::ostringstream out;
  out << m.header_line();
  out << "# burn_in " << chain.burn_in << "\n# iterations " << chain.iterations << "\n# stop " << to_string(chain.stop) << "\n";
  if (chain.snapshots.empty()) return out.str();
  out << "iteration";
  for (const auto& n : parameter_names(chain.snapshots.front())) out << '\t' << n;
  out << '\n';
  for (std::size_t i = 0; i < chain.snapshots.size(); ++i) {
    out << i;
    for (double v : detail::flatten(chain.snapshots[i])) out << '\t' << format_double(v);
    out << '\n';
  }
  return out.str();
}

/// Per-iteration imputed diagnoses as 0/1 strings; imputed tests likewise, '-' where T was observed.
[[nodiscard]] inline std::string imputation_table(const Chain& chain, const RunManifest& m) {
  std::ostringstream out;
  out << m.header_line() << "iteration\td\tt_imputed\n";
  for (std::size_t i = 0; i < chain.imputations.size(); ++i) {
    const auto& imp = chain.imputations[i];
    std::string d(imp.d.size(), '0');
    std::string t(imp.d.size(), '-');
    for (std::size_t s = 0; s < imp.d.size(); ++s) {
      d[s] = imp.d[s] ? '1' : '0';
      if (s < imp.t_imputed.size() && imp.t_imputed[s]) t[s] = imp.t[s] ? '1' : '0';
    }
    out << i << '\t' << d << '\t' << t << '\n';
  }
  return out.str();
}

/// Reads the snapshots and burn-in back from a chain table.
[[nodiscard]] inline Chain read_chain(std::istream& in) {
  Chain chain;
  std::string line;
  std::vector<std::string> names;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# burn_in ", 0) == 0) {
      chain.burn_in = std::stoul(line.substr(10));
      continue;
    }
    if (line.rfind("# stop ", 0) == 0) {
      const auto s = line.substr(7);
      chain.stop = s == "converged" ? StopReason::converged : (s == "max_iters" ? StopReason::max_iters : StopReason::beta_fit_failed);
      continue;
    }
    if (line[0] == '#') continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, '\t')) cells.push_back(cell);
    if (names.empty()) {
      if (cells.empty() || cells[0] != "iteration") throw std::runtime_error("chain table: missing header");
      names.assign(cells.begin() + 1, cells.end());
      continue;
    }
    if (cells.size() != names.size() + 1) throw std::runtime_error("chain table: ragged row");
    Params shape;
    for (const auto& n : names) {
      if (n.rfind("s0[", 0) == 0) shape.s0.push_back(0.0);
      else if (n.rfind("s1[", 0) == 0) shape.s1.push_back(0.0);
      else if (n.rfind("beta[", 0) == 0) shape.beta.push_back(0.0);
      else if (n == "x_imputed") shape.imputed = TestRates{};
    }
    std::vector<double> values;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const auto v = detail::parse_real(cells[c]);
      if (!v) throw std::runtime_error("chain table: bad number '" + cells[c] + "'");
      values.push_back(*v);
    }
    chain.snapshots.push_back(detail::unflatten(values, shape));
  }
  chain.iterations = chain.snapshots.size();
  if (chain.snapshots.empty()) throw std::runtime_error("chain table: no snapshots");
  return chain;
}

// ---------------------------------------------------------------------------
// Fit outputs

[[nodiscard]] inline json params_json(const Params& p) {
  json j = {{"x", p.x}, {"y", p.y}, {"p0", p.p0}, {"p1", p.p1}, {"s0", p.s0}, {"s1", p.s1}, {"beta", p.beta}};
  if (p.imputed) j["imputed"] = {{"x", p.imputed->x}, {"y", p.imputed->y}};
  return j;
}

[[nodiscard]] inline json interval_json(const Interval& iv) {
  return {{"mean", iv.mean}, {"lower", iv.lower}, {"upper", iv.upper}};
}

[[nodiscard]] inline json summary_json(const StemResult& r) {
  json j;
  j["point_estimate"] = params_json(r.summary.point_estimate);
  j["iterations"] = r.chain.iterations;
  j["burn_in"] = r.chain.burn_in;
  j["stop"] = to_string(r.chain.stop);
  json params = json::array();
  for (const auto& s : r.summary.parameters) {
    json e = {{"name", s.name}, {"chain_mean", s.chain_mean}, {"chain_sd", s.chain_sd}, {"lower", s.lower}, {"upper", s.upper}};
    if (s.prior) e["prior"] = {{"alpha", s.prior->alpha}, {"beta", s.prior->beta}};
    if (s.conjugate) e["conjugate"] = {{"alpha", s.conjugate->alpha}, {"beta", s.conjugate->beta}};
    params.push_back(std::move(e));
  }
  j["parameters"] = std::move(params);
  json subjects = json::array();
  for (const auto& s : r.summary.subjects) {
    json e = {{"id", s.id}, {"questionnaire", interval_json(s.questionnaire)}};
    if (s.with_test) e["with_test"] = interval_json(*s.with_test);
    subjects.push_back(std::move(e));
  }
  j["subjects"] = std::move(subjects);
  return j;
}

/// Prior against posterior for every parameter, one row each.
[[nodiscard]] inline std::string parameter_table(const std::vector<ParameterSummary>& ps, const RunManifest& m) {
  std::ostringstream out;
  out << m.header_line();
  out << "parameter\tprior_alpha\tprior_beta\tprior_mean\tpost_alpha\tpost_beta\tpost_mean\tchain_mean\tchain_sd\tchain_lower\tchain_upper\n";
  const auto opt = [](const std::optional<BetaPrior>& b, auto f) { return b ? format_double(f(*b)) : std::string("NA"); };
  for (const auto& s : ps) {
    out << s.name << '\t' << opt(s.prior, [](auto b) { return b.alpha; }) << '\t' << opt(s.prior, [](auto b) { return b.beta; })
        << '\t' << opt(s.prior, [](auto b) { return b.mean(); }) << '\t'
        << opt(s.conjugate, [](auto b) { return b.alpha; }) << '\t' << opt(s.conjugate, [](auto b) { return b.beta; }) << '\t'
        << opt(s.conjugate, [](auto b) { return b.mean(); }) << '\t' << format_double(s.chain_mean) << '\t'
        << format_double(s.chain_sd) << '\t' << format_double(s.lower) << '\t' << format_double(s.upper) << '\n';
  }
  return out.str();
}

struct DiagnosisRow {
  std::string id;
  std::optional<int> t;
  SubjectPosterior posterior;
  std::string flag;
};

/// Per-subject rows with review flags. When the questionnaire posterior sits on
/// the other side of 1/2 from the test, a with-test interval wider than the
/// cohort median flags a potential false result; a narrower one whose call
/// still contradicts the test is reported as a reclassification.
[[nodiscard]] inline std::vector<DiagnosisRow> diagnose_subjects(const Dataset& data, const Chain& chain, const EngineConfig& cfg) {
  std::vector<DiagnosisRow> rows;
  rows.reserve(data.size());
  std::vector<double> widths;
  const auto draws = detail::posterior_draws(chain, cfg.n_posterior_draws, cfg.seed);
  for (const auto& r : data.records) {
    DiagnosisRow row{r.id, r.t, detail::summarize_subject(r, draws), ""};
    if (row.posterior.with_test) widths.push_back(row.posterior.with_test->width());
    rows.push_back(std::move(row));
  }
  const double median = widths.empty() ? 0.0 : quantile(widths, 0.5);
  for (auto& row : rows) {
    if (!row.t || !row.posterior.with_test) continue;
    const auto& wt = *row.posterior.with_test;
    const int test = *row.t;
    const int with_test_call = wt.mean > 0.5 ? 1 : 0;
    const int questionnaire_call = row.posterior.questionnaire.mean > 0.5 ? 1 : 0;
    if (questionnaire_call != test && wt.width() > median) {
      row.flag = test ? "potential_false_positive" : "potential_false_negative";
    } else if (with_test_call != test) {
      row.flag = test ? "reclassified_negative" : "reclassified_positive";
    }
  }
  return rows;
}

[[nodiscard]] inline std::string diagnosis_table(const std::vector<DiagnosisRow>& rows, const RunManifest& m) {
  std::ostringstream out;
  out << m.header_line();
  out << "id\tT\tquestionnaire_mean\tquestionnaire_lower\tquestionnaire_upper\twith_test_mean\twith_test_lower\twith_test_upper\t"
         "with_test_width\tflag\n";
  for (const auto& r : rows) {
    const auto& q = r.posterior.questionnaire;
    out << r.id << '\t' << (r.t ? std::to_string(*r.t) : "NA") << '\t' << format_double(q.mean) << '\t' << format_double(q.lower)
        << '\t' << format_double(q.upper);
    if (r.posterior.with_test) {
      const auto& w = *r.posterior.with_test;
      out << '\t' << format_double(w.mean) << '\t' << format_double(w.lower) << '\t' << format_double(w.upper) << '\t'
          << format_double(w.width());
    } else {
      out << "\tNA\tNA\tNA\tNA";
    }
    out << '\t' << (r.flag.empty() ? "-" : r.flag) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Benchmark outputs

/// Long-format accuracy table: one row per (cell, method), keyed by every grid
/// axis so heatmaps (sensitivity x specificity), n-sweeps and sigma-sweeps can
/// be cut from it directly.
[[nodiscard]] inline std::string benchmark_table(const BenchResult& r, const RunManifest& m) {
  std::ostringstream out;
  out << m.header_line();
  out << "cell\tsensitivity\tspecificity\tn\tsigma\tmethod\treplicates\tfailures\tmean_accuracy\tstd_accuracy\tmean_gain\tstd_gain\t"
         "mean_iterations\n";
  for (const auto& row : r.rows) {
    out << row.cell.index << '\t' << format_double(row.cell.sensitivity) << '\t' << format_double(row.cell.specificity) << '\t'
        << row.cell.n << '\t' << format_double(row.cell.sigma) << '\t' << to_string(row.method) << '\t' << row.replicates.size()
        << '\t' << row.failures << '\t' << format_double(row.mean_accuracy) << '\t' << format_double(row.std_accuracy) << '\t'
        << format_double(row.mean_gain) << '\t' << format_double(row.std_gain) << '\t' << format_double(row.mean_iterations)
        << '\n';
  }
  return out.str();
}

[[nodiscard]] inline std::string benchmark_timing_table(const BenchResult& r, const RunManifest& m) {
  std::ostringstream out;
  out << m.header_line() << "cell\tn\tmethod\tmean_seconds\tmean_seconds_per_iteration\n";
  for (const auto& row : r.rows) {
    out << row.cell.index << '\t' << row.cell.n << '\t' << to_string(row.method) << '\t' << format_double(row.mean_seconds) << '\t'
        << format_double(row.mean_seconds_per_iteration) << '\n';
  }
  return out.str();
}

}  // namespace stemfuse
