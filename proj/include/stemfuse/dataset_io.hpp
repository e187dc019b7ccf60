// Dataset files: comma-separated UTF-8 with header `id,T,S,X1..XK,Y1..YM`.
// T is blank or NA when missing; S may be omitted and is then derived from
// the symptom columns. Lines starting with '#' are comments.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "model.hpp"

namespace stemfuse {

class IngestError : public std::runtime_error {
 public:
  IngestError(const std::string& what, std::size_t line) : std::runtime_error(what), line_(line) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Shortest decimal text that reads back to the same double.
[[nodiscard]] inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

[[nodiscard]] inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[nodiscard]] inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[nodiscard]] inline std::optional<int> parse_binary(std::string_view s) {
  if (s == "0") return 0;
  if (s == "1") return 1;
  return std::nullopt;
}

[[nodiscard]] inline std::optional<double> parse_real(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

/// Index of a `<prefix><k>` column, 1-based k, or nullopt.
[[nodiscard]] inline std::optional<std::size_t> indexed_column(std::string_view name, char prefix) {
  if (name.size() < 2 || (name[0] != prefix && name[0] != static_cast<char>(prefix + ('a' - 'A')))) return std::nullopt;
  std::size_t k = 0;
  const auto res = std::from_chars(name.data() + 1, name.data() + name.size(), k);
  if (res.ec != std::errc{} || res.ptr != name.data() + name.size() || k == 0) return std::nullopt;
  return k;
}

}  // namespace detail

struct IngestOptions {
  bool validate = true;  // reject records that break the model invariants
};

/// Parses a dataset from a stream; `source` names it in error messages.
[[nodiscard]] inline Dataset parse_dataset(std::istream& in, const IngestOptions& opt = {}, const std::string& source = "input") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
    if (!detail::trim(line).empty() && line[0] != '#') break;
    line.clear();
  }
  if (detail::trim(line).empty()) throw IngestError(source + ": missing header row", lineno);
  const auto header = detail::split_csv(line);
  std::optional<std::size_t> id_col, t_col, s_col;
  std::map<std::size_t, std::size_t> x_cols, y_cols;  // 1-based index -> column
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto h = header[c];
    if (h == "id" || h == "ID") id_col = c;
    else if (h == "T" || h == "t") t_col = c;
    else if (h == "S" || h == "s") s_col = c;
    else if (auto k = detail::indexed_column(h, 'X')) x_cols[*k] = c;
    else if (auto m = detail::indexed_column(h, 'Y')) y_cols[*m] = c;
    else throw IngestError(source + ":" + std::to_string(lineno) + ": unknown column '" + std::string(h) + "'", lineno);
  }
  if (!id_col) throw IngestError(source + ":" + std::to_string(lineno) + ": header lacks an id column", lineno);
  if (!t_col) throw IngestError(source + ":" + std::to_string(lineno) + ": header lacks a T column", lineno);
  const auto contiguous = [](const std::map<std::size_t, std::size_t>& cols) {
    return cols.empty() || cols.rbegin()->first == cols.size();
  };
  if (!contiguous(x_cols) || !contiguous(y_cols)) {
    throw IngestError(source + ":" + std::to_string(lineno) + ": symptom/risk columns must be numbered 1..K / 1..M", lineno);
  }

  Dataset d;
  d.k_symptoms = x_cols.size();
  d.m_factors = y_cols.size();
  std::vector<std::size_t> record_lines;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty() || line[0] == '#') continue;
    const auto f = detail::split_csv(line);
    const auto where = source + ":" + std::to_string(lineno);
    if (f.size() != header.size()) {
      throw IngestError(where + ": expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()), lineno);
    }
    SubjectRecord r;
    r.id = std::string(f[*id_col]);
    if (r.id.empty()) throw IngestError(where + ": empty id", lineno);
    const auto tv = f[*t_col];
    if (!(tv.empty() || tv == "NA" || tv == "na")) {
      const auto t = detail::parse_binary(tv);
      if (!t) throw IngestError(where + ": T must be 0, 1, blank or NA", lineno);
      r.t = *t;
    }
    r.x.reserve(x_cols.size());
    for (const auto& [k, c] : x_cols) {
      const auto v = detail::parse_binary(f[c]);
      if (!v) throw IngestError(where + ": X" + std::to_string(k) + " must be 0 or 1", lineno);
      r.x.push_back(*v);
    }
    if (s_col) {
      const auto v = detail::parse_binary(f[*s_col]);
      if (!v) throw IngestError(where + ": S must be 0 or 1", lineno);
      r.s = *v;
    } else {
      r.s = std::any_of(r.x.begin(), r.x.end(), [](int v) { return v == 1; }) ? 1 : 0;
    }
    r.y.reserve(y_cols.size());
    for (const auto& [m, c] : y_cols) {
      const auto v = detail::parse_real(f[c]);
      if (!v) throw IngestError(where + ": Y" + std::to_string(m) + " must be a finite decimal", lineno);
      r.y.push_back(*v);
    }
    d.records.push_back(std::move(r));
    record_lines.push_back(lineno);
  }

  if (opt.validate) {
    const auto v = validate_dataset(d);
    if (!v.empty()) {
      std::ostringstream msg;
      msg << source << ": " << v.size() << " record(s) rejected";
      for (std::size_t i = 0; i < std::min<std::size_t>(v.size(), 20); ++i) {
        msg << "\n  line " << record_lines[v[i].index] << " (" << v[i].record_id << "): " << v[i].rule;
      }
      throw IngestError(msg.str(), record_lines[v.front().index]);
    }
  }
  return d;
}

[[nodiscard]] inline Dataset ingest(const std::string& path, const IngestOptions& opt = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path, 0);
  return parse_dataset(in, opt, path);
}

inline void write_dataset(std::ostream& out, const Dataset& d) {
  out << "id,T,S";
  for (std::size_t k = 1; k <= d.k_symptoms; ++k) out << ",X" << k;
  for (std::size_t m = 1; m <= d.m_factors; ++m) out << ",Y" << m;
  out << '\n';
  for (const auto& r : d.records) {
    out << r.id << ',' << (r.t ? std::to_string(*r.t) : std::string("NA")) << ',' << r.s;
    for (int v : r.x) out << ',' << v;
    for (double v : r.y) out << ',' << format_double(v);
    out << '\n';
  }
}

inline void write_truth(std::ostream& out, const Dataset& d, const std::vector<int>& truth) {
  out << "id,D\n";
  for (std::size_t i = 0; i < d.size(); ++i) out << d.records[i].id << ',' << truth[i] << '\n';
}

}  // namespace stemfuse
