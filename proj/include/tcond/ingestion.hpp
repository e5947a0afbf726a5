#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tcond/csv.hpp"
#include "tcond/data_model.hpp"
#include "tcond/error.hpp"
#include "tcond/time.hpp"

namespace tcond {

struct RowIssue {
  std::size_t line;
  std::string message;
};

struct ParsedRecords {
  std::vector<TravelTimeRecord> records;
  std::size_t malformed = 0;
  std::vector<RowIssue> issues; // the first few malformed rows, for the report
};

// Reads `timestamp,link_ref,travel_time` rows in file order. Malformed rows are
// tallied; with `strict` the first one raises ParseError.
inline ParsedRecords parse_records(std::istream& in, bool strict = false) {
  if (!in) throw IoError("travel-time stream is not readable");
  constexpr std::size_t kMaxIssues = 20;
  ParsedRecords out;
  std::string line;
  if (!csv::read_line(in, line)) throw ParseError(1, "missing header");
  if (csv::split(line) != std::vector<std::string>{"timestamp", "link_ref", "travel_time"})
    throw ParseError(1, "expected header `timestamp,link_ref,travel_time`");

  std::size_t lineno = 1;
  auto reject = [&](std::string msg) {
    if (strict) throw ParseError(lineno, msg);
    ++out.malformed;
    if (out.issues.size() < kMaxIssues) out.issues.push_back({lineno, std::move(msg)});
  };

  while (csv::read_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = csv::split(line);
    if (f.size() != 3) {
      reject("expected 3 fields, got " + std::to_string(f.size()));
      continue;
    }
    TravelTimeRecord r;
    try {
      r.timestamp = DateTime::parse(f[0]);
    } catch (const InvalidInput& e) {
      reject(e.what());
      continue;
    }
    if (f[1].empty()) {
      reject("empty link_ref");
      continue;
    }
    const auto tt = csv::to_double(f[2]);
    if (!tt || !std::isfinite(*tt)) {
      reject("travel_time is not a number: '" + f[2] + "'");
      continue;
    }
    if (*tt <= 0.0) {
      reject("travel_time must be positive, got " + f[2]);
      continue;
    }
    r.link_ref = std::move(f[1]);
    r.travel_time = *tt;
    out.records.push_back(std::move(r));
  }
  if (in.bad()) throw IoError("read error in travel-time stream");
  return out;
}

inline std::int64_t interval_seconds(std::size_t n_intervals) {
  if (n_intervals == 0 || kSecondsPerDay % static_cast<std::int64_t>(n_intervals) != 0)
    throw InvalidInput("n_intervals must divide 86400, got " + std::to_string(n_intervals));
  return kSecondsPerDay / static_cast<std::int64_t>(n_intervals);
}

// Interval j holds time-of-day in [j*delta, (j+1)*delta).
inline std::size_t interval_of(DateTime t, std::size_t n_intervals) {
  return static_cast<std::size_t>(t.seconds_of_day() / interval_seconds(n_intervals));
}

// Day x interval mean travel times of one link; NaN marks a cell with no observation.
class LinkMatrix {
public:
  LinkMatrix() = default;
  LinkMatrix(std::string link_ref, Date start, Eigen::MatrixXd values, Eigen::MatrixXi counts)
      : link_ref_(std::move(link_ref)), start_(start), values_(std::move(values)),
        counts_(std::move(counts)) {
    if (values_.rows() != counts_.rows() || values_.cols() != counts_.cols())
      throw ShapeMismatch("values and counts of '" + link_ref_ + "' differ in shape");
    for (Eigen::Index i = 0; i < values_.rows(); ++i)
      for (Eigen::Index j = 0; j < values_.cols(); ++j) {
        const bool miss = std::isnan(values_(i, j));
        if (miss != (counts_(i, j) == 0))
          throw InvalidInput("cell is missing iff its count is zero");
        if (!miss && !(values_(i, j) > 0.0 && std::isfinite(values_(i, j))))
          throw InvalidInput("observed cells must be positive and finite");
      }
  }

  static constexpr double missing() noexcept { return std::numeric_limits<double>::quiet_NaN(); }

  const std::string& link_ref() const noexcept { return link_ref_; }
  Date start_date() const noexcept { return start_; }
  std::size_t n_days() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  std::size_t n_intervals() const noexcept { return static_cast<std::size_t>(values_.cols()); }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  const Eigen::MatrixXi& counts() const noexcept { return counts_; }
  bool is_missing(std::size_t i, std::size_t j) const {
    return counts_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) == 0;
  }

private:
  std::string link_ref_;
  Date start_;
  Eigen::MatrixXd values_;
  Eigen::MatrixXi counts_;
};

struct MatrixBuild {
  std::map<std::string, LinkMatrix> matrices;
  std::size_t in_window = 0;
  std::size_t out_of_window = 0;
};

// Aggregates records into one LinkMatrix per link. Values inside a cell are
// summed in sorted order so the result does not depend on record order.
inline MatrixBuild build_matrices(const std::vector<TravelTimeRecord>& records, Date start,
                                  std::size_t n_days, std::size_t n_intervals) {
  if (n_days == 0) throw InvalidInput("n_days must be at least 1");
  const auto delta = interval_seconds(n_intervals);
  const DateTime lo(start, 0);
  const DateTime hi(start + static_cast<std::int32_t>(n_days), 0);

  MatrixBuild out;
  std::unordered_map<std::string, std::vector<std::pair<std::int64_t, double>>> cells;
  for (const auto& r : records) {
    if (r.timestamp < lo || !(r.timestamp < hi)) {
      ++out.out_of_window;
      continue;
    }
    ++out.in_window;
    const auto day = r.timestamp.date() - start;
    const auto j = r.timestamp.seconds_of_day() / delta;
    cells[r.link_ref].emplace_back(static_cast<std::int64_t>(day) * static_cast<std::int64_t>(n_intervals) + j,
                                   r.travel_time);
  }

  const auto rows = static_cast<Eigen::Index>(n_days);
  const auto cols = static_cast<Eigen::Index>(n_intervals);
  for (auto& [link, obs] : cells) {
    std::sort(obs.begin(), obs.end());
    Eigen::MatrixXd values = Eigen::MatrixXd::Constant(rows, cols, LinkMatrix::missing());
    Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(rows, cols);
    std::size_t k = 0;
    while (k < obs.size()) {
      const auto cell = obs[k].first;
      double sum = 0.0;
      int n = 0;
      for (; k < obs.size() && obs[k].first == cell; ++k, ++n) sum += obs[k].second;
      const auto i = static_cast<Eigen::Index>(cell / static_cast<std::int64_t>(n_intervals));
      const auto j = static_cast<Eigen::Index>(cell % static_cast<std::int64_t>(n_intervals));
      values(i, j) = sum / n;
      counts(i, j) = n;
    }
    out.matrices.emplace(link, LinkMatrix(link, start, std::move(values), std::move(counts)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix cache: one CSV per link (rows = days, cols = intervals, empty cell =
// missing) plus a `.counts.csv` sibling and a manifest.json carrying the shape.

namespace detail {

inline std::string safe_file_stem(std::size_t index, const std::string& link) {
  std::string s = std::to_string(index);
  s.insert(0, 5 - std::min<std::size_t>(5, s.size()), '0');
  s += '_';
  for (char c : link) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-') ? c : '_';
  return s;
}

} // namespace detail

inline void write_matrix_cache(const std::filesystem::path& dir,
                               const std::map<std::string, LinkMatrix>& matrices, Date start,
                               std::size_t n_days, std::size_t n_intervals) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["start_date"] = start.str();
  manifest["n_days"] = n_days;
  manifest["n_intervals"] = n_intervals;
  manifest["links"] = nlohmann::json::array();
  std::size_t idx = 0;
  for (const auto& [link, m] : matrices) {
    const auto stem = detail::safe_file_stem(idx++, link);
    std::ofstream vf(dir / (stem + ".csv")), cf(dir / (stem + ".counts.csv"));
    if (!vf || !cf) throw IoError("cannot write matrix cache in " + dir.string());
    for (Eigen::Index i = 0; i < m.values().rows(); ++i) {
      for (Eigen::Index j = 0; j < m.values().cols(); ++j) {
        if (j) {
          vf << ',';
          cf << ',';
        }
        if (m.counts()(i, j) > 0) vf << csv::fmt(m.values()(i, j));
        cf << m.counts()(i, j);
      }
      vf << '\n';
      cf << '\n';
    }
    manifest["links"].push_back({{"link_ref", link}, {"file", stem}});
  }
  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << '\n';
}

inline std::map<std::string, LinkMatrix> read_matrix_cache(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("no matrix cache manifest in " + dir.string());
  const auto manifest = nlohmann::json::parse(mf);
  const Date start = Date::parse(manifest.at("start_date").get<std::string>());
  const auto rows = manifest.at("n_days").get<Eigen::Index>();
  const auto cols = manifest.at("n_intervals").get<Eigen::Index>();
  std::map<std::string, LinkMatrix> out;
  for (const auto& entry : manifest.at("links")) {
    const auto link = entry.at("link_ref").get<std::string>();
    const auto stem = entry.at("file").get<std::string>();
    std::ifstream vf(dir / (stem + ".csv")), cf(dir / (stem + ".counts.csv"));
    if (!vf || !cf) throw IoError("matrix cache file missing for link '" + link + "'");
    Eigen::MatrixXd values(rows, cols);
    Eigen::MatrixXi counts(rows, cols);
    std::string vl, cl;
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (!csv::read_line(vf, vl) || !csv::read_line(cf, cl))
        throw ParseError(static_cast<std::size_t>(i + 1), "truncated matrix cache for " + link);
      const auto vs = csv::split(vl);
      const auto cs = csv::split(cl);
      if (static_cast<Eigen::Index>(vs.size()) != cols || static_cast<Eigen::Index>(cs.size()) != cols)
        throw ParseError(static_cast<std::size_t>(i + 1), "wrong column count for " + link);
      for (Eigen::Index j = 0; j < cols; ++j) {
        const auto v = csv::to_double(vs[static_cast<std::size_t>(j)]);
        const auto c = csv::to_double(cs[static_cast<std::size_t>(j)]);
        values(i, j) = v ? *v : LinkMatrix::missing();
        counts(i, j) = c ? static_cast<int>(*c) : 0;
      }
    }
    out.emplace(link, LinkMatrix(link, start, std::move(values), std::move(counts)));
  }
  return out;
}

} // namespace tcond
