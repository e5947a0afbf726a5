#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tcond/csv.hpp"
#include "tcond/error.hpp"
#include "tcond/ingestion.hpp"

namespace tcond {

struct CoverageStat {
  std::string link_ref;
  double coverage = 0.0;
};

// Dense day x interval matrix after imputation.
struct ImputedLinkMatrix {
  std::string link_ref;
  Date start_date;
  Eigen::MatrixXd values;
};

struct SegmentationResult {
  std::string link_ref;
  std::vector<std::size_t> change_points; // ascending, starts at 0
  std::size_t n_regimes = 0;
  double objective = 0.0; // sum of segment costs + penalty * (segments - 1)
};

struct SelectionCriteria {
  double beta = 0.70;
  std::size_t gamma = 1;
  std::size_t kernel_size = 5;

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidInput("beta must lie in [0,1]");
    if (gamma < 1) throw InvalidInput("gamma must be at least 1");
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw InvalidInput("kernel_size must be an odd count >= 1");
  }
};

inline CoverageStat coverage(const LinkMatrix& m) {
  const auto n = m.counts().size();
  if (n == 0) throw InvalidInput("coverage of an empty matrix");
  const auto observed = (m.counts().array() > 0).count();
  return {m.link_ref(), static_cast<double>(observed) / static_cast<double>(n)};
}

// Fills each missing cell with the Gaussian-weighted mean of the observed cells
// in the kernel_size x kernel_size window around it, sigma = window / 3. When a
// window holds no observation its radius doubles (sigma follows the window).
inline ImputedLinkMatrix impute(const LinkMatrix& m, std::size_t kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw InvalidInput("kernel_size must be an odd count >= 1");
  if ((m.counts().array() > 0).count() == 0) throw EmptyMatrix(m.link_ref());

  const auto rows = m.values().rows();
  const auto cols = m.values().cols();
  ImputedLinkMatrix out{m.link_ref(), m.start_date(), m.values()};
  const auto& counts = m.counts();
  const auto& src = m.values();

  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (counts(i, j) > 0) continue;
      Eigen::Index radius = static_cast<Eigen::Index>(kernel_size / 2);
      for (;;) {
        const double sigma = static_cast<double>(2 * radius + 1) / 3.0;
        const double denom = 2.0 * sigma * sigma;
        double wsum = 0.0, vsum = 0.0;
        const auto i0 = std::max<Eigen::Index>(0, i - radius), i1 = std::min(rows - 1, i + radius);
        const auto j0 = std::max<Eigen::Index>(0, j - radius), j1 = std::min(cols - 1, j + radius);
        for (auto a = i0; a <= i1; ++a)
          for (auto b = j0; b <= j1; ++b) {
            if (counts(a, b) == 0) continue;
            const double di = static_cast<double>(a - i), dj = static_cast<double>(b - j);
            const double w = std::exp(-(di * di + dj * dj) / denom);
            wsum += w;
            vsum += w * src(a, b);
          }
        if (wsum > 0.0) {
          out.values(i, j) = vsum / wsum;
          break;
        }
        radius = std::max<Eigen::Index>(1, 2 * radius);
      }
    }
  }
  return out;
}

namespace detail {

// Prefix sums of rows and squared row norms, after centering by the column
// means (the L2 cost is shift invariant; centering limits cancellation).
struct L2Prefix {
  Eigen::MatrixXd sums;   // (n+1) x d
  Eigen::VectorXd sq;     // n+1

  explicit L2Prefix(const Eigen::MatrixXd& x) : sums(x.rows() + 1, x.cols()), sq(x.rows() + 1) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    sums.row(0).setZero();
    sq(0) = 0.0;
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const Eigen::RowVectorXd c = x.row(t) - mean;
      sums.row(t + 1) = sums.row(t) + c;
      sq(t + 1) = sq(t) + c.squaredNorm();
    }
  }

  // Sum of squared deviations from the segment mean for rows [a, b).
  double cost(Eigen::Index a, Eigen::Index b) const {
    const double len = static_cast<double>(b - a);
    const double c = (sq(b) - sq(a)) - (sums.row(b) - sums.row(a)).squaredNorm() / len;
    return c > 0.0 ? c : 0.0;
  }
};

} // namespace detail

// Exact multivariate mean-shift segmentation of the rows of `x` by PELT.
inline SegmentationResult pelt_segment(const Eigen::MatrixXd& x, double penalty,
                                       std::string link_ref = {}) {
  if (x.rows() < 1) throw InvalidInput("pelt_segment needs at least one row");
  if (!(penalty >= 0.0)) throw InvalidInput("penalty must be nonnegative");
  const Eigen::Index n = x.rows();
  const detail::L2Prefix prefix(x);

  std::vector<double> best(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Eigen::Index> prev(static_cast<std::size_t>(n + 1), 0);
  best[0] = -penalty;
  std::vector<Eigen::Index> candidates{0}, kept;
  std::vector<double> totals;

  for (Eigen::Index t = 1; t <= n; ++t) {
    totals.resize(candidates.size());
    double f = std::numeric_limits<double>::infinity();
    Eigen::Index arg = candidates.front();
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      const auto s = candidates[k];
      totals[k] = best[static_cast<std::size_t>(s)] + prefix.cost(s, t);
      if (totals[k] + penalty < f) {
        f = totals[k] + penalty;
        arg = s;
      }
    }
    best[static_cast<std::size_t>(t)] = f;
    prev[static_cast<std::size_t>(t)] = arg;
    // Pruning rule with K = 0 (adding a split never increases the L2 cost). A
    // slack proportional to |f| keeps candidates that only lose by rounding.
    const double slack = 1e-10 * (1.0 + std::abs(f));
    kept.clear();
    for (std::size_t k = 0; k < candidates.size(); ++k)
      if (totals[k] <= f + slack) kept.push_back(candidates[k]);
    kept.push_back(t);
    candidates.swap(kept);
  }

  SegmentationResult r;
  r.link_ref = std::move(link_ref);
  for (Eigen::Index t = n; t > 0; t = prev[static_cast<std::size_t>(t)])
    r.change_points.push_back(static_cast<std::size_t>(prev[static_cast<std::size_t>(t)]));
  std::reverse(r.change_points.begin(), r.change_points.end());
  r.n_regimes = r.change_points.size();
  r.objective = best[static_cast<std::size_t>(n)];
  return r;
}

inline SegmentationResult pelt_segment(const ImputedLinkMatrix& m, double penalty) {
  return pelt_segment(m.values, penalty, m.link_ref);
}

// Objective of a given segmentation (change points ascending, starting at 0).
inline double segmentation_objective(const Eigen::MatrixXd& x,
                                     const std::vector<std::size_t>& change_points,
                                     double penalty) {
  const detail::L2Prefix prefix(x);
  double total = penalty * static_cast<double>(change_points.size() - 1);
  for (std::size_t k = 0; k < change_points.size(); ++k) {
    const auto a = static_cast<Eigen::Index>(change_points[k]);
    const auto b = k + 1 < change_points.size() ? static_cast<Eigen::Index>(change_points[k + 1])
                                                : x.rows();
    total += prefix.cost(a, b);
  }
  return total;
}

// BIC-style penalty 2 * sigma^2 * d * log(n), sigma^2 the per-cell variance
// across days pooled over the d columns.
inline double default_penalty(const Eigen::MatrixXd& x) {
  const auto n = x.rows();
  if (n < 2) return 0.0;
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const double pooled = (x.rowwise() - mean).squaredNorm() / static_cast<double>(x.size());
  return 2.0 * pooled * static_cast<double>(x.cols()) * std::log(static_cast<double>(n));
}

struct LinkSelection {
  CoverageStat coverage;
  std::optional<SegmentationResult> segmentation; // only for links past the coverage gate
  bool selected = false;
};

struct SelectionResult {
  std::vector<std::string> selected;
  std::map<std::string, LinkSelection> report;
  std::map<std::string, ImputedLinkMatrix> imputed; // links past the coverage gate
};

// Keeps links with coverage > beta whose imputed matrix splits into at most
// gamma regimes. Without an explicit penalty each link uses default_penalty.
inline SelectionResult select_representative(const std::map<std::string, LinkMatrix>& matrices,
                                              const SelectionCriteria& criteria,
                                              std::optional<double> penalty = std::nullopt) {
  criteria.validate();
  SelectionResult out;
  for (const auto& [link, m] : matrices) {
    LinkSelection entry;
    entry.coverage = coverage(m);
    if (entry.coverage.coverage > criteria.beta) {
      auto imp = impute(m, criteria.kernel_size);
      const double pen = penalty ? *penalty : default_penalty(imp.values);
      entry.segmentation = pelt_segment(imp, pen);
      entry.selected = entry.segmentation->n_regimes <= criteria.gamma;
      out.imputed.emplace(link, std::move(imp));
    }
    if (entry.selected) out.selected.push_back(link);
    out.report.emplace(link, std::move(entry));
  }
  return out;
}

inline void write_selection_report_csv(std::ostream& out, const SelectionResult& s) {
  out << "link_ref,coverage,n_regimes,selected\n";
  for (const auto& [link, e] : s.report) {
    out << csv::quote(link) << ',' << csv::fmt(e.coverage.coverage) << ',';
    if (e.segmentation) out << e.segmentation->n_regimes;
    out << ',' << (e.selected ? "true" : "false") << '\n';
  }
}

inline void write_change_points_csv(std::ostream& out, const SelectionResult& s) {
  out << "link_ref,day_index\n";
  for (const auto& [link, e] : s.report) {
    if (!e.segmentation) continue;
    for (auto cp : e.segmentation->change_points) out << csv::quote(link) << ',' << cp << '\n';
  }
}

} // namespace tcond
