#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tcond/csv.hpp"
#include "tcond/data_model.hpp"
#include "tcond/error.hpp"
#include "tcond/nn/network.hpp"
#include "tcond/nn/train.hpp"

namespace tcond {

namespace detail {

inline void check_pair(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.empty()) throw InvalidInput("metric over an empty sequence");
  if (pred.size() != truth.size())
    throw InvalidInput("metric inputs differ in length: " + std::to_string(pred.size()) + " vs " +
                       std::to_string(truth.size()));
}

} // namespace detail

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  detail::check_pair(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

inline double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
  detail::check_pair(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

inline constexpr const char* kEmbeddingsGroup = "embeddings";
inline constexpr const char* kNonSelectedGroup = "non_selected";
inline constexpr const char* kUnseenGroup = "unseen";

struct EvaluationGroups {
  std::vector<std::string> embeddings_links, non_selected_links, unseen_links;
  std::uint64_t seed = 0;

  std::vector<std::pair<std::string, std::vector<std::string>>> named() const {
    return {{kEmbeddingsGroup, embeddings_links},
            {kNonSelectedGroup, non_selected_links},
            {kUnseenGroup, unseen_links}};
  }
};

// Uniform sample without replacement: seeded shuffle of the sorted pool,
// first n kept, returned sorted.
inline std::vector<std::string> sample_pool(std::vector<std::string> pool, std::size_t n, std::uint64_t seed,
                                            const std::string& group) {
  if (pool.size() < n) throw PoolTooSmall(group, pool.size(), n);
  std::sort(pool.begin(), pool.end());
  nn::Rng rng(seed);
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[static_cast<std::size_t>(rng() % i)]);
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// Pools: representative links seen in the test window; other links with
// training observations seen in the test window; test-window links with no
// training observation at all.
inline EvaluationGroups sample_groups(const std::map<std::string, std::size_t>& training_observations,
                                      const std::vector<std::string>& representative,
                                      const std::set<std::string>& test_links, std::size_t n_per_group,
                                      std::uint64_t seed) {
  const std::set<std::string> rep(representative.begin(), representative.end());
  std::vector<std::string> emb, non_sel, unseen;
  for (const auto& link : test_links) {
    auto it = training_observations.find(link);
    const std::size_t seen = it == training_observations.end() ? 0 : it->second;
    if (seen == 0)
      unseen.push_back(link);
    else if (rep.count(link))
      emb.push_back(link);
    else
      non_sel.push_back(link);
  }
  EvaluationGroups g;
  g.seed = seed;
  g.embeddings_links = sample_pool(emb, n_per_group, seed, kEmbeddingsGroup);
  g.non_selected_links = sample_pool(non_sel, n_per_group, seed + 1, kNonSelectedGroup);
  g.unseen_links = sample_pool(unseen, n_per_group, seed + 2, kUnseenGroup);
  return g;
}

// A model as seen by the evaluation: per link, predictions for a batch of
// timestamps (std::nullopt where it has nothing to say) and the latest
// timestamp it trained on. Either function may throw; the cell then fails.
struct ModelAdapter {
  std::string name;
  std::function<std::vector<std::optional<double>>(const std::string& link, const std::vector<DateTime>& times)> predict;
  std::function<std::optional<DateTime>(const std::string& link)> last_training;
};

enum class CellStatus { Ok, Absent, Failed };

struct EvaluationCell {
  std::string model, group;
  CellStatus status = CellStatus::Absent;
  double rmse = 0.0, mae = 0.0;
  std::size_t n_observations = 0;
  std::size_t n_unpredicted = 0;
  std::string message;
};

struct Residual {
  std::string model, group, link_ref;
  DateTime timestamp;
  double observed, predicted;
};

struct EvaluationReport {
  std::vector<EvaluationCell> cells;
  std::vector<Residual> residuals;

  const EvaluationCell& cell(const std::string& model, const std::string& group) const {
    for (const auto& c : cells)
      if (c.model == model && c.group == group) return c;
    throw InvalidInput("no evaluation cell for " + model + " x " + group);
  }
};

// Every model x group cell pools the residuals of all test observations of
// the group's links that the model predicts.
inline EvaluationReport run_evaluation(const std::vector<ModelAdapter>& models,
                                       const std::vector<std::pair<std::string, std::vector<std::string>>>& groups,
                                       const std::vector<TravelTimeRecord>& test_records, DateTime test_start) {
  std::map<std::string, std::vector<const TravelTimeRecord*>> by_link;
  for (const auto& r : test_records) by_link[r.link_ref].push_back(&r);

  EvaluationReport report;
  for (const auto& model : models) {
    for (const auto& [group, links] : groups) {
      EvaluationCell cell;
      cell.model = model.name;
      cell.group = group;
      std::vector<double> pred, truth;
      std::vector<Residual> res;
      try {
        for (const auto& link : links) {
          auto it = by_link.find(link);
          if (it == by_link.end()) continue;
          if (model.last_training) {
            const auto last = model.last_training(link);
            if (last && !(*last < test_start))
              throw Error("model '" + model.name + "' trained on data at " + last->str() +
                          ", not before the test window");
          }
          std::vector<DateTime> times;
          for (const auto* r : it->second) times.push_back(r->timestamp);
          const auto p = model.predict(link, times);
          if (p.size() != times.size()) throw DimensionMismatch("prediction count", times.size(), p.size());
          for (std::size_t i = 0; i < p.size(); ++i) {
            if (!p[i]) {
              ++cell.n_unpredicted;
              continue;
            }
            pred.push_back(*p[i]);
            truth.push_back(it->second[i]->travel_time);
            res.push_back({model.name, group, link, times[i], it->second[i]->travel_time, *p[i]});
          }
        }
        if (!pred.empty()) {
          cell.status = CellStatus::Ok;
          cell.rmse = rmse(pred, truth);
          cell.mae = mae(pred, truth);
          cell.n_observations = pred.size();
          report.residuals.insert(report.residuals.end(), res.begin(), res.end());
        }
      } catch (const std::exception& e) {
        cell.status = CellStatus::Failed;
        cell.message = e.what();
        cell.n_observations = 0;
      }
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

// `model,group,metric,value,n_observations`; `-` marks a cell the model
// cannot fill, `failed` one whose model raised.
inline void write_report_csv(std::ostream& out, const EvaluationReport& r) {
  out << "model,group,metric,value,n_observations\n";
  for (const auto& c : r.cells) {
    for (const char* metric : {"rmse", "mae"}) {
      out << csv::quote(c.model) << ',' << csv::quote(c.group) << ',' << metric << ',';
      if (c.status == CellStatus::Ok)
        out << csv::fmt_fixed(metric[0] == 'r' ? c.rmse : c.mae, 6);
      else
        out << (c.status == CellStatus::Absent ? "-" : "failed");
      out << ',' << c.n_observations << '\n';
    }
  }
}

inline void write_residuals_csv(std::ostream& out, const EvaluationReport& r) {
  out << "model,group,link_ref,timestamp,observed,predicted,residual\n";
  for (const auto& x : r.residuals)
    out << csv::quote(x.model) << ',' << csv::quote(x.group) << ',' << csv::quote(x.link_ref) << ','
        << x.timestamp.str() << ',' << csv::fmt(x.observed) << ',' << csv::fmt(x.predicted) << ','
        << csv::fmt(x.predicted - x.observed) << '\n';
}

} // namespace tcond
