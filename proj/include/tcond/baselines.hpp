#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tcond/data_model.hpp"
#include "tcond/error.hpp"
#include "tcond/ingestion.hpp"
#include "tcond/predictor.hpp"

namespace tcond {

// Weekday x interval mean travel time of one link; NaN where unobserved.
struct HourlyProfile {
  std::string link_ref;
  Eigen::MatrixXd table;          // 7 x n_intervals
  Eigen::RowVectorXd interval_mean; // over all weekdays, NaN where unobserved
  double global_mean = 0.0;
};

struct SundayAverageModel {
  HourlyProfile profile;
  std::set<std::string> official_holidays;
  DateTime last_training_timestamp;
};

// Weekday used by the profile: rare official holidays count as Sunday.
inline int effective_weekday(Date d, const Calendar& calendar, const std::set<std::string>& official) {
  const auto& e = calendar.at(d);
  if (e.rare && official.count(e.label)) return 6;
  return d.weekday();
}

// Averages the link's records over the n_days before `start`.
inline SundayAverageModel fit_sunday_average(const std::string& link, const std::vector<TravelTimeRecord>& records,
                                             const Calendar& calendar, const std::set<std::string>& official,
                                             DateTime start, std::size_t n_days, std::size_t n_intervals) {
  const auto delta = interval_seconds(n_intervals);
  const auto cols = static_cast<Eigen::Index>(n_intervals);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(7, cols);
  Eigen::MatrixXd cnt = Eigen::MatrixXd::Zero(7, cols);
  const Date day0 = start.date();
  DateTime last;
  bool any = false;
  // Sorted copy so floating-point sums do not depend on record order.
  std::vector<std::pair<std::pair<int, std::int64_t>, double>> obs;
  for (const auto& r : records) {
    if (r.link_ref != link || !(r.timestamp < start)) continue;
    const auto back = day0 - r.timestamp.date();
    if (back < 1 || back > static_cast<std::int32_t>(n_days)) continue;
    const int wd = effective_weekday(r.timestamp.date(), calendar, official);
    obs.push_back({{wd, r.timestamp.seconds_of_day() / delta}, r.travel_time});
    if (!any || last < r.timestamp) last = r.timestamp;
    any = true;
  }
  if (!any) throw InsufficientData(link);
  std::sort(obs.begin(), obs.end());

  SundayAverageModel m;
  m.official_holidays = official;
  m.last_training_timestamp = last;
  double total = 0.0;
  Eigen::RowVectorXd isum = Eigen::RowVectorXd::Zero(cols), icnt = Eigen::RowVectorXd::Zero(cols);
  for (const auto& [key, v] : obs) {
    const auto j = static_cast<Eigen::Index>(key.second);
    sum(key.first, j) += v;
    cnt(key.first, j) += 1.0;
    isum(j) += v;
    icnt(j) += 1.0;
    total += v;
  }
  m.profile.link_ref = link;
  m.profile.table = Eigen::MatrixXd::Constant(7, cols, LinkMatrix::missing());
  m.profile.interval_mean = Eigen::RowVectorXd::Constant(cols, LinkMatrix::missing());
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index w = 0; w < 7; ++w)
      if (cnt(w, j) > 0) m.profile.table(w, j) = sum(w, j) / cnt(w, j);
    if (icnt(j) > 0) m.profile.interval_mean(j) = isum(j) / icnt(j);
  }
  m.profile.global_mean = total / static_cast<double>(obs.size());
  return m;
}

inline double predict(const SundayAverageModel& m, const Calendar& calendar, DateTime t) {
  const auto n = static_cast<std::size_t>(m.profile.table.cols());
  const auto j = static_cast<Eigen::Index>(interval_of(t, n));
  const int wd = effective_weekday(t.date(), calendar, m.official_holidays);
  const double v = m.profile.table(wd, j);
  if (!std::isnan(v)) return v;
  const double im = m.profile.interval_mean(j);
  if (!std::isnan(im)) return im;
  return m.profile.global_mean;
}

// Historical observations of one link, grouped by date, usable for
// replicating the last occurrence of a condition.
class ReplicateLastYear {
public:
  ReplicateLastYear(const std::string& link, const std::vector<TravelTimeRecord>& records,
                    const Calendar& calendar, DateTime cutoff)
      : link_(link), calendar_(&calendar) {
    for (const auto& r : records) {
      if (r.link_ref != link || !(r.timestamp < cutoff)) continue;
      by_day_[r.timestamp.date()].emplace_back(r.timestamp.seconds_of_day(), r.travel_time);
      if (!any_ || last_ < r.timestamp) last_ = r.timestamp;
      any_ = true;
    }
    for (auto& [day, obs] : by_day_) {
      std::sort(obs.begin(), obs.end());
      if (calendar.contains(day)) days_by_label_[calendar.at(day).label].push_back(day);
    }
  }

  const std::string& link_ref() const noexcept { return link_; }
  bool has_history() const noexcept { return any_; }
  DateTime last_training_timestamp() const noexcept { return last_; }

  // The observation nearest in time of day on the most recent earlier day
  // with the same label and any observation; ties go to the earlier time.
  // std::nullopt means there is no prior occurrence.
  std::optional<double> predict(DateTime t) const {
    const auto& label = calendar_->at(t.date()).label;
    auto it = days_by_label_.find(label);
    if (it == days_by_label_.end()) return std::nullopt;
    const auto& days = it->second;
    auto pos = std::lower_bound(days.begin(), days.end(), t.date());
    if (pos == days.begin()) return std::nullopt;
    const auto& obs = by_day_.at(*std::prev(pos));
    const auto q = t.seconds_of_day();
    std::int64_t best_gap = -1;
    double best = 0.0;
    for (const auto& [sec, v] : obs) {
      const auto gap = std::abs(static_cast<std::int64_t>(sec) - q);
      if (best_gap < 0 || gap < best_gap) {
        best_gap = gap;
        best = v;
      }
    }
    return best;
  }

private:
  std::string link_;
  const Calendar* calendar_;
  std::map<Date, std::vector<std::pair<std::int64_t, double>>> by_day_;
  std::map<std::string, std::vector<Date>> days_by_label_;
  DateTime last_;
  bool any_ = false;
};

// Neural baseline: the predictor architecture with a trainable day-of-week
// lookup, trained on the normal days of the n_days before `start`.
inline FitResult fit_neural_dow(const std::string& link, const std::vector<TravelTimeRecord>& records,
                                const Calendar& calendar, DateTime start, std::size_t n_days, std::size_t dim,
                                const TuneOptions& opt) {
  const auto rows = assemble_weekday_window(link, records, calendar, start, n_days);
  return fit_predictor(rows, ConditionInput::Weekday, weekday_vocabulary(),
                       [dim](const PredictorConfig& c) { return build_weekday_network(dim, c); }, opt);
}

inline nlohmann::json sunday_to_json(const SundayAverageModel& m) {
  nlohmann::json table = nlohmann::json::array();
  for (Eigen::Index w = 0; w < 7; ++w) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.profile.table.cols(); ++j) {
      const double v = m.profile.table(w, j);
      row.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    }
    table.push_back(std::move(row));
  }
  nlohmann::json im = nlohmann::json::array();
  for (Eigen::Index j = 0; j < m.profile.interval_mean.size(); ++j) {
    const double v = m.profile.interval_mean(j);
    im.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  }
  return {{"link_ref", m.profile.link_ref},
          {"table", std::move(table)},
          {"interval_mean", std::move(im)},
          {"global_mean", m.profile.global_mean},
          {"official_holidays", m.official_holidays},
          {"last_training_timestamp", m.last_training_timestamp.str()}};
}

inline SundayAverageModel sunday_from_json(const nlohmann::json& j) {
  SundayAverageModel m;
  m.profile.link_ref = j.at("link_ref").get<std::string>();
  const auto& table = j.at("table");
  const auto cols = static_cast<Eigen::Index>(table.at(0).size());
  m.profile.table.resize(7, cols);
  m.profile.interval_mean.resize(cols);
  auto num = [](const nlohmann::json& v) { return v.is_null() ? LinkMatrix::missing() : v.get<double>(); };
  for (Eigen::Index w = 0; w < 7; ++w)
    for (Eigen::Index c = 0; c < cols; ++c)
      m.profile.table(w, c) = num(table.at(static_cast<std::size_t>(w)).at(static_cast<std::size_t>(c)));
  for (Eigen::Index c = 0; c < cols; ++c)
    m.profile.interval_mean(c) = num(j.at("interval_mean").at(static_cast<std::size_t>(c)));
  m.profile.global_mean = j.at("global_mean").get<double>();
  m.official_holidays = j.at("official_holidays").get<std::set<std::string>>();
  m.last_training_timestamp = DateTime::parse(j.at("last_training_timestamp").get<std::string>());
  return m;
}

} // namespace tcond
