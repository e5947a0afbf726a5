#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "tcond/csv.hpp"
#include "tcond/data_model.hpp"
#include "tcond/error.hpp"
#include "tcond/ingestion.hpp"
#include "tcond/nn/network.hpp"
#include "tcond/time.hpp"

namespace tcond::synthetic {

// Easter Sunday of a Gregorian year (anonymous Gregorian algorithm).
inline Date easter_sunday(int year) {
  const int a = year % 19, b = year / 100, c = year % 100, d = b / 4, e = b % 4;
  const int f = (b + 8) / 25, g = (b - f + 1) / 3, h = (19 * a + b - d - g + 15) % 30;
  const int i = c / 4, k = c % 4, l = (32 + 2 * e + 2 * i - h - k) % 7;
  const int m = (a + 11 * h + 22 * l) / 451;
  const int month = (h + l - 7 * m + 114) / 31, day = (h + l - 7 * m + 114) % 31 + 1;
  return Date::from_ymd(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
}

// Time-of-day bumps: morning peak, midday, evening peak, night.
inline constexpr std::array<double, 4> kBumpCentre{8.0, 12.5, 16.5, 21.0};
inline constexpr std::array<double, 4> kBumpWidth{1.5, 2.0, 1.5, 2.0};

inline double bump(std::size_t k, double hour) {
  const double z = (hour - kBumpCentre[k]) / kBumpWidth[k];
  return std::exp(-0.5 * z * z);
}

inline double interval_hour(std::size_t j, std::size_t n_intervals) {
  return (static_cast<double>(j) + 0.5) * 24.0 / static_cast<double>(n_intervals);
}

// Multiplicative effect of a condition: 1 - sum_k a_k bump_k over the day.
inline std::vector<double> effect_profile(const std::array<double, 4>& a, std::size_t n_intervals) {
  std::vector<double> f(n_intervals);
  for (std::size_t j = 0; j < n_intervals; ++j) {
    const double h = interval_hour(j, n_intervals);
    double s = 1.0;
    for (std::size_t k = 0; k < 4; ++k) s -= a[k] * bump(k, h);
    f[j] = s;
  }
  return f;
}

struct ConditionSpec {
  std::string label;
  bool rare = false;
  bool official = false;
  std::vector<double> effect; // per interval, > 0
};

struct ChangeEvent {
  std::size_t link;
  std::size_t day;
  double factor;
};

struct LinkSpec {
  std::string link_ref;
  std::string role; // homogeneous, change_point, sparse or unseen
  std::vector<double> base; // per interval, seconds
  double sparsity = 0.0;    // probability an observation slot stays empty
  std::size_t first_day = 0; // no observation before this day
};

struct SyntheticSpec {
  Date start;
  std::size_t n_days = 0;
  std::size_t n_intervals = 24;
  std::vector<ConditionSpec> conditions;
  std::vector<CalendarEntry> calendar; // one entry per day, labels from `conditions`
  std::vector<LinkSpec> links;
  std::vector<ChangeEvent> change_events;
  double noise_std = 0.04;
  std::size_t slots_per_interval = 2; // timetable departures per interval
  double slot_offset_std = 0.08;      // persistent relative offset of each departure
  std::uint64_t seed = 0;

  void validate() const {
    if (n_days == 0) throw InvalidInput("synthetic spec needs n_days >= 1");
    interval_seconds(n_intervals);
    if (calendar.size() != n_days) throw InvalidInput("calendar must cover every synthetic day");
    if (!(noise_std >= 0.0) || !(slot_offset_std >= 0.0)) throw InvalidInput("noise must be nonnegative");
    if (slots_per_interval == 0) throw InvalidInput("slots_per_interval must be >= 1");
    std::map<std::string, bool> labels;
    for (const auto& c : conditions) {
      if (c.effect.size() != n_intervals) throw DimensionMismatch("effect length", n_intervals, c.effect.size());
      for (double f : c.effect)
        if (!(f > 0.0)) throw InvalidInput("effect factors must be positive");
      labels[c.label] = true;
    }
    for (const auto& e : calendar)
      if (!labels.count(e.label)) throw UnknownCondition(e.label);
    for (const auto& l : links) {
      if (l.base.size() != n_intervals) throw DimensionMismatch("base profile length", n_intervals, l.base.size());
      if (!(l.sparsity >= 0.0 && l.sparsity <= 1.0)) throw InvalidInput("sparsity must lie in [0,1]");
    }
    for (const auto& c : change_events) {
      if (c.link >= links.size() || c.day >= n_days) throw InvalidInput("change event out of range");
      if (!(c.factor > 0.0)) throw InvalidInput("change factor must be positive");
    }
  }

  const ConditionSpec& condition(const std::string& label) const {
    for (const auto& c : conditions)
      if (c.label == label) return c;
    throw UnknownCondition(label);
  }
};

// Danish-style labelling: weekdays plus thirteen rare conditions around
// Christmas, New Year, Easter, Ascension and Whitsun.
inline std::vector<CalendarEntry> danish_calendar(Date start, std::size_t n_days) {
  std::vector<CalendarEntry> out;
  for (std::size_t i = 0; i < n_days; ++i) {
    const Date d = start + static_cast<std::int32_t>(i);
    const int y = d.year();
    const auto m = d.month(), day = d.day();
    const Date easter = easter_sunday(y);
    const auto off = d - easter;
    std::string label;
    if (m == 1 && day == 1) label = "New Year's Day";
    else if (m == 12 && day == 24) label = "Christmas Eve";
    else if (m == 12 && day == 25) label = "Christmas Day";
    else if (m == 12 && day == 26) label = "Boxing Day";
    else if (m == 12 && day >= 27 && day <= 30) label = "Between Christmas/New Year Days";
    else if (m == 12 && day == 31) label = "New Year Eve's Day";
    else if (off >= -6 && off <= -4) label = "Easter Week Weekday";
    else if (off == -3) label = "Maundy Thursday";
    else if (off == -2) label = "Good Friday";
    else if (off == 0) label = "Easter Sunday";
    else if (off == 1) label = "Easter Monday";
    else if (off == 39) label = "Ascension Day";
    else if (off == 50) label = "Whit Monday";
    const bool rare = !label.empty();
    if (!rare) label = weekday_name(d.weekday());
    out.push_back({d, label, rare});
  }
  return out;
}

// Bump amplitudes (morning, midday, evening, night) of each condition.
inline std::vector<std::pair<std::string, std::array<double, 4>>> default_effects() {
  const std::array<double, 4> workday{0.0, 0.0, 0.0, 0.0};
  const std::array<double, 4> sunday{0.32, 0.05, 0.22, 0.02};
  const std::array<double, 4> between{0.2, -0.1, 0.12, 0.05};
  const std::array<double, 4> easter{0.34, 0.1, 0.26, 0.05};
  const std::array<double, 4> christmas{0.36, 0.12, 0.28, 0.1};
  const std::array<double, 4> sunday_like{0.33, 0.08, 0.24, 0.03};
  return {{"Monday", workday},
          {"Tuesday", workday},
          {"Wednesday", workday},
          {"Thursday", workday},
          {"Friday", {0.02, -0.05, 0.05, -0.08}},
          {"Saturday", {0.25, -0.08, 0.12, -0.05}},
          {"Sunday", sunday},
          {"Between Christmas/New Year Days", between},
          {"New Year Eve's Day", {0.12, -0.05, 0.3, -0.15}},
          {"New Year's Day", {0.38, 0.15, 0.2, 0.05}},
          {"Easter Week Weekday", between},
          {"Maundy Thursday", {0.12, 0.0, 0.04, 0.0}},
          {"Good Friday", easter},
          {"Easter Sunday", easter},
          {"Easter Monday", easter},
          {"Ascension Day", sunday_like},
          {"Whit Monday", sunday_like},
          {"Christmas Eve", {0.1, -0.1, 0.35, 0.2}},
          {"Christmas Day", christmas},
          {"Boxing Day", christmas}};
}

inline const std::vector<std::string>& official_holidays() {
  static const std::vector<std::string> labels{"New Year's Day", "Maundy Thursday", "Good Friday",
                                               "Easter Sunday",  "Easter Monday",   "Ascension Day",
                                               "Whit Monday",    "Christmas Day",   "Boxing Day"};
  return labels;
}

struct DefaultLayout {
  std::size_t n_links = 50;
  std::size_t n_change = 10;
  std::size_t n_sparse = 8;
  std::size_t n_unseen = 5;
  std::size_t new_link_day = 761; // 2019-02-01 from a 2017-01-01 start
  double sparse_sparsity = 0.6;
  double dense_sparsity = 0.05;
};

// Desk-scale default: 50 links over 2017-01-01 + 1096 days at 24 intervals.
inline SyntheticSpec default_spec(std::uint64_t seed, const DefaultLayout& layout = {}) {
  SyntheticSpec s;
  s.start = Date::parse("2017-01-01");
  s.n_days = 1096;
  s.n_intervals = 24;
  s.seed = seed;
  s.calendar = danish_calendar(s.start, s.n_days);
  for (const auto& [label, a] : default_effects()) {
    const bool official =
        std::find(official_holidays().begin(), official_holidays().end(), label) != official_holidays().end();
    s.conditions.push_back({label, false, official, effect_profile(a, s.n_intervals)});
  }
  for (auto& c : s.conditions)
    for (const auto& e : s.calendar)
      if (e.label == c.label) {
        c.rare = e.rare;
        break;
      }

  nn::Rng rng(seed ^ 0x6c696e6b73ULL);
  const std::size_t n_homog = layout.n_links - layout.n_change - layout.n_sparse - layout.n_unseen;
  for (std::size_t l = 0; l < layout.n_links; ++l) {
    LinkSpec link;
    char name[16];
    std::snprintf(name, sizeof name, "link_%02zu", l);
    link.link_ref = name;
    const double b0 = 40.0 + 200.0 * nn::uniform01(rng);
    const double pm = 0.3 + 0.6 * nn::uniform01(rng);
    const double pe = 0.3 + 0.6 * nn::uniform01(rng);
    for (std::size_t j = 0; j < s.n_intervals; ++j) {
      const double h = interval_hour(j, s.n_intervals);
      link.base.push_back(b0 * (1.0 + pm * bump(0, h) + pe * bump(2, h)));
    }
    link.sparsity = layout.dense_sparsity;
    if (l < n_homog) {
      link.role = "homogeneous";
    } else if (l < n_homog + layout.n_change) {
      link.role = "change_point";
      const auto day = 480 + static_cast<std::size_t>(nn::uniform01(rng) * 221.0);
      s.change_events.push_back({l, day, 1.25 + 0.1 * nn::uniform01(rng)});
    } else if (l < n_homog + layout.n_change + layout.n_sparse) {
      link.role = "sparse";
      link.sparsity = layout.sparse_sparsity;
    } else {
      link.role = "unseen";
      link.first_day = layout.new_link_day;
    }
    s.links.push_back(std::move(link));
  }
  return s;
}

// Noise-free expected travel time of a link on a day and interval.
inline double expected_seconds(const SyntheticSpec& s, std::size_t link, std::size_t day, std::size_t j,
                               const std::map<std::string, const ConditionSpec*>& by_label) {
  double shift = 1.0;
  for (const auto& c : s.change_events)
    if (c.link == link && day >= c.day) shift *= c.factor;
  return s.links[link].base[j] * by_label.at(s.calendar[day].label)->effect[j] * shift;
}

struct GroundTruth {
  std::size_t n_days = 0, n_intervals = 0;
  std::vector<std::string> links;
  std::vector<double> values; // link-major, then day, then interval

  double at(std::size_t link, std::size_t day, std::size_t j) const {
    return values[(link * n_days + day) * n_intervals + j];
  }
};

struct SyntheticData {
  std::vector<TravelTimeRecord> records; // ordered by link, then time
  GroundTruth truth;
};

namespace detail {

inline double standard_normal(nn::Rng& rng) {
  double u = nn::uniform01(rng);
  while (u <= 0.0) u = nn::uniform01(rng);
  const double v = nn::uniform01(rng);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

} // namespace detail

// Each link has fixed departure minutes (one per slot) in every interval and a
// persistent relative offset per (interval, slot), centred within the
// interval. An observation is that expected value times (1 + offset + noise).
inline SyntheticData generate(const SyntheticSpec& s) {
  s.validate();
  std::map<std::string, const ConditionSpec*> by_label;
  for (const auto& c : s.conditions) by_label[c.label] = &c;
  const auto delta = interval_seconds(s.n_intervals);
  const auto slots = s.slots_per_interval;

  SyntheticData out;
  out.truth.n_days = s.n_days;
  out.truth.n_intervals = s.n_intervals;
  out.truth.values.reserve(s.links.size() * s.n_days * s.n_intervals);
  for (std::size_t l = 0; l < s.links.size(); ++l) {
    const auto& link = s.links[l];
    out.truth.links.push_back(link.link_ref);
    nn::Rng rng(s.seed + 0x9E3779B97F4A7C15ULL * (l + 1));
    std::vector<std::int64_t> minute(slots);
    const double phase = nn::uniform01(rng);
    for (std::size_t k = 0; k < slots; ++k)
      minute[k] = static_cast<std::int64_t>((static_cast<double>(k) + phase) * static_cast<double>(delta) /
                                            static_cast<double>(slots)) /
                  60 * 60;
    std::vector<double> offset(s.n_intervals * slots);
    for (std::size_t j = 0; j < s.n_intervals; ++j) {
      double mean = 0.0;
      for (std::size_t k = 0; k < slots; ++k) mean += offset[j * slots + k] = s.slot_offset_std * detail::standard_normal(rng);
      mean /= static_cast<double>(slots);
      for (std::size_t k = 0; k < slots; ++k) offset[j * slots + k] -= slots > 1 ? mean : 0.0;
    }
    for (std::size_t day = 0; day < s.n_days; ++day) {
      const Date date = s.start + static_cast<std::int32_t>(day);
      for (std::size_t j = 0; j < s.n_intervals; ++j) {
        const double mu = expected_seconds(s, l, day, j, by_label);
        out.truth.values.push_back(mu);
        for (std::size_t k = 0; k < slots; ++k) {
          const double keep = nn::uniform01(rng);
          const double eps = s.noise_std * detail::standard_normal(rng);
          if (day < link.first_day || keep < link.sparsity) continue;
          const double v = std::max(0.05 * mu, mu * (1.0 + offset[j * slots + k] + eps));
          const auto sec = static_cast<std::int32_t>(static_cast<std::int64_t>(j) * delta + minute[k]);
          out.records.push_back({DateTime(date, sec), link.link_ref, v});
        }
      }
    }
  }
  return out;
}

// Travel times are written with millisecond precision.
inline void write_records_csv(std::ostream& out, const std::vector<TravelTimeRecord>& records) {
  out << "timestamp,link_ref,travel_time\n";
  for (const auto& r : records)
    out << r.timestamp.str() << ',' << csv::quote(r.link_ref) << ',' << csv::fmt_fixed(r.travel_time, 3) << '\n';
}

inline void write_truth_csv(std::ostream& out, const GroundTruth& t) {
  out << "link_ref,day,interval,expected_seconds\n";
  for (std::size_t l = 0; l < t.links.size(); ++l)
    for (std::size_t d = 0; d < t.n_days; ++d)
      for (std::size_t j = 0; j < t.n_intervals; ++j)
        out << csv::quote(t.links[l]) << ',' << d << ',' << j << ',' << csv::fmt(t.at(l, d, j)) << '\n';
}

// `link_ref,role,sparsity,first_day,change_day,change_factor`
inline void write_links_csv(std::ostream& out, const SyntheticSpec& s) {
  out << "link_ref,role,sparsity,first_day,change_day,change_factor\n";
  for (std::size_t l = 0; l < s.links.size(); ++l) {
    const auto& link = s.links[l];
    out << csv::quote(link.link_ref) << ',' << link.role << ',' << csv::fmt(link.sparsity) << ','
        << link.first_day << ',';
    const ChangeEvent* ev = nullptr;
    for (const auto& c : s.change_events)
      if (c.link == l) ev = &c;
    if (ev) out << ev->day << ',' << csv::fmt(ev->factor);
    else out << ',';
    out << '\n';
  }
}

} // namespace tcond::synthetic
