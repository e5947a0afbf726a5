#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tcond/csv.hpp"
#include "tcond/error.hpp"
#include "tcond/time.hpp"

namespace tcond {

// One timestamped traversal of a link.
struct TravelTimeRecord {
  DateTime timestamp;
  std::string link_ref;
  double travel_time = 0.0; // seconds, > 0

  friend bool operator==(const TravelTimeRecord&, const TravelTimeRecord&) = default;
};

struct CalendarEntry {
  Date date;
  std::string label;
  bool rare = false;
};

// Ordered set of C distinct condition labels; the position of a label is its
// one-hot index.
class ConditionVocabulary {
public:
  ConditionVocabulary() = default;

  explicit ConditionVocabulary(std::vector<std::string> labels) : labels_(std::move(labels)) {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (!index_.emplace(labels_[i], i).second)
        throw InvalidInput("duplicate condition label '" + labels_[i] + "'");
    }
  }

  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::string& label(std::size_t i) const { return labels_.at(i); }
  bool contains(const std::string& label) const { return index_.count(label) != 0; }

  std::size_t index(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) throw UnknownCondition(label);
    return it->second;
  }

  friend bool operator==(const ConditionVocabulary& a, const ConditionVocabulary& b) {
    return a.labels_ == b.labels_;
  }

private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

// c^oh: a length-C vector with a single 1. Stored as (hot index, length) so the
// invariant holds by construction.
class OneHotCondition {
public:
  OneHotCondition(std::size_t hot, std::size_t size) : hot_(hot), size_(size) {
    if (hot >= size) throw DimensionMismatch("one-hot index out of range", size, hot);
  }

  std::size_t hot_index() const noexcept { return hot_; }
  std::size_t size() const noexcept { return size_; }
  double operator[](std::size_t i) const noexcept { return i == hot_ ? 1.0 : 0.0; }

  Eigen::RowVectorXd vector() const {
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(size_));
    v[static_cast<Eigen::Index>(hot_)] = 1.0;
    return v;
  }

  friend bool operator==(const OneHotCondition&, const OneHotCondition&) = default;

private:
  std::size_t hot_;
  std::size_t size_;
};

inline OneHotCondition one_hot(const std::string& label, const ConditionVocabulary& vocab) {
  return OneHotCondition(vocab.index(label), vocab.size());
}

// One D-dimensional row per condition of the bound vocabulary.
class EmbeddingMatrix {
public:
  EmbeddingMatrix(Eigen::MatrixXd weights, ConditionVocabulary vocab)
      : weights_(std::move(weights)), vocab_(std::move(vocab)) {
    if (static_cast<std::size_t>(weights_.rows()) != vocab_.size())
      throw DimensionMismatch("embedding rows vs vocabulary size", vocab_.size(),
                              static_cast<std::size_t>(weights_.rows()));
    if (!weights_.allFinite()) throw InvalidInput("embedding weights must be finite");
  }

  const Eigen::MatrixXd& weights() const noexcept { return weights_; }
  const ConditionVocabulary& vocabulary() const noexcept { return vocab_; }
  std::size_t conditions() const noexcept { return static_cast<std::size_t>(weights_.rows()); }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(weights_.cols()); }

private:
  Eigen::MatrixXd weights_;
  ConditionVocabulary vocab_;
};

// Product of a one-hot condition with the embedding matrix, i.e. a row lookup.
inline Eigen::RowVectorXd encode(const OneHotCondition& c, const EmbeddingMatrix& emb) {
  if (c.size() != emb.conditions())
    throw DimensionMismatch("one-hot length vs embedding rows", emb.conditions(), c.size());
  return emb.weights().row(static_cast<Eigen::Index>(c.hot_index()));
}

// Day-level condition labelling covering one contiguous span of dates.
class Calendar {
public:
  Calendar() = default;

  // The vocabulary is assigned by first appearance in `entries` as given.
  explicit Calendar(std::vector<CalendarEntry> entries) {
    std::vector<std::string> labels;
    std::unordered_map<std::string, bool> seen;
    for (const auto& e : entries) {
      if (seen.emplace(e.label, true).second) labels.push_back(e.label);
    }
    vocab_ = ConditionVocabulary(std::move(labels));
    std::sort(entries.begin(), entries.end(),
              [](const CalendarEntry& a, const CalendarEntry& b) { return a.date < b.date; });
    for (std::size_t i = 1; i < entries.size(); ++i) {
      const auto step = entries[i].date - entries[i - 1].date;
      if (step == 0) throw InvalidInput("calendar lists " + entries[i].date.str() + " twice");
      if (step != 1) throw CalendarGap((entries[i - 1].date + 1).str());
    }
    entries_ = std::move(entries);
  }

  const ConditionVocabulary& vocabulary() const noexcept { return vocab_; }
  const std::vector<CalendarEntry>& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return entries_.empty(); }
  Date first() const { return entries_.front().date; }
  Date last() const { return entries_.back().date; }

  bool contains(Date d) const noexcept {
    return !entries_.empty() && d >= entries_.front().date && d <= entries_.back().date;
  }

  const CalendarEntry& at(Date d) const {
    if (!contains(d)) throw CalendarGap(d.str());
    return entries_[static_cast<std::size_t>(d - entries_.front().date)];
  }

private:
  std::vector<CalendarEntry> entries_;
  ConditionVocabulary vocab_;
};

struct ConditionLookup {
  OneHotCondition condition;
  bool rare;
};

// Assigns a timestamp the condition of its calendar date.
inline ConditionLookup lookup_condition(DateTime t, const Calendar& calendar,
                                        const ConditionVocabulary& vocab) {
  const auto& e = calendar.at(t.date());
  return {one_hot(e.label, vocab), e.rare};
}

// Calendar CSV: header `date,label,rare`.
inline Calendar read_calendar_csv(std::istream& in) {
  if (!in) throw IoError("calendar stream is not readable");
  std::string line;
  if (!csv::read_line(in, line)) throw ParseError(1, "missing calendar header");
  const auto header = csv::split(line);
  if (header != std::vector<std::string>{"date", "label", "rare"})
    throw ParseError(1, "expected header `date,label,rare`");
  std::vector<CalendarEntry> entries;
  std::size_t lineno = 1;
  while (csv::read_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = csv::split(line);
    if (f.size() != 3) throw ParseError(lineno, "expected 3 fields");
    CalendarEntry e;
    try {
      e.date = Date::parse(f[0]);
    } catch (const InvalidInput& ex) {
      throw ParseError(lineno, ex.what());
    }
    if (f[1].empty()) throw ParseError(lineno, "empty label");
    e.label = std::move(f[1]);
    std::string r = f[2];
    std::transform(r.begin(), r.end(), r.begin(), [](unsigned char c) { return std::tolower(c); });
    if (r == "true")
      e.rare = true;
    else if (r == "false")
      e.rare = false;
    else
      throw ParseError(lineno, "rare flag must be true/false, got '" + f[2] + "'");
    entries.push_back(std::move(e));
  }
  return Calendar(std::move(entries));
}

inline void write_calendar_csv(std::ostream& out, const std::vector<CalendarEntry>& entries) {
  out << "date,label,rare\n";
  for (const auto& e : entries)
    out << e.date.str() << ',' << csv::quote(e.label) << ',' << (e.rare ? "true" : "false")
        << '\n';
}

// Embedding CSV: `label,d0,d1,...`, rows in vocabulary order.
inline void write_embeddings_csv(std::ostream& out, const EmbeddingMatrix& emb) {
  out << "label";
  for (std::size_t d = 0; d < emb.dimension(); ++d) out << ",d" << d;
  out << '\n';
  for (std::size_t c = 0; c < emb.conditions(); ++c) {
    out << csv::quote(emb.vocabulary().label(c));
    for (std::size_t d = 0; d < emb.dimension(); ++d)
      out << ',' << csv::fmt(emb.weights()(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d)));
    out << '\n';
  }
}

inline EmbeddingMatrix read_embeddings_csv(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line)) throw ParseError(1, "missing embeddings header");
  const auto header = csv::split(line);
  if (header.size() < 2 || header[0] != "label") throw ParseError(1, "expected `label,d0,...`");
  const std::size_t dim = header.size() - 1;
  std::vector<std::string> labels;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (csv::read_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = csv::split(line);
    if (f.size() != dim + 1) throw ParseError(lineno, "wrong field count");
    labels.push_back(f[0]);
    std::vector<double> row;
    for (std::size_t d = 0; d < dim; ++d) {
      auto v = csv::to_double(f[d + 1]);
      if (!v) throw ParseError(lineno, "non-numeric weight");
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd w(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t d = 0; d < dim; ++d)
      w(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)) = rows[r][d];
  return EmbeddingMatrix(std::move(w), ConditionVocabulary(std::move(labels)));
}

} // namespace tcond
