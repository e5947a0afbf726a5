#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tcond/data_model.hpp"
#include "tcond/error.hpp"
#include "tcond/nn/network.hpp"
#include "tcond/nn/serialize.hpp"
#include "tcond/nn/train.hpp"
#include "tcond/tuner.hpp"

namespace tcond {

inline constexpr std::size_t kTimeFeatures = 3;
inline constexpr double kMinPrediction = 1.0; // seconds

struct PredictorConfig {
  std::size_t k = 2;
  std::size_t block_width = 32;
  double dropout_rate = 0.1;
  std::size_t n_freq = 21;
  std::size_t n_rare = 365;
  std::size_t adjust_width = 4;
  nn::TrainConfig train{.learning_rate = 0.01,
                        .batch_size = 32,
                        .epochs = 100,
                        .seed = 0,
                        .weight_decay = 1e-4,
                        .momentum = 0.9,
                        .patience = 10};

  void validate() const {
    if (block_width < 1) throw InvalidInput("block_width must be >= 1");
    if (adjust_width < 1) throw InvalidInput("adjust_width must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidInput("dropout_rate must lie in [0,1)");
    train.validate();
  }
};

struct TargetScaler {
  double mean = 0.0;
  double std = 1.0;

  static TargetScaler fit(const Eigen::VectorXd& y) {
    if (y.size() == 0) throw InvalidInput("cannot fit a scaler on no targets");
    TargetScaler s;
    s.mean = y.mean();
    const double var = (y.array() - s.mean).square().mean();
    s.std = var > 0.0 ? std::sqrt(var) : 1.0;
    return s;
  }
  double forward(double x) const noexcept { return (x - mean) / std; }
  double inverse(double z) const noexcept { return z * std + mean; }
};

// (sin 2 pi tau, cos 2 pi tau, 2 tau - 1) with tau the fraction of the day.
inline Eigen::RowVector3d time_features(DateTime t) {
  const double tau = static_cast<double>(t.seconds_of_day()) / static_cast<double>(kSecondsPerDay);
  const double a = 2.0 * std::numbers::pi * tau;
  return {std::sin(a), std::cos(a), 2.0 * tau - 1.0};
}

// Training rows of one link: condition index (into the model's input
// vocabulary), timestamp and target seconds.
struct TrainingRows {
  std::string link_ref;
  std::vector<std::size_t> conditions;
  std::vector<DateTime> timestamps;
  Eigen::VectorXd targets;
  TargetScaler scaler;

  std::size_t size() const noexcept { return timestamps.size(); }
};

// Input matrix [one-hot condition | time features].
inline nn::Matrix design_matrix(const std::vector<std::size_t>& conditions,
                                const std::vector<DateTime>& timestamps, std::size_t n_conditions) {
  const auto n = static_cast<Eigen::Index>(timestamps.size());
  const auto c = static_cast<Eigen::Index>(n_conditions);
  nn::Matrix x = nn::Matrix::Zero(n, c + static_cast<Eigen::Index>(kTimeFeatures));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto hot = conditions[static_cast<std::size_t>(i)];
    if (hot >= n_conditions) throw DimensionMismatch("condition index", n_conditions, hot);
    x(i, static_cast<Eigen::Index>(hot)) = 1.0;
    x.block(i, c, 1, 3) = time_features(timestamps[static_cast<std::size_t>(i)]);
  }
  return x;
}

namespace detail {

template <class Keep, class Index>
TrainingRows collect_rows(const std::string& link, const std::vector<TravelTimeRecord>& records,
                          DateTime start, Keep&& keep, Index&& index) {
  TrainingRows rows;
  rows.link_ref = link;
  std::vector<double> y;
  for (const auto& r : records) {
    if (r.link_ref != link || !(r.timestamp < start) || !keep(r.timestamp.date())) continue;
    rows.conditions.push_back(index(r.timestamp.date()));
    rows.timestamps.push_back(r.timestamp);
    y.push_back(r.travel_time);
  }
  if (y.empty()) throw InsufficientData(link);
  rows.targets = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  rows.scaler = TargetScaler::fit(rows.targets);
  return rows;
}

} // namespace detail

// Union of the records on non-rare days within n_freq days before `start` and
// on rare days within n_rare days before it. Days are whole calendar dates.
inline TrainingRows assemble_training_window(const std::string& link,
                                             const std::vector<TravelTimeRecord>& records,
                                             const Calendar& calendar, const ConditionVocabulary& vocab,
                                             DateTime start, const PredictorConfig& cfg) {
  calendar.at(start.date());
  const Date day0 = start.date();
  auto keep = [&](Date d) {
    if (!(d < day0) || !calendar.contains(d)) return false;
    const auto back = day0 - d;
    return calendar.at(d).rare ? back <= static_cast<std::int32_t>(cfg.n_rare)
                               : back <= static_cast<std::int32_t>(cfg.n_freq);
  };
  auto index = [&](Date d) { return vocab.index(calendar.at(d).label); };
  return detail::collect_rows(link, records, start, keep, index);
}

// Records on non-rare days within n_days before `start`, indexed by weekday.
inline TrainingRows assemble_weekday_window(const std::string& link,
                                            const std::vector<TravelTimeRecord>& records,
                                            const Calendar& calendar, DateTime start, std::size_t n_days) {
  const Date day0 = start.date();
  auto keep = [&](Date d) {
    return d < day0 && day0 - d <= static_cast<std::int32_t>(n_days) && calendar.contains(d) &&
           !calendar.at(d).rare;
  };
  auto index = [](Date d) { return static_cast<std::size_t>(d.weekday()); };
  return detail::collect_rows(link, records, start, keep, index);
}

namespace detail {

inline nn::NetworkBuilder& predictor_body(nn::NetworkBuilder& b, const PredictorConfig& cfg) {
  b.linear(cfg.adjust_width, {.bias = true, .frozen = false, .passthrough = kTimeFeatures});
  for (std::size_t i = 0; i < cfg.k; ++i)
    b.linear(cfg.block_width).batch_norm().relu().dropout(cfg.dropout_rate);
  b.linear(1);
  return b;
}

} // namespace detail

// Frozen embedding lookup (C -> D), adjustment layer (D -> adjust_width),
// concatenation with the time features, k blocks of
// [linear, batch norm, relu, dropout] and a scalar output.
inline nn::Network build_predictor(const EmbeddingMatrix& emb, const PredictorConfig& cfg) {
  cfg.validate();
  nn::NetworkBuilder b(emb.conditions() + kTimeFeatures, cfg.train.seed);
  b.linear(emb.dimension(), {.bias = false, .frozen = true, .passthrough = kTimeFeatures})
      .set_weights(emb.weights());
  return std::move(detail::predictor_body(b, cfg)).build();
}

// Same as build_predictor except the lookup is a trainable 7-row
// day-of-week embedding of width `dim`.
inline nn::Network build_weekday_network(std::size_t dim, const PredictorConfig& cfg) {
  cfg.validate();
  nn::NetworkBuilder b(7 + kTimeFeatures, cfg.train.seed);
  b.linear(dim, {.bias = false, .frozen = false, .passthrough = kTimeFeatures});
  return std::move(detail::predictor_body(b, cfg)).build();
}

// Trains on the scaled targets. With a validation fraction the seeded split
// is held out and early stopping applies.
inline nn::TrainHistory train_predictor(nn::Network& net, const TrainingRows& rows,
                                        std::size_t n_conditions, const nn::TrainConfig& cfg,
                                        double validation_fraction = 0.0) {
  if (rows.size() == 0) throw InsufficientData(rows.link_ref);
  const nn::Matrix x = design_matrix(rows.conditions, rows.timestamps, n_conditions);
  nn::Matrix y(static_cast<Eigen::Index>(rows.size()), 1);
  for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, 0) = rows.scaler.forward(rows.targets(i));

  const auto n = x.rows();
  const auto n_val = static_cast<Eigen::Index>(std::floor(validation_fraction * static_cast<double>(n)));
  if (n_val <= 0 || n_val >= n) return nn::train(net, x, y, cfg);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  nn::Rng rng(cfg.seed ^ 0x5eed5eedULL);
  nn::detail::shuffle(order, rng);
  std::vector<Eigen::Index> val(order.begin(), order.begin() + n_val), tr(order.begin() + n_val, order.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  const auto xt = nn::detail::gather_rows(x, tr, 0, tr.size());
  const auto yt = nn::detail::gather_rows(y, tr, 0, tr.size());
  const auto xv = nn::detail::gather_rows(x, val, 0, val.size());
  const auto yv = nn::detail::gather_rows(y, val, 0, val.size());
  const nn::Dataset vset{xv, yv};
  return nn::train(net, xt, yt, cfg, &vset);
}

enum class ConditionInput { Calendar, Weekday };

struct PredictorModel {
  std::string link_ref;
  ConditionInput input = ConditionInput::Calendar;
  ConditionVocabulary vocabulary; // calendar labels, or weekday names
  nn::Network network;
  TargetScaler scaler;
  PredictorConfig config;
  DateTime last_training_timestamp;
};

inline ConditionVocabulary weekday_vocabulary() {
  std::vector<std::string> names;
  for (int d = 0; d < 7; ++d) names.emplace_back(weekday_name(d));
  return ConditionVocabulary(std::move(names));
}

inline std::size_t condition_index(const PredictorModel& m, const Calendar& calendar, DateTime t) {
  if (m.input == ConditionInput::Weekday) return static_cast<std::size_t>(t.date().weekday());
  return m.vocabulary.index(calendar.at(t.date()).label);
}

// Inverse-scaled network outputs, floored at kMinPrediction.
inline Eigen::VectorXd predict_many(const PredictorModel& m, const Calendar& calendar,
                                    const std::vector<DateTime>& times) {
  std::vector<std::size_t> idx;
  idx.reserve(times.size());
  for (auto t : times) idx.push_back(condition_index(m, calendar, t));
  const nn::Matrix out = nn::infer(m.network, design_matrix(idx, times, m.vocabulary.size()));
  Eigen::VectorXd y(out.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) y(i) = std::max(kMinPrediction, m.scaler.inverse(out(i, 0)));
  return y;
}

inline double predict(const PredictorModel& m, const Calendar& calendar, DateTime t) {
  return predict_many(m, calendar, {t})(0);
}

struct TuneOptions {
  std::vector<PredictorConfig> candidates;
  std::size_t min_epochs = 8;
  std::size_t budget = 256;
  double validation_fraction = 0.2;
};

// Search grid over block count, width and dropout around `base`.
inline std::vector<PredictorConfig> default_search_space(const PredictorConfig& base) {
  std::vector<PredictorConfig> out;
  for (std::size_t k : {1u, 2u})
    for (std::size_t w : {16u, 32u})
      for (double rate : {0.0, 0.1}) {
        auto c = base;
        c.k = k;
        c.block_width = w;
        c.dropout_rate = rate;
        out.push_back(c);
      }
  return out;
}

struct FitResult {
  PredictorModel model;
  TuneResult<PredictorConfig> tuning;
  nn::TrainHistory final_run;
};

// Two-stage fit: successive halving on a validation split picks the
// configuration and epoch count, then a fresh network is trained on every
// row for that many epochs.
inline FitResult fit_predictor(const TrainingRows& rows, ConditionInput input, ConditionVocabulary vocab,
                               const std::function<nn::Network(const PredictorConfig&)>& factory,
                               const TuneOptions& opt) {
  if (opt.candidates.empty()) throw InvalidInput("no predictor configuration to fit");
  auto evaluate = [&](const PredictorConfig& cfg, std::size_t epochs) {
    auto net = factory(cfg);
    auto tc = cfg.train;
    tc.epochs = epochs;
    const auto h = train_predictor(net, rows, vocab.size(), tc, opt.validation_fraction);
    TuneScore s;
    if (h.val_loss.empty()) {
      s.val_loss = h.train_loss.back();
      s.best_epoch = epochs;
    } else {
      s.val_loss = h.val_loss[h.best_epoch];
      s.best_epoch = h.best_epoch;
    }
    return s;
  };

  FitResult out;
  out.tuning = successive_halving(opt.candidates, opt.min_epochs, opt.budget, evaluate);
  auto cfg = out.tuning.best;
  cfg.train.epochs = std::max<std::size_t>(1, out.tuning.score.best_epoch);
  auto net = factory(cfg);
  out.final_run = train_predictor(net, rows, vocab.size(), cfg.train, 0.0);
  out.model.link_ref = rows.link_ref;
  out.model.input = input;
  out.model.vocabulary = std::move(vocab);
  out.model.network = std::move(net);
  out.model.scaler = rows.scaler;
  out.model.config = cfg;
  out.model.last_training_timestamp = *std::max_element(rows.timestamps.begin(), rows.timestamps.end());
  return out;
}

inline nlohmann::json config_to_json(const PredictorConfig& c) {
  return {{"k", c.k},
          {"block_width", c.block_width},
          {"dropout_rate", c.dropout_rate},
          {"n_freq", c.n_freq},
          {"n_rare", c.n_rare},
          {"adjust_width", c.adjust_width},
          {"learning_rate", c.train.learning_rate},
          {"batch_size", c.train.batch_size},
          {"epochs", c.train.epochs},
          {"seed", c.train.seed},
          {"weight_decay", c.train.weight_decay},
          {"momentum", c.train.momentum},
          {"patience", c.train.patience}};
}

inline PredictorConfig config_from_json(const nlohmann::json& j) {
  PredictorConfig c;
  c.k = j.at("k").get<std::size_t>();
  c.block_width = j.at("block_width").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.n_freq = j.at("n_freq").get<std::size_t>();
  c.n_rare = j.at("n_rare").get<std::size_t>();
  c.adjust_width = j.at("adjust_width").get<std::size_t>();
  c.train.learning_rate = j.at("learning_rate").get<double>();
  c.train.batch_size = j.at("batch_size").get<std::size_t>();
  c.train.epochs = j.at("epochs").get<std::size_t>();
  c.train.seed = j.at("seed").get<std::uint64_t>();
  c.train.weight_decay = j.at("weight_decay").get<double>();
  c.train.momentum = j.at("momentum").get<double>();
  c.train.patience = j.at("patience").get<std::size_t>();
  return c;
}

inline nlohmann::json model_to_json(const PredictorModel& m) {
  return {{"link_ref", m.link_ref},
          {"input", m.input == ConditionInput::Calendar ? "calendar" : "weekday"},
          {"vocabulary", m.vocabulary.labels()},
          {"scaler", {{"mean", m.scaler.mean}, {"std", m.scaler.std}}},
          {"config", config_to_json(m.config)},
          {"last_training_timestamp", m.last_training_timestamp.str()},
          {"network", nn::to_json(m.network)}};
}

inline PredictorModel model_from_json(const nlohmann::json& j) {
  PredictorModel m;
  m.link_ref = j.at("link_ref").get<std::string>();
  m.input = j.at("input").get<std::string>() == "weekday" ? ConditionInput::Weekday : ConditionInput::Calendar;
  m.vocabulary = ConditionVocabulary(j.at("vocabulary").get<std::vector<std::string>>());
  m.scaler.mean = j.at("scaler").at("mean").get<double>();
  m.scaler.std = j.at("scaler").at("std").get<double>();
  m.config = config_from_json(j.at("config"));
  m.last_training_timestamp = DateTime::parse(j.at("last_training_timestamp").get<std::string>());
  m.network = nn::network_from_json(j.at("network"));
  if (m.network.input_width() != m.vocabulary.size() + kTimeFeatures)
    throw DimensionMismatch("model input width", m.vocabulary.size() + kTimeFeatures, m.network.input_width());
  return m;
}

} // namespace tcond
