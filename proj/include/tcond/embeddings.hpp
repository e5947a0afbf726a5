#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tcond/csv.hpp"
#include "tcond/data_model.hpp"
#include "tcond/error.hpp"
#include "tcond/nn/network.hpp"
#include "tcond/nn/serialize.hpp"
#include "tcond/nn/train.hpp"
#include "tcond/selection.hpp"

namespace tcond {

// Per-column standardisation; a zero-variance column keeps std 1.
struct ColumnScaler {
  Eigen::RowVectorXd mean, std;

  static ColumnScaler fit(const Eigen::MatrixXd& x) {
    ColumnScaler s;
    s.mean = x.colwise().mean();
    s.std = ((x.rowwise() - s.mean).array().square().colwise().mean()).sqrt();
    for (Eigen::Index j = 0; j < s.std.size(); ++j)
      if (!(s.std(j) > 0.0)) s.std(j) = 1.0;
    return s;
  }

  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const {
    return ((x.rowwise() - mean).array().rowwise() / std.array()).matrix();
  }
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& z) const {
    return ((z.array().rowwise() * std.array()).rowwise() + mean.array()).matrix();
  }
};

struct EmbeddingsTrainingSet {
  Eigen::MatrixXd inputs;  // n_days x C one-hot
  Eigen::MatrixXd targets; // n_days x (links * intervals), standardised
  std::vector<std::string> link_order;
  std::size_t n_intervals = 0;
  ColumnScaler scaler;
  ConditionVocabulary vocabulary;
};

// One row per day: the day's one-hot condition and the imputed travel times of
// every selected link for that day, concatenated in `selected` order.
inline EmbeddingsTrainingSet build_training_set(const std::map<std::string, ImputedLinkMatrix>& imputed,
                                                const std::vector<std::string>& selected,
                                                const Calendar& calendar,
                                                const ConditionVocabulary& vocab) {
  if (selected.empty()) throw InvalidInput("no representative links to train on");
  const auto& first = imputed.at(selected.front());
  const auto n_days = first.values.rows();
  const auto n_int = first.values.cols();
  for (const auto& link : selected) {
    auto it = imputed.find(link);
    if (it == imputed.end()) throw InvalidInput("no imputed matrix for link '" + link + "'");
    const auto& m = it->second;
    if (m.values.rows() != n_days || m.values.cols() != n_int || m.start_date != first.start_date)
      throw ShapeMismatch("imputed matrix of '" + link + "' differs in shape or start date");
  }

  EmbeddingsTrainingSet set;
  set.link_order = selected;
  set.n_intervals = static_cast<std::size_t>(n_int);
  set.vocabulary = vocab;
  set.inputs = Eigen::MatrixXd::Zero(n_days, static_cast<Eigen::Index>(vocab.size()));
  Eigen::MatrixXd raw(n_days, n_int * static_cast<Eigen::Index>(selected.size()));
  for (Eigen::Index i = 0; i < n_days; ++i) {
    const auto& entry = calendar.at(first.start_date + static_cast<std::int32_t>(i));
    set.inputs(i, static_cast<Eigen::Index>(vocab.index(entry.label))) = 1.0;
    for (std::size_t l = 0; l < selected.size(); ++l)
      raw.block(i, static_cast<Eigen::Index>(l) * n_int, 1, n_int) = imputed.at(selected[l]).values.row(i);
  }
  set.scaler = ColumnScaler::fit(raw);
  set.targets = set.scaler.transform(raw);
  return set;
}

struct EmbeddingsModel {
  EmbeddingMatrix embedding;
  nn::Network network;          // linear(C -> D, no bias) then linear(D -> targets)
  nn::TrainHistory tuning;      // run against the validation split
  nn::TrainHistory final_run;   // retrain on every day
};

inline nn::Network build_embeddings_network(std::size_t conditions, std::size_t dim,
                                            std::size_t target_width, std::uint64_t seed) {
  if (dim < 1 || dim > conditions)
    throw InvalidInput("embedding dimension must lie in [1, C], got " + std::to_string(dim));
  return nn::NetworkBuilder(conditions, seed)
      .linear(dim, {.bias = false, .frozen = false, .passthrough = 0})
      .linear(target_width)
      .build();
}

// Two-stage training: with a validation fraction the seeded split picks the
// epoch count, then a fresh network with the same initialisation is trained on
// all days for that many epochs.
inline EmbeddingsModel train_embeddings(const EmbeddingsTrainingSet& set, std::size_t dim,
                                        const nn::TrainConfig& cfg, double validation_fraction = 0.2) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw InvalidInput("validation_fraction must lie in [0,1)");
  const auto c = static_cast<std::size_t>(set.inputs.cols());
  const auto width = static_cast<std::size_t>(set.targets.cols());
  const auto n = set.inputs.rows();

  nn::TrainConfig final_cfg = cfg;
  nn::TrainHistory tuning;
  const auto n_val = static_cast<Eigen::Index>(std::floor(validation_fraction * static_cast<double>(n)));
  if (n_val > 0 && n_val < n) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    nn::Rng rng(cfg.seed ^ 0x5eed5eedULL);
    nn::detail::shuffle(order, rng);
    std::vector<Eigen::Index> val(order.begin(), order.begin() + n_val);
    std::vector<Eigen::Index> tr(order.begin() + n_val, order.end());
    std::sort(val.begin(), val.end());
    std::sort(tr.begin(), tr.end());
    const auto xt = nn::detail::gather_rows(set.inputs, tr, 0, tr.size());
    const auto yt = nn::detail::gather_rows(set.targets, tr, 0, tr.size());
    const auto xv = nn::detail::gather_rows(set.inputs, val, 0, val.size());
    const auto yv = nn::detail::gather_rows(set.targets, val, 0, val.size());
    auto probe = build_embeddings_network(c, dim, width, cfg.seed);
    const nn::Dataset vset{xv, yv};
    tuning = nn::train(probe, xt, yt, cfg, &vset);
    final_cfg.epochs = tuning.best_epoch;
  }

  auto net = build_embeddings_network(c, dim, width, cfg.seed);
  auto hist = nn::train(net, set.inputs, set.targets, final_cfg);
  Eigen::MatrixXd w = std::get<nn::Linear>(net.layers().front()).weight;
  return {EmbeddingMatrix(std::move(w), set.vocabulary), std::move(net), std::move(tuning), std::move(hist)};
}

struct MdsProjection {
  Eigen::MatrixXd coords; // C x out_dims, centred
  std::vector<bool> degenerate; // per axis: no variance left to explain
  std::vector<double> eigenvalues;
};

// Classical MDS on the embedding rows. Each axis is oriented so its
// largest-magnitude coordinate is positive.
inline MdsProjection mds_project(const EmbeddingMatrix& emb, std::size_t out_dims = 2) {
  const auto c = static_cast<Eigen::Index>(emb.conditions());
  if (c < 2) throw InvalidInput("MDS needs at least two conditions");
  if (out_dims < 1) throw InvalidInput("MDS needs at least one output axis");
  const auto& w = emb.weights();
  Eigen::MatrixXd d2(c, c);
  for (Eigen::Index i = 0; i < c; ++i)
    for (Eigen::Index j = 0; j < c; ++j) d2(i, j) = (w.row(i) - w.row(j)).squaredNorm();
  const Eigen::MatrixXd centre =
      Eigen::MatrixXd::Identity(c, c) - Eigen::MatrixXd::Constant(c, c, 1.0 / static_cast<double>(c));
  const Eigen::MatrixXd b = -0.5 * centre * d2 * centre;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b);

  MdsProjection out;
  const auto k = static_cast<Eigen::Index>(out_dims);
  out.coords = Eigen::MatrixXd::Zero(c, k);
  const double top = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
  for (Eigen::Index a = 0; a < k; ++a) {
    const Eigen::Index src = c - 1 - a; // eigenvalues ascend
    const double lambda = src >= 0 ? eig.eigenvalues()(src) : 0.0;
    out.eigenvalues.push_back(lambda);
    if (src < 0 || lambda <= 1e-12 * top) {
      out.degenerate.push_back(true);
      continue;
    }
    out.degenerate.push_back(false);
    Eigen::VectorXd axis = eig.eigenvectors().col(src) * std::sqrt(lambda);
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0.0) axis = -axis;
    out.coords.col(a) = axis;
  }
  return out;
}

inline void write_mds_csv(std::ostream& out, const MdsProjection& p, const ConditionVocabulary& vocab) {
  out << "label";
  for (Eigen::Index a = 0; a < p.coords.cols(); ++a) out << ',' << (a == 0 ? "x" : a == 1 ? "y" : "z" + std::to_string(a));
  out << '\n';
  for (Eigen::Index i = 0; i < p.coords.rows(); ++i) {
    out << csv::quote(vocab.label(static_cast<std::size_t>(i)));
    for (Eigen::Index a = 0; a < p.coords.cols(); ++a) out << ',' << csv::fmt(p.coords(i, a));
    out << '\n';
  }
}

inline nlohmann::json scaler_to_json(const ColumnScaler& s) {
  return {{"mean", nn::detail::matrix_to_json(s.mean)}, {"std", nn::detail::matrix_to_json(s.std)}};
}

inline ColumnScaler scaler_from_json(const nlohmann::json& j) {
  return {nn::detail::matrix_from_json(j.at("mean")).row(0), nn::detail::matrix_from_json(j.at("std")).row(0)};
}

} // namespace tcond
