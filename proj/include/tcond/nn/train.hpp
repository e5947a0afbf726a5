#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "tcond/error.hpp"
#include "tcond/nn/network.hpp"

namespace tcond::nn {

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  double momentum = 0.9;
  std::size_t patience = 10; // early stopping, only with a validation set

  void validate() const {
    if (!(learning_rate >= 0.0)) throw InvalidInput("learning_rate must be nonnegative");
    if (batch_size == 0) throw InvalidInput("batch_size must be >= 1");
    if (!(weight_decay >= 0.0)) throw InvalidInput("weight_decay must be nonnegative");
  }
};

struct TrainHistory {
  // Entry 0 is the loss before any update; entry e the loss after epoch e.
  // Both are inference-mode MSE over the full set.
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0; // epoch with the lowest validation loss (or the last epoch)
  bool stopped_early = false;
};

struct Dataset {
  const Matrix& inputs;
  const Matrix& targets;
};

namespace detail {

inline void shuffle(std::vector<Eigen::Index>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

inline Matrix gather_rows(const Matrix& m, const std::vector<Eigen::Index>& idx, std::size_t from,
                          std::size_t count) {
  Matrix out(static_cast<Eigen::Index>(count), m.cols());
  for (std::size_t r = 0; r < count; ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(idx[from + r]);
  return out;
}

} // namespace detail

// Mini-batch SGD with momentum on the MSE loss. Frozen tensors are never
// touched. With a validation set training stops after `patience` epochs
// without improvement and the best parameters are restored.
inline TrainHistory train(Network& net, const Matrix& inputs, const Matrix& targets,
                          const TrainConfig& cfg, const Dataset* validation = nullptr) {
  cfg.validate();
  if (inputs.rows() != targets.rows())
    throw DimensionMismatch("input vs target rows", static_cast<std::size_t>(inputs.rows()),
                            static_cast<std::size_t>(targets.rows()));
  if (inputs.rows() == 0) throw InvalidInput("training set is empty");

  Rng rng(cfg.seed);
  auto params = net.parameters();
  std::vector<Matrix> velocity;
  for (auto& p : params) velocity.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));

  TrainHistory hist;
  auto eval = [&](const Matrix& x, const Matrix& y) { return mse(infer(net, x), y); };
  hist.train_loss.push_back(eval(inputs, targets));
  double best_val = std::numeric_limits<double>::infinity();
  Network best_net;
  if (validation) {
    best_val = eval(validation->inputs, validation->targets);
    hist.val_loss.push_back(best_val);
    best_net = net;
  }

  const auto n = static_cast<std::size_t>(inputs.rows());
  const std::size_t n_batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::size_t since_best = 0;
  Tape tape;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    detail::shuffle(order, rng);
    std::size_t from = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      // Batches as equal as possible, so none degenerates to a single row.
      const std::size_t size = n / n_batches + (b < n % n_batches ? 1 : 0);
      const Matrix xb = detail::gather_rows(inputs, order, from, size);
      const Matrix yb = detail::gather_rows(targets, order, from, size);
      from += size;
      const Matrix pred = forward(net, xb, Mode::Training, &rng, &tape);
      const auto grads = backward(net, tape, mse_gradient(pred, yb), Mode::Training);
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].trainable) continue;
        Matrix g = grads[k];
        if (params[k].decays && cfg.weight_decay > 0.0) g += cfg.weight_decay * *params[k].value;
        velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * g;
        *params[k].value += velocity[k];
      }
    }
    const double loss = eval(inputs, targets);
    if (!std::isfinite(loss)) throw DivergenceError(epoch);
    hist.train_loss.push_back(loss);

    if (validation) {
      const double v = eval(validation->inputs, validation->targets);
      if (!std::isfinite(v)) throw DivergenceError(epoch);
      hist.val_loss.push_back(v);
      if (v < best_val) {
        best_val = v;
        hist.best_epoch = epoch;
        best_net = net;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        hist.stopped_early = true;
        break;
      }
    } else {
      hist.best_epoch = epoch;
    }
  }

  if (validation) net = std::move(best_net);
  return hist;
}

// Largest relative difference between backprop and central finite-difference
// gradients of the MSE loss over every parameter entry, in deterministic mode
// (batch statistics, no dropout). Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline double gradient_check(Network& net, const Matrix& input, const Matrix& target,
                             double epsilon = 1e-5) {
  Tape tape;
  const Matrix out = forward(net, input, Mode::Deterministic, nullptr, &tape);
  const auto grads = backward(net, tape, mse_gradient(out, target), Mode::Deterministic);
  auto params = net.parameters();
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k].value;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double keep = p.data()[i];
      p.data()[i] = keep + epsilon;
      const double up = mse(forward(net, input, Mode::Deterministic), target);
      p.data()[i] = keep - epsilon;
      const double down = mse(forward(net, input, Mode::Deterministic), target);
      p.data()[i] = keep;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic = grads[k].data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

} // namespace tcond::nn
