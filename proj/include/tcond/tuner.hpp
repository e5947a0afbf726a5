#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "tcond/error.hpp"

namespace tcond {

struct TuneScore {
  double val_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
};

struct TuneTrial {
  std::size_t candidate;
  std::size_t rung;
  std::size_t epochs;
  TuneScore score;
};

template <class Config>
struct TuneResult {
  Config best;
  std::size_t best_index = 0;
  TuneScore score;
  std::vector<TuneTrial> trials;
  std::size_t epochs_spent = 0;
};

// Successive halving with eta = 2. Every survivor is trained from scratch for
// the rung's epoch count, the better half moves on and the epoch count
// doubles. The budget counts training epochs; a rung that no longer fits is
// skipped and the best candidate of the last completed rung wins.
// `evaluate(config, epochs)` returns a TuneScore.
template <class Config, class Evaluate>
TuneResult<Config> successive_halving(const std::vector<Config>& candidates, std::size_t min_epochs,
                                      std::size_t budget, Evaluate&& evaluate) {
  if (candidates.empty()) throw InvalidInput("tuner needs at least one candidate");
  if (min_epochs == 0) throw InvalidInput("tuner needs min_epochs >= 1");
  if (budget < candidates.size() * min_epochs)
    throw InvalidInput("tuner budget smaller than one minimal rung");

  TuneResult<Config> out;
  std::vector<std::size_t> alive(candidates.size());
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  std::size_t epochs = min_epochs;
  for (std::size_t rung = 0;; ++rung) {
    if (out.epochs_spent + alive.size() * epochs > budget) break;
    std::vector<std::pair<TuneScore, std::size_t>> scores;
    for (auto idx : alive) {
      const TuneScore s = evaluate(candidates[idx], epochs);
      out.trials.push_back({idx, rung, epochs, s});
      scores.emplace_back(s, idx);
    }
    out.epochs_spent += alive.size() * epochs;
    std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
      return a.first.val_loss < b.first.val_loss;
    });
    out.best_index = scores.front().second;
    out.score = scores.front().first;
    if (alive.size() == 1) break;
    alive.clear();
    for (std::size_t k = 0; k < (scores.size() + 1) / 2; ++k) alive.push_back(scores[k].second);
    std::sort(alive.begin(), alive.end());
    epochs *= 2;
  }
  out.best = candidates[out.best_index];
  return out;
}

} // namespace tcond
