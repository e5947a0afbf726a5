// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tcond/pipeline.hpp"

using namespace tcond;
using namespace tcond::pipeline;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------
// 1. Segmentation against exhaustive search

// Sum of squared deviations from the segment mean, two-pass, for rows [a, b).
double direct_cost(const Eigen::MatrixXd& x, Eigen::Index a, Eigen::Index b) {
  const Eigen::RowVectorXd mean = x.middleRows(a, b - a).colwise().mean();
  double c = 0.0;
  for (Eigen::Index t = a; t < b; ++t) c += (x.row(t) - mean).squaredNorm();
  return c;
}

struct BruteForce {
  double best = 0.0, runner_up = 0.0;
  std::vector<std::size_t> change_points;
};

// Every subset of the n-1 interior boundaries.
BruteForce brute_force(const Eigen::MatrixXd& x, double penalty) {
  const auto n = x.rows();
  std::vector<std::vector<double>> cost(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n + 1)));
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a + 1; b <= n; ++b) cost[a][b] = direct_cost(x, a, b);

  BruteForce r;
  r.best = r.runner_up = std::numeric_limits<double>::infinity();
  const std::uint32_t subsets = 1u << (n - 1);
  for (std::uint32_t mask = 0; mask < subsets; ++mask) {
    double total = 0.0;
    Eigen::Index start = 0;
    for (Eigen::Index t = 1; t < n; ++t)
      if (mask & (1u << (t - 1))) {
        total += cost[start][t] + penalty;
        start = t;
      }
    total += cost[start][n];
    if (total < r.best) {
      r.runner_up = r.best;
      r.best = total;
      r.change_points = {0};
      for (Eigen::Index t = 1; t < n; ++t)
        if (mask & (1u << (t - 1))) r.change_points.push_back(static_cast<std::size_t>(t));
    } else if (total < r.runner_up) {
      r.runner_up = total;
    }
  }
  return r;
}

Outcome pelt_exactness() {
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  std::size_t unique = 0, mismatched = 0;
  for (int s = 0; s < 200; ++s) {
    const Eigen::Index n = 1 + s % 20;
    Eigen::MatrixXd x(n, 24);
    Eigen::RowVectorXd level = Eigen::RowVectorXd::Zero(24);
    const double scale = 0.2 + 3.0 * u(rng);
    for (Eigen::Index t = 0; t < n; ++t) {
      if (u(rng) < 0.2)
        for (Eigen::Index j = 0; j < 24; ++j) level(j) += 2.0 * z(rng);
      for (Eigen::Index j = 0; j < 24; ++j) x(t, j) = 50.0 + level(j) + scale * z(rng);
    }
    const double penalty = s % 4 == 0 ? default_penalty(x) : 100.0 * u(rng);
    const auto pelt = pelt_segment(x, penalty);
    const auto oracle = brute_force(x, penalty);
    worst = std::max(worst, std::abs(pelt.objective - oracle.best));
    if (oracle.runner_up - oracle.best > 1e-9) {
      ++unique;
      if (pelt.change_points != oracle.change_points) ++mismatched;
    }
  }
  return {worst <= 1e-9 && mismatched == 0,
          "200 series; max |objective - exhaustive| = " + fmt(worst) + "; " + std::to_string(mismatched) + "/" +
              std::to_string(unique) + " unique optima differ"};
}

// ---------------------------------------------------------------------------
// 2. Gradient checks over the predictor family

Outcome gradient_checks() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int s = 0; s < 50; ++s) {
    PredictorConfig cfg;
    cfg.k = static_cast<std::size_t>(s % 3);
    cfg.block_width = 2 + rng() % 7;
    cfg.adjust_width = 1 + rng() % 4;
    cfg.dropout_rate = 0.5 * u(rng);
    cfg.train.seed = rng();
    const std::size_t conditions = 3 + rng() % 8, dim = 2 + rng() % 3;
    Eigen::MatrixXd w(conditions, dim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 2.0 * u(rng) - 1.0;
    std::vector<std::string> labels;
    for (std::size_t c = 0; c < conditions; ++c) labels.push_back("c" + std::to_string(c));
    auto net = s % 2 == 0 ? build_predictor(EmbeddingMatrix(w, ConditionVocabulary(labels)), cfg)
                          : build_weekday_network(dim, cfg);
    const std::size_t width = (s % 2 == 0 ? conditions : 7) + kTimeFeatures;
    const Eigen::Index rows = 6 + static_cast<Eigen::Index>(rng() % 7);
    nn::Matrix x = nn::Matrix::Zero(rows, static_cast<Eigen::Index>(width));
    nn::Matrix y(rows, 1);
    for (Eigen::Index i = 0; i < rows; ++i) {
      x(i, static_cast<Eigen::Index>(rng() % (width - kTimeFeatures))) = 1.0;
      for (std::size_t f = 0; f < kTimeFeatures; ++f)
        x(i, static_cast<Eigen::Index>(width - kTimeFeatures + f)) = 2.0 * u(rng) - 1.0;
      y(i, 0) = 2.0 * u(rng) - 1.0;
    }
    worst = std::max(worst, nn::gradient_check(net, x, y, 1e-5));
  }
  return {worst < 1e-4, "50 networks, k in {0,1,2}; max relative error " + fmt(worst)};
}

// ---------------------------------------------------------------------------
// 3. Imputation against direct summation

double oracle_fill(const Eigen::MatrixXd& v, const Eigen::MatrixXi& c, long i, long j, long kernel) {
  for (long radius = kernel / 2;; radius = std::max(1L, 2 * radius)) {
    const double sigma = static_cast<double>(2 * radius + 1) / 3.0;
    double num = 0.0, den = 0.0;
    for (long a = 0; a < v.rows(); ++a)
      for (long b = 0; b < v.cols(); ++b)
        if (c(a, b) > 0 && std::abs(a - i) <= radius && std::abs(b - j) <= radius) {
          const double w = std::exp(-static_cast<double>((a - i) * (a - i) + (b - j) * (b - j)) / (2 * sigma * sigma));
          num += w * v(a, b);
          den += w;
        }
    if (den > 0.0) return num / den;
  }
}

Outcome imputation_oracle() {
  std::vector<std::vector<std::string>> patterns{
      {"x......", ".......", ".......", ".......", ".......", ".......", "......."},
      {"x.x.x.x", ".x.x.x.", "x.x.x.x", ".x.x.x.", "x.x.x.x", ".x.x.x.", "x.x.x.x"},
      {"xxxxxxx", "xxxxxxx", ".......", ".......", ".......", "xxxxxxx", "xxxxxxx"},
      {"xx.....", "xx.....", ".......", "...x...", ".......", ".....xx", ".....xx"},
      {".......", ".......", ".......", "......x", ".......", ".......", "......."},
      {"xxxxxxx", "xxxxxxx", "xxx.xxx", "xxxxxxx", "xxxxxxx", "xxxxxxx", "xxxxxxx"}};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(20.0, 200.0);
  double worst = 0.0;
  bool observed_kept = true, idempotent = true;
  for (const long kernel : {1L, 3L, 5L, 7L}) {
    for (const auto& p : patterns) {
      Eigen::MatrixXd v(7, 7);
      Eigen::MatrixXi c(7, 7);
      for (long i = 0; i < 7; ++i)
        for (long j = 0; j < 7; ++j) {
          c(i, j) = p[i][j] == 'x' ? 1 : 0;
          v(i, j) = c(i, j) ? u(rng) : LinkMatrix::missing();
        }
      const auto out = impute(LinkMatrix("L", Date::parse("2019-01-01"), v, c), static_cast<std::size_t>(kernel));
      for (long i = 0; i < 7; ++i)
        for (long j = 0; j < 7; ++j) {
          if (c(i, j)) observed_kept = observed_kept && out.values(i, j) == v(i, j);
          else worst = std::max(worst, std::abs(out.values(i, j) - oracle_fill(v, c, i, j, kernel)));
        }
      const auto again = impute(LinkMatrix("L", out.start_date, out.values, Eigen::MatrixXi::Ones(7, 7)),
                                static_cast<std::size_t>(kernel));
      idempotent = idempotent && again.values == out.values;
    }
  }
  return {worst <= 1e-12 && observed_kept && idempotent,
          "24 cases; max |impute - oracle| = " + fmt(worst) + "; observed cells kept: " +
              (observed_kept ? "yes" : "no") + "; idempotent on dense: " + (idempotent ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// Full pipeline on the default synthetic dataset

constexpr std::uint64_t kSeed = 42;

std::vector<std::string> change_point_links(const fs::path& links_csv) {
  std::ifstream in(links_csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    const auto f = csv::split(line);
    if (f.at(1) == "change_point") out.push_back(f.at(0));
  }
  return out;
}

struct FullRun {
  fs::path root;
  PipelineConfig cfg;
  double seconds = 0.0;
  std::map<std::string, double> stage_seconds;
};

FullRun full_run(const fs::path& root) {
  fs::remove_all(root);
  const auto t0 = Clock::now();
  const Workspace ws(root);
  const auto config = root / "config.json";
  run_generate(ws, kSeed, config);
  auto cfg = load_config(config);
  cfg.extra_groups["change_point"] = change_point_links(root / "data" / "links.csv");
  write_text(config, to_json(cfg).dump(2) + "\n");
  const bool tune = cfg.tuner.enabled;
  std::map<std::string, double> stage_seconds;
  for (const auto& step : std::vector<std::function<json()>>{
           [&] { return run_ingest(ws, cfg, false); }, [&] { return run_select(ws, cfg); },
           [&] { return run_train_embeddings(ws, cfg, tune); }, [&] { return run_project_mds(ws, cfg); },
           [&] { return run_train_predictor(ws, cfg, tune); }, [&] { return run_train_baselines(ws, cfg, tune); },
           [&] { return run_evaluate(ws, cfg); }, [&] { return run_report(ws, cfg); }}) {
    const auto s0 = Clock::now();
    const auto stage = step().at("stage").get<std::string>();
    stage_seconds[stage] = seconds_since(s0);
    std::cout << "  " << stage << " " << fmt(stage_seconds[stage], 3) << " s\n";
  }
  return {root, cfg, seconds_since(t0), stage_seconds};
}

std::map<std::pair<std::string, std::string>, double> rmse_table(const fs::path& root) {
  std::ifstream in(root / "evaluate" / "report.csv");
  std::map<std::pair<std::string, std::string>, double> out;
  for (const auto& r : read_report_csv(in))
    if (r.metric == "rmse" && r.value != "-" && r.value != "failed") out[{r.model, r.group}] = std::stod(r.value);
  return out;
}

// ---------------------------------------------------------------------------
// 4. Conditions with identical effects embed together

Outcome embedding_pairs(const FullRun& run) {
  std::ifstream in(run.root / "embeddings" / "embeddings.csv");
  const auto emb = read_embeddings_csv(in);
  auto row = [&](const std::string& label) {
    return Eigen::RowVectorXd(emb.weights().row(static_cast<Eigen::Index>(emb.vocabulary().index(label))));
  };
  const std::vector<std::string> ab{"Christmas Day", "Boxing Day"};
  const std::vector<std::string> xy{"Between Christmas/New Year Days", "Easter Week Weekday"};
  const double within_ab = (row(ab[0]) - row(ab[1])).norm();
  const double within_xy = (row(xy[0]) - row(xy[1])).norm();
  double cross = 0.0;
  for (const auto& a : ab)
    for (const auto& x : xy) cross += (row(a) - row(x)).norm() / 4.0;
  const double train_s = run.stage_seconds.at("train-embeddings");
  return {within_ab < 0.5 * cross && within_xy < 0.5 * cross && emb.dimension() == 4 && train_s < 300.0,
          "D=" + std::to_string(emb.dimension()) + "; within {Christmas Day, Boxing Day} " + fmt(within_ab) +
              ", within {Between Christmas/New Year Days, Easter Week Weekday} " + fmt(within_xy) +
              ", mean cross " + fmt(cross) + "; training " + fmt(train_s, 3) + " s (budget 300 s)"};
}

// ---------------------------------------------------------------------------
// 5. Transfer to links without history

Outcome unseen_transfer(const FullRun& run) {
  const auto spec = synthetic::default_spec(kSeed);
  double strongest = 0.0;
  std::string label;
  for (const auto& e : spec.calendar) {
    if (e.date < run.cfg.test_begin().date() || !(e.date < run.cfg.test_end().date()) || !e.rare) continue;
    const auto& eff = spec.condition(e.label).effect;
    const double drop = 1.0 - *std::min_element(eff.begin(), eff.end());
    if (drop > strongest) {
      strongest = drop;
      label = e.label;
    }
  }
  const auto t = rmse_table(run.root);
  const double ours = t.at({kTemporalConditions, kUnseenGroup});
  const double dow = t.at({kNeuralDow, kUnseenGroup});
  return {strongest >= 0.2 && ours <= 0.9 * dow && run.seconds < 600.0,
          "unseen RMSE temporal_conditions " + fmt(ours) + " vs neural_dow " + fmt(dow) + " (ratio " +
              fmt(ours / dow, 3) + "); strongest rare effect in test week " + fmt(100 * strongest, 3) + "% (" +
              label + "); pipeline " + fmt(run.seconds, 4) + " s (budget 600 s)"};
}

// ---------------------------------------------------------------------------
// 6. Orderings between models

std::string argmin_model(const std::map<std::pair<std::string, std::string>, double>& t, const std::string& group,
                         bool lowest) {
  std::string best;
  double v = lowest ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  for (const auto& [key, x] : t)
    if (key.second == group && (lowest ? x < v : x > v)) {
      v = x;
      best = key.first;
    }
  return best;
}

Outcome replicate_ordering(const FullRun& run) {
  const auto t = rmse_table(run.root);
  const auto best_homogeneous = argmin_model(t, kEmbeddingsGroup, true);
  const auto worst_changed = argmin_model(t, "change_point", false);
  return {best_homogeneous == kReplicateLastYear && worst_changed == kReplicateLastYear,
          "lowest on embeddings group: " + best_homogeneous + " (" + fmt(t.at({best_homogeneous, kEmbeddingsGroup})) +
              "); highest on change_point group: " + worst_changed + " (" +
              fmt(t.at({worst_changed, "change_point"})) + ")"};
}

Outcome sunday_ordering(const FullRun& run) {
  const auto spec = synthetic::default_spec(kSeed);
  const auto& sunday = spec.condition("Sunday").effect;
  const std::set<std::string> official(run.cfg.official_holidays.begin(), run.cfg.official_holidays.end());
  std::set<Date> days;
  std::set<std::string> labels;
  for (const auto& e : spec.calendar) {
    if (!e.rare || !official.count(e.label)) continue;
    const auto& eff = spec.condition(e.label).effect;
    double diff = 0.0;
    for (std::size_t j = 0; j < eff.size(); ++j) diff = std::max(diff, std::abs(eff[j] - sunday[j]));
    if (diff >= 0.1) {
      days.insert(e.date);
      if (!(e.date < run.cfg.test_begin().date()) && e.date < run.cfg.test_end().date()) labels.insert(e.label);
    }
  }

  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> acc;
  std::ifstream in(run.root / "evaluate" / "residuals.csv");
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto f = csv::split(line);
    if (!days.count(DateTime::parse(f.at(3)).date())) continue;
    auto& a = acc[{f.at(0), f.at(1)}];
    const double r = std::stod(f.at(6));
    a.first += r * r;
    ++a.second;
  }
  std::map<std::pair<std::string, std::string>, double> t;
  for (const auto& [k, a] : acc) t[k] = std::sqrt(a.first / static_cast<double>(a.second));

  bool pass = !labels.empty();
  std::string detail = "days:";
  for (const auto& l : labels) detail += " " + l;
  for (const std::string group : {kEmbeddingsGroup, kUnseenGroup, kNonSelectedGroup}) {
    const auto worst = argmin_model(t, group, false);
    if (group != kNonSelectedGroup) pass = pass && worst == kSundayAverage;
    detail += "; " + group + " worst " + worst + " (" + fmt(t.count({worst, group}) ? t.at({worst, group}) : 0.0) +
              (t.count({kSundayAverage, group}) ? ", sunday_average " + fmt(t.at({kSundayAverage, group})) : "") +
              ")";
  }
  return {pass, detail + "; non_selected reported only"};
}

// ---------------------------------------------------------------------------
// 7. Metric identities

Outcome metric_identities(const std::vector<fs::path>& reports) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  std::size_t violations = 0;
  for (int s = 0; s < 1000; ++s) {
    const std::size_t n = 1 + rng() % 300;
    const double scale = std::pow(10.0, 4.0 * u(rng));
    std::vector<double> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = 100.0 * (1.0 + u(rng));
      pred[i] = s % 10 == 0 ? truth[i] + scale : truth[i] + scale * u(rng);
    }
    long double sq = 0.0L, ab = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      const long double d = static_cast<long double>(pred[i]) - static_cast<long double>(truth[i]);
      sq += d * d;
      ab += d < 0 ? -d : d;
    }
    const double ref_rmse = static_cast<double>(std::sqrt(sq / n)), ref_mae = static_cast<double>(ab / n);
    const double r = rmse(pred, truth), m = mae(pred, truth);
    worst = std::max({worst, std::abs(r - ref_rmse) / std::max(1.0, ref_rmse),
                      std::abs(m - ref_mae) / std::max(1.0, ref_mae)});
    if (r < m * (1.0 - 1e-12)) ++violations;
  }
  std::size_t cells = 0;
  for (const auto& p : reports) {
    std::ifstream in(p);
    std::map<std::pair<std::string, std::string>, std::map<std::string, double>> v;
    for (const auto& row : read_report_csv(in))
      if (row.value != "-" && row.value != "failed") v[{row.model, row.group}][row.metric] = std::stod(row.value);
    for (const auto& [k, m] : v) {
      ++cells;
      if (m.at("rmse") < m.at("mae")) ++violations;
    }
  }
  return {worst <= 1e-12 && violations == 0,
          "1000 vectors + " + std::to_string(cells) + " report cells; max relative gap to reference " + fmt(worst) +
              "; rmse < mae in " + std::to_string(violations) + " cases"};
}

} // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& f, double budget) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double s = seconds_since(t0);
    if (budget > 0.0 && s >= budget) {
      o.pass = false;
      o.detail += "; over the " + fmt(budget) + " s budget";
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " (" << fmt(s, 3)
              << " s)" << std::endl;
  };

  report(1, "segmentation matches exhaustive search", pelt_exactness, 30.0);
  report(2, "gradient checks", gradient_checks, 60.0);
  report(3, "imputation matches direct summation", imputation_oracle, 0.0);

  const auto base = fs::temp_directory_path() / "tcond_acceptance";
  std::cout << "full run 1" << std::endl;
  FullRun first, second;
  try {
    first = full_run(base / "run1");
  } catch (const std::exception& e) {
    std::cout << "FAIL full pipeline run: " << e.what() << std::endl;
    return 1;
  }

  report(4, "identical effects embed together", [&] { return embedding_pairs(first); }, 0.0);
  report(5, "transfer to unseen links", [&] { return unseen_transfer(first); }, 0.0);
  report(6, "replicate-last-year ordering", [&] { return replicate_ordering(first); }, 0.0);
  report(6, "holidays-as-Sundays ordering", [&] { return sunday_ordering(first); }, 0.0);

  std::cout << "full run 2" << std::endl;
  report(8, "same seed gives identical reports", [&] {
    second = full_run(base / "run2");
    std::vector<std::string> differ;
    for (const auto& rel : {"evaluate/report.csv", "evaluate/residuals.csv", "report/report.md"})
      if (slurp(first.root / rel) != slurp(second.root / rel)) differ.push_back(rel);
    std::string detail = differ.empty() ? "report.csv, residuals.csv and report.md identical" : "differ:";
    for (const auto& d : differ) detail += " " + d;
    return Outcome{differ.empty(), detail};
  }, 0.0);
  report(7, "metric identities", [&] {
    return metric_identities({first.root / "evaluate" / "report.csv", second.root / "evaluate" / "report.csv"});
  }, 0.0);
  report(9, "end-to-end budget", [&] {
    return Outcome{first.seconds < 900.0, "generate to report in " + fmt(first.seconds, 4) + " s (budget 900 s)"};
  }, 0.0);

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
