#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "tcond/evaluation.hpp"

using namespace tcond;

namespace {

double naive_rmse(const std::vector<double>& p, const std::vector<double>& t) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += static_cast<long double>(p[i] - t[i]) * (p[i] - t[i]);
  return std::sqrt(static_cast<double>(s / p.size()));
}

double naive_mae(const std::vector<double>& p, const std::vector<double>& t) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - t[i]);
  return static_cast<double>(s / p.size());
}

const DateTime kTestStart(Date::parse("2019-04-15"), 0);

std::vector<TravelTimeRecord> test_records(const std::vector<std::string>& links) {
  std::vector<TravelTimeRecord> rs;
  for (const auto& l : links)
    for (int k = 0; k < 10; ++k) rs.push_back({kTestStart + k * 3600, l, 50.0 + k});
  return rs;
}

ModelAdapter oracle_model(const std::vector<TravelTimeRecord>& truth) {
  return {"oracle",
          [&truth](const std::string& link, const std::vector<DateTime>& times) {
            std::vector<std::optional<double>> out;
            for (auto t : times)
              for (const auto& r : truth)
                if (r.link_ref == link && r.timestamp == t) {
                  out.push_back(r.travel_time);
                  break;
                }
            return out;
          },
          nullptr};
}

} // namespace

TEST(Metrics, HandValues) {
  EXPECT_EQ(rmse({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_EQ(rmse({3}, {0}), 3.0);
  EXPECT_NEAR(rmse({1, 2}, {0, 0}), std::sqrt(2.5), 1e-15);
  EXPECT_EQ(mae({1, 2}, {1, 2}), 0.0);
  EXPECT_EQ(mae({1, 2}, {0, 0}), 1.5);
  EXPECT_EQ(mae({-1, -2}, {0, 0}), 1.5);
  EXPECT_THROW(rmse({}, {}), InvalidInput);
  EXPECT_THROW(mae({1}, {1, 2}), InvalidInput);
}

TEST(Metrics, RandomAgainstNaiveReference) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0, 30);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = 1 + rng() % 200;
    std::vector<double> p(len), t(len);
    for (std::size_t i = 0; i < len; ++i) {
      t[i] = 60 + n(rng);
      p[i] = 60 + n(rng);
    }
    const double r = rmse(p, t), a = mae(p, t);
    EXPECT_GE(r + 1e-12, a);
    EXPECT_NEAR(r, naive_rmse(p, t), 1e-12 * std::max(1.0, r));
    EXPECT_NEAR(a, naive_mae(p, t), 1e-12 * std::max(1.0, a));
  }
}

TEST(Metrics, OrderInvariant) {
  std::vector<double> p{1, 5, 2, 8}, t{0, 4, 4, 1};
  const double r = rmse(p, t), a = mae(p, t);
  std::vector<std::size_t> idx{3, 1, 0, 2};
  std::vector<double> p2, t2;
  for (auto i : idx) {
    p2.push_back(p[i]);
    t2.push_back(t[i]);
  }
  EXPECT_NEAR(rmse(p2, t2), r, 1e-15);
  EXPECT_NEAR(mae(p2, t2), a, 1e-15);
}

TEST(SampleGroups, PoolsAndDeterminism) {
  std::map<std::string, std::size_t> train;
  std::set<std::string> test;
  std::vector<std::string> rep;
  for (int i = 0; i < 15; ++i) {
    train["r" + std::to_string(i)] = 100;
    rep.push_back("r" + std::to_string(i));
    train["n" + std::to_string(i)] = 10;
    test.insert("r" + std::to_string(i));
    test.insert("n" + std::to_string(i));
  }
  for (int i = 0; i < 10; ++i) test.insert("u" + std::to_string(i));
  train["u0"] = 0;

  const auto a = sample_groups(train, rep, test, 10, 7);
  const auto b = sample_groups(train, rep, test, 10, 7);
  EXPECT_EQ(a.embeddings_links, b.embeddings_links);
  EXPECT_EQ(a.non_selected_links, b.non_selected_links);
  for (const auto& l : a.embeddings_links) EXPECT_EQ(l[0], 'r');
  for (const auto& l : a.non_selected_links) EXPECT_EQ(l[0], 'n');
  std::vector<std::string> all_unseen;
  for (int i = 0; i < 10; ++i) all_unseen.push_back("u" + std::to_string(i));
  std::sort(all_unseen.begin(), all_unseen.end());
  EXPECT_EQ(a.unseen_links, all_unseen); // pool of exactly 10
  for (std::uint64_t seed = 0; seed < 5; ++seed) EXPECT_EQ(sample_groups(train, rep, test, 10, seed).unseen_links, all_unseen);

  try {
    sample_groups(train, rep, test, 11, 7);
    FAIL();
  } catch (const PoolTooSmall& e) {
    EXPECT_EQ(e.group(), "unseen");
  }
}

TEST(RunEvaluation, OracleIsPerfectAndGridComplete) {
  const std::vector<std::string> g1{"a", "b"}, g2{"c"}, g3{"d"};
  const auto truth = test_records({"a", "b", "c", "d"});
  std::vector<ModelAdapter> models;
  for (const char* name : {"m1", "m2", "m3", "m4"}) {
    auto m = oracle_model(truth);
    m.name = name;
    models.push_back(m);
  }
  const auto r = run_evaluation(models, {{"embeddings", g1}, {"non_selected", g2}, {"unseen", g3}}, truth, kTestStart);
  ASSERT_EQ(r.cells.size(), 12u);
  for (const auto& c : r.cells) {
    EXPECT_EQ(c.status, CellStatus::Ok);
    EXPECT_EQ(c.rmse, 0.0);
    EXPECT_EQ(c.mae, 0.0);
  }
  EXPECT_EQ(r.cell("m1", "embeddings").n_observations, 20u);
}

TEST(RunEvaluation, AbsentFailedAndLeakage) {
  const auto truth = test_records({"a", "u"});
  ModelAdapter replicate{"replicate",
                         [](const std::string& link, const std::vector<DateTime>& times) {
                           std::vector<std::optional<double>> out(times.size());
                           if (link != "u")
                             for (auto& o : out) o = 52.0;
                           return out;
                         },
                         nullptr};
  ModelAdapter broken{"broken",
                      [](const std::string&, const std::vector<DateTime>&) -> std::vector<std::optional<double>> {
                        throw DivergenceError(3);
                      },
                      nullptr};
  ModelAdapter leaky{"leaky",
                     [](const std::string&, const std::vector<DateTime>& times) {
                       return std::vector<std::optional<double>>(times.size(), 1.0);
                     },
                     [](const std::string&) { return std::optional<DateTime>(kTestStart + 60); }};
  const auto r = run_evaluation({replicate, broken, leaky}, {{"embeddings", {"a"}}, {"unseen", {"u"}}}, truth, kTestStart);
  EXPECT_EQ(r.cell("replicate", "unseen").status, CellStatus::Absent);
  EXPECT_EQ(r.cell("replicate", "embeddings").status, CellStatus::Ok);
  EXPECT_EQ(r.cell("broken", "embeddings").status, CellStatus::Failed);
  EXPECT_EQ(r.cell("leaky", "embeddings").status, CellStatus::Failed);

  std::ostringstream out;
  write_report_csv(out, r);
  const auto text = out.str();
  EXPECT_NE(text.find("replicate,unseen,rmse,-,0\n"), std::string::npos);
  EXPECT_NE(text.find("broken,embeddings,mae,failed,0\n"), std::string::npos);
  const auto& c = r.cell("replicate", "embeddings");
  EXPECT_GE(c.rmse, c.mae);
  EXPECT_GT(c.n_observations, 0u);
}
