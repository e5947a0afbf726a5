#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "tcond/selection.hpp"

using namespace tcond;

namespace {

const Date kStart = Date::parse("2019-01-01");

LinkMatrix make_matrix(const Eigen::MatrixXd& v, const std::string& link = "L") {
  Eigen::MatrixXi c(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) c.data()[i] = std::isnan(v.data()[i]) ? 0 : 1;
  return LinkMatrix(link, kStart, v, c);
}

const double kMiss = LinkMatrix::missing();

// Direct double loop over the window; radius doubles when empty.
double oracle_fill(const Eigen::MatrixXd& v, Eigen::Index i, Eigen::Index j, int kernel) {
  int radius = kernel / 2;
  for (;;) {
    const double sigma = (2.0 * radius + 1.0) / 3.0;
    double num = 0.0, den = 0.0;
    for (Eigen::Index a = 0; a < v.rows(); ++a)
      for (Eigen::Index b = 0; b < v.cols(); ++b) {
        if (std::abs(a - i) > radius || std::abs(b - j) > radius || std::isnan(v(a, b))) continue;
        const double d2 = static_cast<double>((a - i) * (a - i) + (b - j) * (b - j));
        const double w = std::exp(-d2 / (2.0 * sigma * sigma));
        num += w * v(a, b);
        den += w;
      }
    if (den > 0.0) return num / den;
    radius = std::max(1, 2 * radius);
  }
}

double seg_cost(const Eigen::MatrixXd& x, Eigen::Index a, Eigen::Index b) {
  const Eigen::RowVectorXd mean = x.middleRows(a, b - a).colwise().mean();
  double c = 0.0;
  for (Eigen::Index t = a; t < b; ++t) c += (x.row(t) - mean).squaredNorm();
  return c;
}

// Exhaustive minimiser over all 2^(n-1) segmentations.
std::pair<double, std::vector<std::size_t>> brute_force(const Eigen::MatrixXd& x, double pen) {
  const auto n = x.rows();
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> arg;
  for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
    std::vector<std::size_t> cps{0};
    for (Eigen::Index t = 1; t < n; ++t)
      if (mask & (1u << (t - 1))) cps.push_back(static_cast<std::size_t>(t));
    double total = pen * static_cast<double>(cps.size() - 1);
    for (std::size_t k = 0; k < cps.size(); ++k) {
      const auto a = static_cast<Eigen::Index>(cps[k]);
      const auto b = k + 1 < cps.size() ? static_cast<Eigen::Index>(cps[k + 1]) : n;
      total += seg_cost(x, a, b);
    }
    if (total < best) {
      best = total;
      arg = cps;
    }
  }
  return {best, arg};
}

} // namespace

TEST(Coverage, Counts) {
  Eigen::MatrixXd v(2, 2);
  v << 1, kMiss, 3, 4;
  EXPECT_DOUBLE_EQ(coverage(make_matrix(v)).coverage, 0.75);
  EXPECT_DOUBLE_EQ(coverage(make_matrix(Eigen::MatrixXd::Ones(3, 4))).coverage, 1.0);
  EXPECT_DOUBLE_EQ(coverage(make_matrix(Eigen::MatrixXd::Constant(3, 4, kMiss))).coverage, 0.0);
}

TEST(Impute, ConstantWindow) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Constant(7, 7, 50.0);
  v(3, 3) = kMiss;
  EXPECT_DOUBLE_EQ(impute(make_matrix(v), 5).values(3, 3), 50.0);
}

TEST(Impute, SingleContributorInCorner) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Constant(6, 6, kMiss);
  v(1, 2) = 42.0;
  const auto out = impute(make_matrix(v), 5);
  EXPECT_DOUBLE_EQ(out.values(0, 0), 42.0);
  EXPECT_DOUBLE_EQ(out.values(5, 5), 42.0); // reached only after widening
}

TEST(Impute, TwoNeighboursMatchDirectSum) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Constant(5, 5, kMiss);
  v(2, 3) = 10.0; // distance 1
  v(2, 0) = 20.0; // distance 2
  const auto out = impute(make_matrix(v), 5);
  const double s2 = 2.0 * (5.0 / 3.0) * (5.0 / 3.0);
  const double w1 = std::exp(-1.0 / s2), w2 = std::exp(-4.0 / s2);
  const double expected = (10.0 * w1 + 20.0 * w2) / (w1 + w2);
  EXPECT_NEAR(out.values(2, 2), expected, 1e-12);
  EXPECT_NEAR(out.values(2, 2), oracle_fill(v, 2, 2, 5), 1e-12);
}

TEST(Impute, EmptyMatrixThrows) {
  EXPECT_THROW(impute(make_matrix(Eigen::MatrixXd::Constant(2, 2, kMiss)), 5), EmptyMatrix);
}

TEST(Impute, RandomMatchesOracleAndKeepsObserved) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(1.0, 100.0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd v(12, 9);
    const double p = 0.2 + 0.07 * trial;
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = u(rng) < 100.0 * p ? kMiss : u(rng);
    v(0, 0) = 5.0;
    for (int kernel : {1, 3, 5}) {
      const auto out = impute(make_matrix(v), static_cast<std::size_t>(kernel));
      for (Eigen::Index i = 0; i < v.rows(); ++i)
        for (Eigen::Index j = 0; j < v.cols(); ++j) {
          if (std::isnan(v(i, j)))
            EXPECT_NEAR(out.values(i, j), oracle_fill(v, i, j, kernel), 1e-9);
          else
            EXPECT_EQ(out.values(i, j), v(i, j));
          EXPECT_GT(out.values(i, j), 0.0);
        }
    }
  }
}

TEST(Impute, DenseIsIdentity) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Random(6, 4).array() + 2.0;
  EXPECT_EQ(impute(make_matrix(v), 5).values, v);
}

TEST(Pelt, ConstantIsOneRegime) {
  const auto r = pelt_segment(Eigen::MatrixXd::Constant(30, 24, 60.0), 0.0);
  EXPECT_EQ(r.change_points, std::vector<std::size_t>{0});
  EXPECT_EQ(r.n_regimes, 1u);
}

TEST(Pelt, SingleShiftMatchesExhaustive) {
  Eigen::MatrixXd x(20, 3);
  for (int t = 0; t < 20; ++t) x.row(t) = t < 10 ? Eigen::RowVector3d(1, 2, 3) : Eigen::RowVector3d(4, 0, 3);
  const auto r = pelt_segment(x, 1.0);
  EXPECT_EQ(r.change_points, (std::vector<std::size_t>{0, 10}));
  EXPECT_EQ(r.n_regimes, 2u);
  const auto [best, arg] = brute_force(x, 1.0);
  EXPECT_EQ(r.change_points, arg);
  EXPECT_NEAR(r.objective, best, 1e-9);
}

TEST(Pelt, HugePenaltyGivesOneRegime) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd x(40, 4);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = n(rng);
  const double total = seg_cost(x, 0, 40);
  EXPECT_EQ(pelt_segment(x, total).n_regimes, 1u);
}

TEST(Pelt, ExactOnShortSeries) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 40; ++trial) {
    const Eigen::Index len = 1 + static_cast<Eigen::Index>(rng() % 14);
    Eigen::MatrixXd x(len, 2);
    for (Eigen::Index t = 0; t < len; ++t)
      x.row(t) << n(rng) + (t > len / 2 ? 3.0 : 0.0), n(rng);
    const double pen = 0.5 * static_cast<double>(trial % 8);
    const auto r = pelt_segment(x, pen);
    const auto [best, arg] = brute_force(x, pen);
    EXPECT_NEAR(r.objective, best, 1e-9) << "trial " << trial;
    EXPECT_NEAR(segmentation_objective(x, r.change_points, pen), best, 1e-9);
  }
}

TEST(Pelt, RegimesNonIncreasingInPenalty) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd x(120, 5);
  for (Eigen::Index t = 0; t < x.rows(); ++t)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(t, j) = n(rng) + static_cast<double>((t / 30) % 2) * 2.0;
  std::size_t last = std::numeric_limits<std::size_t>::max();
  for (double pen = 0.0; pen < 400.0; pen += 5.0) {
    const auto r = pelt_segment(x, pen);
    EXPECT_LE(r.n_regimes, last);
    last = r.n_regimes;
    for (std::size_t k = 1; k < r.change_points.size(); ++k)
      EXPECT_LT(r.change_points[k - 1], r.change_points[k]);
  }
}

TEST(Pelt, DefaultPenaltyFindsLevelShift) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd x(1096, 24);
  for (Eigen::Index t = 0; t < x.rows(); ++t)
    for (Eigen::Index j = 0; j < 24; ++j)
      x(t, j) = (100.0 + 20.0 * std::sin(static_cast<double>(j) / 4.0)) * (t >= 500 ? 1.3 : 1.0) *
                (1.0 + 0.05 * n(rng));
  const auto r = pelt_segment(x, default_penalty(x));
  ASSERT_EQ(r.n_regimes, 2u);
  EXPECT_NEAR(static_cast<double>(r.change_points[1]), 500.0, 3.0);

  Eigen::MatrixXd flat = x;
  for (Eigen::Index t = 500; t < x.rows(); ++t) flat.row(t) /= 1.3;
  EXPECT_EQ(pelt_segment(flat, default_penalty(flat)).n_regimes, 1u);
}

TEST(Select, CoverageGateAndRegimes) {
  std::map<std::string, LinkMatrix> ms;
  Eigen::MatrixXd sparse = Eigen::MatrixXd::Constant(10, 10, 50.0);
  for (int k = 0; k < 31; ++k) sparse.data()[k] = kMiss;
  ms.emplace("sparse", make_matrix(sparse, "sparse"));
  ms.emplace("flat", make_matrix(Eigen::MatrixXd::Constant(10, 10, 50.0), "flat"));
  Eigen::MatrixXd shift = Eigen::MatrixXd::Constant(10, 10, 50.0);
  shift.bottomRows(5).array() = 80.0;
  ms.emplace("shift", make_matrix(shift, "shift"));

  const auto s = select_representative(ms, SelectionCriteria{}, 1.0);
  EXPECT_EQ(s.selected, std::vector<std::string>{"flat"});
  EXPECT_DOUBLE_EQ(s.report.at("sparse").coverage.coverage, 0.69);
  EXPECT_FALSE(s.report.at("sparse").segmentation.has_value());
  EXPECT_EQ(s.report.at("shift").segmentation->n_regimes, 2u);

  std::ostringstream out;
  write_selection_report_csv(out, s);
  EXPECT_EQ(out.str(),
            "link_ref,coverage,n_regimes,selected\n"
            "flat,1,1,true\n"
            "shift,1,2,false\n"
            "sparse,0.69,,false\n");
}

TEST(Select, PermissiveCriteriaKeepEveryObservedLink) {
  std::map<std::string, LinkMatrix> ms;
  std::mt19937_64 rng(4);
  for (int k = 0; k < 6; ++k) {
    Eigen::MatrixXd v = Eigen::MatrixXd::Constant(8, 6, kMiss);
    for (int c = 0; c <= k; ++c) v(static_cast<Eigen::Index>(rng() % 8), static_cast<Eigen::Index>(rng() % 6)) = 10.0 + c * 7.0;
    ms.emplace("L" + std::to_string(k), make_matrix(v, "L" + std::to_string(k)));
  }
  SelectionCriteria c;
  c.beta = 0.0;
  c.gamma = std::numeric_limits<std::size_t>::max();
  EXPECT_EQ(select_representative(ms, c).selected.size(), ms.size());
}

TEST(Select, InvalidCriteria) {
  SelectionCriteria c;
  c.kernel_size = 4;
  EXPECT_THROW(select_representative({}, c), InvalidInput);
  c = {};
  c.beta = 1.5;
  EXPECT_THROW(c.validate(), InvalidInput);
}
