#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

#include "btrt/rng.hpp"
#include "btrt/selection.hpp"
#include "btrt/simgen.hpp"

namespace btrt {
namespace {

TEST(TwoMeans, HandExample) {
  EXPECT_EQ(two_means_zero_count({0.0, 0.0, 0.0, 5.0, 5.0}, 0.1), 3u);
  EXPECT_EQ(two_means_zero_count({5.0, 0.0, 5.0, 0.0, 0.0}, 0.1), 3u);
}

TEST(TwoMeans, AllEqualIsAllZero) {
  EXPECT_EQ(two_means_zero_count({0.0, 0.0, 0.0, 0.0}, 0.1), 4u);
  EXPECT_EQ(two_means_zero_count({2.0, 2.0, 2.0}, 0.1), 3u);
}

TEST(TwoMeans, SmallGapStopsRefinement) {
  // Low cluster {0, 0.01, 0.02} splits with a gap well below b.
  EXPECT_EQ(two_means_zero_count({0.0, 0.01, 0.02, 3.0, 3.1}, 0.5), 3u);
  // With a tiny b the noise cluster keeps splitting down to its smallest part.
  EXPECT_LT(two_means_zero_count({0.0, 0.01, 0.02, 3.0, 3.1}, 1e-6), 3u);
}

TEST(TwoMeans, NeedsTwoValues) {
  EXPECT_THROW(two_means_zero_count({1.0}, 0.1), UsageError);
}

Eigen::MatrixXd planted_draws(std::uint64_t seed, std::size_t p, std::size_t signal,
                              std::size_t s, double noise) {
  RngStream r(seed, 1);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(s));
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double mean = static_cast<std::size_t>(i) < signal ? 1.0 + 0.1 * static_cast<double>(i) : 0.0;
      out(i, c) = mean + noise * r.normal();
    }
  }
  return out;
}

TEST(Sequential2Means, RecoversPlantedSupport) {
  const auto draws = planted_draws(1, 200, 20, 300, 0.05);
  const auto r = sequential_2means(draws);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < 200; ++i) {
    const bool truth = i < 20;
    const bool sel = r.estimate[i] != 0.0;
    tp += truth && sel;
    fp += !truth && sel;
    fn += truth && !sel;
  }
  const double f1 = 2.0 * tp / (2.0 * tp + fp + fn);
  EXPECT_GE(f1, 0.9);
  EXPECT_TRUE(r.b_defaulted);
  EXPECT_EQ(r.nz_per_draw.size(), 300u);
}

TEST(Sequential2Means, SparsityCountMatchesEstimate) {
  const auto draws = planted_draws(2, 60, 10, 50, 0.05);
  const auto r = sequential_2means(draws);
  std::size_t zeros = 0;
  for (Eigen::Index i = 0; i < r.estimate.size(); ++i) zeros += r.estimate[i] == 0.0;
  EXPECT_EQ(zeros, r.nz_hat);
  for (Eigen::Index i = 0; i < r.estimate.size(); ++i) {
    if (r.estimate[i] != 0.0) EXPECT_EQ(r.estimate[i], r.median[i]);
  }
}

TEST(Sequential2Means, ScaleEquivariant) {
  const auto draws = planted_draws(3, 80, 8, 40, 0.05);
  const auto a = sequential_2means(draws);
  const auto b = sequential_2means(7.0 * draws);
  EXPECT_EQ(a.nz_hat, b.nz_hat);
  EXPECT_TRUE(b.estimate.isApprox(7.0 * a.estimate, 1e-12));
  EXPECT_NEAR(b.b, 7.0 * a.b, 1e-12 * b.b);
}

TEST(Sequential2Means, ExplicitThresholdAndThreads) {
  const auto draws = planted_draws(4, 50, 5, 64, 0.05);
  const auto a = sequential_2means(draws, 0.2, 1);
  const auto b = sequential_2means(draws, 0.2, 4);
  EXPECT_FALSE(a.b_defaulted);
  EXPECT_EQ(a.nz_per_draw, b.nz_per_draw);
  EXPECT_THROW(sequential_2means(draws, -1.0), UsageError);
}

TEST(Sequential2Means, SingleDrawUsesFallbackThreshold) {
  Eigen::MatrixXd d(5, 1);
  d << 0.0, 0.0, 0.0, 5.0, 5.0;
  const auto r = sequential_2means(d);
  EXPECT_NEAR(r.b, 5e-3, 1e-15);
  EXPECT_EQ(r.nz_hat, 3u);
}

// Scripted DIC surface; records visit order.
struct Scripted {
  std::map<Dims, double> table;
  std::vector<Dims> calls;
  double operator()(const Dims& r) {
    calls.push_back(r);
    const auto it = table.find(r);
    if (it == table.end()) return 1e9;
    return it->second;
  }
};

TEST(RankSearch, FollowsScriptedPath) {
  Scripted s;
  s.table = {{{1, 1}, 100.0}, {{2, 2}, 90.0}, {{3, 3}, 80.0}, {{4, 4}, 85.0},
             {{3, 2}, 75.0},  {{2, 3}, 78.0}, {{3, 1}, 77.0}};
  const auto t = rank_search([&](const Dims& r) { return s(r); }, 2, 6);
  const std::vector<Dims> want{{1, 1}, {2, 2}, {3, 3}, {4, 4}, {3, 2}, {2, 3}, {3, 1}};
  ASSERT_EQ(t.visited.size(), want.size());
  for (std::size_t k = 0; k < want.size(); ++k) EXPECT_EQ(t.visited[k].ranks, want[k]);
  EXPECT_EQ(t.selected, (Dims{3, 2}));
  EXPECT_DOUBLE_EQ(t.selected_dic, 75.0);
}

TEST(RankSearch, IncreasingSurfaceStopsAtOne) {
  const auto t = rank_search(
      [](const Dims& r) {
        double s = 0.0;
        for (auto v : r) s += static_cast<double>(v);
        return s;
      },
      2, 5);
  ASSERT_EQ(t.visited.size(), 2u);
  EXPECT_EQ(t.visited[0].ranks, (Dims{1, 1}));
  EXPECT_EQ(t.visited[1].ranks, (Dims{2, 2}));
  EXPECT_EQ(t.selected, (Dims{1, 1}));
}

TEST(RankSearch, StopsAtMaxRank) {
  const auto t = rank_search([](const Dims& r) { return -static_cast<double>(r[0]); }, 1, 4);
  EXPECT_EQ(t.selected, (Dims{4}));
  EXPECT_EQ(t.visited.size(), 4u);  // rank 3 was already seen
}

TEST(RankSearch, FailedFitsScoreInfinity) {
  const auto t = rank_search(
      [](const Dims& r) -> double {
        if (r[0] == 2) throw NumericalError("diverged");
        return 10.0 - static_cast<double>(r[0] + r[1]);
      },
      2, 4);
  ASSERT_GE(t.visited.size(), 2u);
  EXPECT_TRUE(t.visited[1].failed);
  EXPECT_TRUE(std::isinf(t.visited[1].dic));
  EXPECT_EQ(t.selected, (Dims{1, 1}));
}

TEST(RankSearch, Deterministic) {
  Scripted a, b;
  a.table = b.table = {{{1, 1}, 5.0}, {{2, 2}, 4.0}, {{3, 3}, 4.5}, {{2, 1}, 3.0}, {{1, 2}, 3.0}};
  const auto ta = rank_search([&](const Dims& r) { return a(r); }, 2, 5);
  const auto tb = rank_search([&](const Dims& r) { return b(r); }, 2, 5);
  EXPECT_EQ(a.calls, b.calls);
  EXPECT_EQ(ta.selected, tb.selected);
  // Tie between (2, 1) and (1, 2): the lower margin index wins.
  EXPECT_EQ(ta.selected, (Dims{1, 2}));
}

TEST(RankSearch, RejectsBadArguments) {
  EXPECT_THROW(rank_search([](const Dims&) { return 0.0; }, 0, 3), UsageError);
  EXPECT_THROW(rank_search([](const Dims&) { return 0.0; }, 2, 0), UsageError);
}

}  // namespace
}  // namespace btrt
