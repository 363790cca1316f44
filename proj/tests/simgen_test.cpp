#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <numbers>
#include <vector>

#include "btrt/diagnostics.hpp"
#include "btrt/simgen.hpp"

namespace btrt {
namespace {

// Face-connected components of the nonzero cells of a matrix.
std::size_t count_components(const DenseTensor& b) {
  const std::size_t rows = b.dim(0), cols = b.dim(1);
  std::vector<bool> seen(b.size(), false);
  std::size_t count = 0;
  for (std::size_t start = 0; start < b.size(); ++start) {
    if (seen[start] || b[start] == 0.0) continue;
    ++count;
    std::deque<std::size_t> queue{start};
    seen[start] = true;
    while (!queue.empty()) {
      const std::size_t k = queue.front();
      queue.pop_front();
      const std::size_t r = k % rows, c = k / rows;
      auto visit = [&](std::size_t rr, std::size_t cc) {
        const std::size_t kk = rr + rows * cc;
        if (!seen[kk] && b[kk] != 0.0) {
          seen[kk] = true;
          queue.push_back(kk);
        }
      };
      if (r > 0) visit(r - 1, c);
      if (r + 1 < rows) visit(r + 1, c);
      if (c > 0) visit(r, c - 1);
      if (c + 1 < cols) visit(r, c + 1);
    }
  }
  return count;
}

TEST(GenRegions, ZeroRadiusIsOneVoxel) {
  SimConfig cfg;
  cfg.dims = {9, 9};
  cfg.regions = 1;
  cfg.radius_min = cfg.radius_max = 0.0;
  RngStream s(1, 1);
  const auto b = gen_regions(s, cfg);
  std::size_t nz = 0;
  for (std::size_t k = 0; k < b.size(); ++k) nz += b[k] != 0.0;
  EXPECT_EQ(nz, 1u);
  EXPECT_DOUBLE_EQ(b.vec().maxCoeff(), cfg.peak);
}

TEST(GenRegions, PeakAtCentreAndValuesInRange) {
  SimConfig cfg;
  cfg.peak = 1.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    RngStream s(seed, 1);
    const auto b = gen_regions(s, cfg);
    EXPECT_DOUBLE_EQ(b.vec().maxCoeff(), 1.0);
    EXPECT_GE(b.vec().minCoeff(), 0.0);
    for (std::size_t k = 0; k < b.size(); ++k) {
      if (b[k] != 0.0) EXPECT_GE(b[k], cfg.edge_fraction - 1e-12);
    }
  }
}

TEST(GenRegions, DistinctComponents) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SimConfig cfg;
    cfg.seed = seed;
    RngStream s(seed, 1);
    EXPECT_EQ(count_components(gen_regions(s, cfg)), cfg.regions) << "seed " << seed;
  }
}

TEST(GenRegions, SeparateProjectionsDoNotShareRowsOrColumns) {
  SimConfig cfg;
  cfg.separate_projections = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    RngStream s(seed, 1);
    const auto b = gen_regions(s, cfg);
    const Eigen::Map<const Eigen::MatrixXd> m(b.data(), 50, 50);
    // Each active row/column belongs to a single component, so the number of
    // distinct supports equals the region count in either projection.
    std::size_t row_runs = 0, col_runs = 0;
    bool prev_row = false, prev_col = false;
    for (Eigen::Index k = 0; k < 50; ++k) {
      const bool row = (m.row(k).array() != 0.0).any();
      const bool col = (m.col(k).array() != 0.0).any();
      row_runs += row && !prev_row;
      col_runs += col && !prev_col;
      prev_row = row;
      prev_col = col;
    }
    EXPECT_EQ(row_runs, cfg.regions) << "seed " << seed;
    EXPECT_EQ(col_runs, cfg.regions) << "seed " << seed;
  }
}

TEST(GenRegions, ActiveFractionMatchesGeometry) {
  SimConfig cfg;
  double total = 0.0;
  const int reps = 40;
  for (int seed = 1; seed <= reps; ++seed) {
    RngStream s(static_cast<std::uint64_t>(seed), 1);
    const auto b = gen_regions(s, cfg);
    for (std::size_t k = 0; k < b.size(); ++k) total += b[k] != 0.0;
  }
  const double observed = total / (reps * 2500.0);
  // E[pi r^2] for r ~ U(3, 6) is 21 pi per region.
  const double expected = 3.0 * 21.0 * std::numbers::pi / 2500.0;
  EXPECT_NEAR(observed, expected, 0.2 * expected);
}

TEST(GenRegions, ImpossiblePlacementThrows) {
  SimConfig cfg;
  cfg.dims = {13, 13};
  cfg.regions = 5;
  cfg.max_attempts = 50;
  RngStream s(1, 1);
  EXPECT_THROW(gen_regions(s, cfg), UsageError);
  cfg.dims = {8, 8};
  EXPECT_THROW(cfg.validate(), UsageError);
}

TEST(GenDataset, NoiselessResponseIsExact) {
  SimConfig cfg;
  cfg.dims = {15, 15};
  cfg.n = 40;
  cfg.noise_variance = 0.0;
  const DenseTensor zero(cfg.dims);
  RngStream s(3, 3);
  const auto sim = gen_dataset(s, cfg, zero);
  EXPECT_TRUE(sim.data.y.isApprox(sim.data.eta * cfg.gamma, 1e-14));
  EXPECT_EQ(sim.data.y, sim.mean);
}

TEST(GenDataset, NoiseVarianceAndUnitSlope) {
  SimConfig cfg;
  cfg.seed = 4;
  const auto sim = simulate(cfg);
  const Eigen::VectorXd resid = sim.train.data.y - sim.train.mean;
  const double var = resid.squaredNorm() / static_cast<double>(resid.size());
  EXPECT_NEAR(var, cfg.noise_variance, 0.1 * cfg.noise_variance);
  const Eigen::ArrayXd m = sim.train.mean.array() - sim.train.mean.mean();
  const Eigen::ArrayXd y = sim.train.data.y.array() - sim.train.data.y.mean();
  EXPECT_NEAR((m * y).sum() / m.square().sum(), 1.0, 0.01);
}

TEST(Simulate, ReproducibleAndShaped) {
  SimConfig cfg;
  cfg.n = 30;
  cfg.n_test = 12;
  const auto a = simulate(cfg);
  const auto b = simulate(cfg);
  EXPECT_EQ(a.b_true, b.b_true);
  EXPECT_EQ(a.train.data.y, b.train.data.y);
  EXPECT_EQ(a.test.data.x, b.test.data.x);
  EXPECT_EQ(a.train.data.x.rows(), 2500);
  EXPECT_EQ(a.train.data.x.cols(), 30);
  EXPECT_EQ(a.train.data.eta.cols(), 3);
  EXPECT_EQ(a.test.data.n(), 12u);
  EXPECT_NE(a.train.data.x(0, 0), a.test.data.x(0, 0));
  cfg.seed = 2;
  EXPECT_NE(simulate(cfg).b_true, a.b_true);
}

TEST(Simulate, ZeroBaselineRmse) {
  SimConfig cfg;
  cfg.n = 5;
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    cfg.seed = seed;
    const auto sim = simulate(cfg);
    const double base = rmse(DenseTensor(cfg.dims), sim.b_true);
    EXPECT_GE(base, 0.08) << "seed " << seed;
    EXPECT_LE(base, 0.20) << "seed " << seed;
    total += base;
  }
  EXPECT_NEAR(total / 10.0, 0.134, 0.02);
}

}  // namespace
}  // namespace btrt
