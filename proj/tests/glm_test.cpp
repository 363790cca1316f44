#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "btrt/glm.hpp"
#include "btrt/rng.hpp"
#include "btrt/simgen.hpp"

namespace btrt {
namespace {

Dataset noise_dataset(std::uint64_t seed, const Dims& dims, std::size_t n, std::size_t q) {
  RngStream s(seed, 3);
  Dataset d;
  d.dims = dims;
  d.x.resize(static_cast<Eigen::Index>(dims_product(dims)), static_cast<Eigen::Index>(n));
  d.eta.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
  d.y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index k = 0; k < d.x.size(); ++k) d.x.data()[k] = s.normal();
  for (Eigen::Index k = 0; k < d.eta.size(); ++k) d.eta.data()[k] = s.normal();
  for (Eigen::Index k = 0; k < d.y.size(); ++k) d.y[k] = s.normal();
  return d;
}

TEST(Residualize, RemovesExactLinearSignal) {
  Dataset d = noise_dataset(1, {2}, 10, 2);
  d.y = 3.0 + 2.0 * d.eta.col(0).array() - d.eta.col(1).array();
  EXPECT_LT(residualize(d).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Residualize, OrthogonalToDesign) {
  const Dataset d = noise_dataset(2, {2}, 30, 3);
  const Eigen::VectorXd r = residualize(d);
  EXPECT_NEAR(r.sum(), 0.0, 1e-10);
  EXPECT_LT((d.eta.transpose() * r).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Residualize, MatchesNormalEquations) {
  const Dataset d = noise_dataset(3, {2}, 25, 2);
  Eigen::MatrixXd a(25, 3);
  a.col(0).setOnes();
  a.rightCols(2) = d.eta;
  const Eigen::VectorXd coef = (a.transpose() * a).ldlt().solve(a.transpose() * d.y);
  EXPECT_TRUE(residualize(d).isApprox(d.y - a * coef, 1e-10));
}

TEST(Residualize, NoCovariatesOnlyCentres) {
  const Dataset d = noise_dataset(4, {2}, 8, 0);
  const Eigen::VectorXd r = residualize(d);
  EXPECT_TRUE(r.isApprox((d.y.array() - d.y.mean()).matrix(), 1e-12));
}

TEST(Residualize, RejectsTooFewObservations) {
  const Dataset d = noise_dataset(5, {2}, 3, 2);
  EXPECT_THROW(residualize(d), UsageError);
}

TEST(VoxelwiseFit, ExactSlopeAndZeroVariance) {
  Eigen::MatrixXd x(2, 4);
  x << 1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0;
  Eigen::VectorXd y(4);
  y << 2.0, 4.0, 6.0, 8.0;
  const auto r = voxelwise_fit(y, x, {2});
  EXPECT_DOUBLE_EQ(r[0].estimate, 2.0);
  EXPECT_DOUBLE_EQ(r[0].p_value, 0.0);
  EXPECT_TRUE(r[1].zero_variance);
  EXPECT_DOUBLE_EQ(r[1].p_value, 1.0);
}

TEST(VoxelwiseFit, MatchesClosedFormT) {
  Eigen::MatrixXd x(1, 5);
  x << 1.0, -1.0, 2.0, 0.5, -0.5;
  Eigen::VectorXd y(5);
  y << 1.2, -0.7, 1.5, 0.9, 0.1;
  const auto r = voxelwise_fit(y, x, {1});
  const double xx = x.row(0).squaredNorm();
  const double bhat = x.row(0).dot(y) / xx;
  const double s2 = (y - bhat * x.row(0).transpose()).squaredNorm() / 4.0;
  const double t = bhat / std::sqrt(s2 / xx);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(4.0), t));
  EXPECT_NEAR(r[0].estimate, bhat, 1e-14);
  EXPECT_NEAR(r[0].std_error, std::sqrt(s2 / xx), 1e-14);
  EXPECT_NEAR(r[0].p_value, p, 1e-12);
}

TEST(VoxelwiseFit, IndexFollowsModeOneMajor) {
  const Dataset d = noise_dataset(6, {3, 2}, 10, 0);
  const auto r = voxelwise_fit(d.y, d.x, d.dims);
  EXPECT_EQ(r[4].index, (Dims{1, 1}));
  EXPECT_EQ(r[2].index, (Dims{2, 0}));
}

TEST(VoxelwiseFit, ThreadCountDoesNotChangeResults) {
  const Dataset d = noise_dataset(7, {30, 30}, 20, 0);
  const auto a = voxelwise_fit(d.y, d.x, d.dims, 1);
  const auto b = voxelwise_fit(d.y, d.x, d.dims, 4);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].p_value, b[k].p_value);
}

TEST(BenjaminiHochberg, WorkedExample) {
  const auto keep = bh_adjust({0.01, 0.02, 0.04, 0.05}, 0.05);
  EXPECT_EQ(keep, (std::vector<bool>{true, true, true, true}));
  const auto none = bh_adjust({1.0, 1.0, 1.0}, 0.05);
  EXPECT_EQ(none, (std::vector<bool>{false, false, false}));
  EXPECT_EQ(bh_adjust({0.04}, 0.05), std::vector<bool>{true});
  // Step-up: 0.024 passes at rank 2, which carries 0.02 > 0.05 / 4 with it.
  EXPECT_EQ(bh_adjust({0.02, 0.024, 0.5, 0.9}, 0.05),
            (std::vector<bool>{true, true, false, false}));
}

TEST(BenjaminiHochberg, MonotoneInP) {
  RngStream s(8, 8);
  std::vector<double> p(200);
  for (auto& v : p) v = std::pow(s.uniform(), 3.0);
  const auto keep = bh_adjust(p, 0.1);
  double max_kept = -1.0, min_dropped = 2.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (keep[i]) max_kept = std::max(max_kept, p[i]);
    else min_dropped = std::min(min_dropped, p[i]);
  }
  EXPECT_LT(max_kept, min_dropped);
}

TEST(BenjaminiHochberg, TiesShareTheDecision) {
  const auto keep = bh_adjust({0.03, 0.03, 0.03, 0.9}, 0.05);
  EXPECT_TRUE(keep[0] && keep[1] && keep[2]);
  EXPECT_FALSE(keep[3]);
  const auto perm = bh_adjust({0.9, 0.03, 0.03, 0.03}, 0.05);
  EXPECT_EQ(perm, (std::vector<bool>{false, true, true, true}));
}

TEST(BenjaminiHochberg, RejectsBadInput) {
  EXPECT_THROW(bh_adjust({}, 0.05), UsageError);
  EXPECT_THROW(bh_adjust({0.5}, 0.0), UsageError);
  EXPECT_THROW(bh_adjust({1.5}, 0.05), UsageError);
}

TEST(GlmMap, FindsStrongSingleVoxel) {
  Dataset d = noise_dataset(9, {10, 10}, 200, 1);
  d.y = 5.0 * d.x.row(37).transpose() + 2.0 * d.eta.col(0) + 0.5 * d.y;
  const auto m = glm_coefficient_map(d, 0.05);
  EXPECT_TRUE(m.voxels[37].rejected);
  EXPECT_NEAR(m.estimate[37], 5.0, 0.2);
  EXPECT_LE(m.rejected, 4u);
}

TEST(GlmMap, NullDataRarelyRejects) {
  std::size_t any = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Dataset d = noise_dataset(100 + seed, {8, 8}, 60, 1);
    if (glm_coefficient_map(d, 0.05).rejected > 0) ++any;
  }
  // Under the global null the family-wise rate equals the FDR level.
  EXPECT_LE(any, 4u);
}

}  // namespace
}  // namespace btrt
