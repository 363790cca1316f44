#pragma once

// Two-step voxelwise GLM: regress the scalar covariates out of y, then test
// each voxel by a no-intercept simple regression, and control FDR with
// Benjamini-Hochberg.

#include <Eigen/Dense>

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <vector>

#include "btrt/error.hpp"
#include "btrt/model.hpp"
#include "btrt/parallel.hpp"
#include "btrt/tensor.hpp"

namespace btrt {

struct VoxelTestResult {
  Dims index;
  double estimate = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
  bool rejected = false;
  bool zero_variance = false;
};

// y - [1, eta] * coef, with coef from least squares. The intercept column is
// always included so the residuals are centred.
inline Eigen::VectorXd residualize(const Dataset& d) {
  const auto n = d.n();
  const auto q = d.q();
  if (n <= q + 1) {
    throw UsageError("residualize needs n > q + 1 (n=" + std::to_string(n) +
                     ", q=" + std::to_string(q) + ")");
  }
  Eigen::MatrixXd design(n, q + 1);
  design.col(0).setOnes();
  if (q > 0) design.rightCols(q) = d.eta;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < design.cols()) throw UsageError("scalar covariates are rank deficient");
  const Eigen::VectorXd coef = qr.solve(d.y);
  return d.y - design * coef;
}

// One no-intercept regression of ytilde on every voxel column of x (V x n),
// with a two-sided t-test on n - 1 degrees of freedom.
inline std::vector<VoxelTestResult> voxelwise_fit(const Eigen::VectorXd& ytilde,
                                                  const Eigen::MatrixXd& x, const Dims& dims,
                                                  unsigned threads = 1) {
  const auto n = x.cols();
  const auto v = x.rows();
  if (n < 3) throw UsageError("voxelwise fit needs n >= 3");
  if (ytilde.size() != n) throw UsageError("voxelwise fit: response length does not match n");
  if (dims_product(dims) != static_cast<std::size_t>(v)) {
    throw UsageError("voxelwise fit: dims do not match voxel count");
  }
  const double df = static_cast<double>(n - 1);
  const boost::math::students_t dist(df);
  const double yy = ytilde.squaredNorm();
  std::vector<VoxelTestResult> out(static_cast<std::size_t>(v));
  const DenseTensor shape(dims);

  parallel_chunks(static_cast<std::size_t>(v), 256, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      auto& r = out[k];
      r.index = shape.multi_index(k);
      const auto row = x.row(static_cast<Eigen::Index>(k));
      const double xx = row.squaredNorm();
      if (!(xx > 0.0)) {
        r.zero_variance = true;
        continue;
      }
      const double xy = row.dot(ytilde);
      r.estimate = xy / xx;
      const double ssr = std::max(0.0, yy - xy * r.estimate);
      const double s2 = ssr / df;
      r.std_error = std::sqrt(s2 / xx);
      if (!(r.std_error > 0.0)) {
        r.p_value = 0.0;  // exact fit
        continue;
      }
      const double t = std::abs(r.estimate) / r.std_error;
      r.p_value = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, t)), 0.0, 1.0);
    }
  });
  return out;
}

// Benjamini-Hochberg step-up. Returns one flag per input p-value.
inline std::vector<bool> bh_adjust(const std::vector<double>& p, double q) {
  if (p.empty()) throw UsageError("BH adjustment needs at least one p-value");
  if (!(q > 0.0 && q < 1.0)) throw UsageError("FDR level q must be in (0, 1)");
  for (double x : p) {
    if (!(x >= 0.0 && x <= 1.0)) throw UsageError("p-values must lie in [0, 1]");
  }
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  double cutoff = -1.0;
  for (std::size_t k = m; k >= 1; --k) {
    const double p_k = p[order[k - 1]];
    if (p_k <= static_cast<double>(k) * q / static_cast<double>(m)) {
      cutoff = p_k;
      break;
    }
  }
  std::vector<bool> out(m, false);
  for (std::size_t i = 0; i < m; ++i) out[i] = p[i] <= cutoff;
  return out;
}

struct GlmMap {
  DenseTensor estimate;
  std::vector<VoxelTestResult> voxels;
  std::size_t rejected = 0;
};

inline GlmMap glm_coefficient_map(const Dataset& d, double q, unsigned threads = 1) {
  d.validate();
  GlmMap out;
  out.voxels = voxelwise_fit(residualize(d), d.x, d.dims, threads);
  std::vector<double> p(out.voxels.size());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = out.voxels[k].p_value;
  const auto keep = bh_adjust(p, q);
  out.estimate = DenseTensor(d.dims);
  for (std::size_t k = 0; k < p.size(); ++k) {
    out.voxels[k].rejected = keep[k];
    if (keep[k]) {
      out.estimate[k] = out.voxels[k].estimate;
      ++out.rejected;
    }
  }
  return out;
}

}  // namespace btrt
