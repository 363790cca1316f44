#pragma once

// Synthetic scalar-on-tensor data: a sparse coefficient tensor made of
// separated spherical activation regions, i.i.d. standard normal covariates,
// and responses from the linear model.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "btrt/error.hpp"
#include "btrt/model.hpp"
#include "btrt/rng.hpp"
#include "btrt/tensor.hpp"

namespace btrt {

struct SimConfig {
  Dims dims{50, 50};
  std::size_t regions = 3;
  double radius_min = 3.0;
  double radius_max = 6.0;
  double peak = 1.0;
  double edge_fraction = 0.2;  // value at the region boundary, relative to peak
  std::size_t n = 1000;
  std::size_t n_test = 0;
  Eigen::VectorXd gamma = (Eigen::VectorXd(3) << 25.0, 3.0, 0.1).finished();
  double noise_variance = 1.0;
  std::uint64_t seed = 1;
  std::size_t max_attempts = 1000;
  // Also forbid two regions from sharing any index along any mode, so each
  // region occupies its own rows/columns and needs its own rank component.
  bool separate_projections = false;

  void validate() const {
    if (dims.empty()) throw UsageError("simulation dims must be non-empty");
    if (n < 1) throw UsageError("simulation needs n >= 1");
    if (!(radius_min >= 0.0) || radius_max < radius_min) {
      throw UsageError("radius range must satisfy 0 <= min <= max");
    }
    const auto reach = static_cast<std::size_t>(std::ceil(radius_max));
    for (auto d : dims) {
      if (d < 2 * reach + 1) {
        throw UsageError("radius " + std::to_string(radius_max) + " does not fit inside dims " +
                         dims_to_string(dims));
      }
    }
    if (!(noise_variance >= 0.0)) throw UsageError("noise variance must be >= 0");
    if (!(edge_fraction > 0.0 && edge_fraction <= 1.0)) {
      throw UsageError("edge_fraction must be in (0, 1]");
    }
  }
};

// Stream ids used by the simulator, derived from SimConfig::seed.
enum class SimStream : std::uint64_t { kRegions = 101, kTrain = 102, kTest = 103 };

namespace detail {

// Calls fn(index) for every multi-index in the box [lo, hi] (inclusive).
template <typename Fn>
void for_each_in_box(const Dims& lo, const Dims& hi, Fn&& fn) {
  Dims idx = lo;
  for (;;) {
    fn(static_cast<const Dims&>(idx));
    std::size_t k = 0;
    while (k < idx.size()) {
      if (idx[k] < hi[k]) {
        ++idx[k];
        break;
      }
      idx[k] = lo[k];
      ++k;
    }
    if (k == idx.size()) return;
  }
}

inline double distance(const Dims& a, const Dims& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace detail

// Each region: uniform radius in [radius_min, radius_max], uniform centre
// keeping the sphere inside the tensor, value `peak` at the centre decaying
// linearly to edge_fraction * peak at the boundary. Regions neither overlap
// nor touch (face adjacency), so each one is its own connected component.
inline DenseTensor gen_regions(RngStream& s, const SimConfig& cfg) {
  cfg.validate();
  DenseTensor b(cfg.dims);
  const std::size_t order = cfg.dims.size();
  std::vector<std::vector<bool>> used(order);
  for (std::size_t k = 0; k < order; ++k) used[k].assign(cfg.dims[k], false);
  for (std::size_t region = 0; region < cfg.regions; ++region) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const double radius = cfg.radius_min + (cfg.radius_max - cfg.radius_min) * s.uniform();
      const auto reach = static_cast<std::size_t>(std::floor(radius));
      Dims centre(order), lo(order), hi(order);
      for (std::size_t k = 0; k < order; ++k) {
        centre[k] = reach + static_cast<std::size_t>(s.below(cfg.dims[k] - 2 * reach));
        lo[k] = centre[k] - reach;
        hi[k] = centre[k] + reach;
      }
      bool clear = true;
      detail::for_each_in_box(lo, hi, [&](const Dims& idx) {
        if (!clear || detail::distance(idx, centre) > radius) return;
        if (b.at(idx) != 0.0) clear = false;
        Dims nb = idx;
        for (std::size_t k = 0; k < order && clear; ++k) {
          if (nb[k] > 0) {
            --nb[k];
            if (b.at(nb) != 0.0) clear = false;
            ++nb[k];
          }
          if (nb[k] + 1 < cfg.dims[k]) {
            ++nb[k];
            if (b.at(nb) != 0.0) clear = false;
            --nb[k];
          }
        }
      });
      if (clear && cfg.separate_projections) {
        for (std::size_t k = 0; k < order && clear; ++k) {
          for (std::size_t i = lo[k]; i <= hi[k] && clear; ++i) {
            if (used[k][i]) clear = false;
          }
        }
      }
      if (!clear) continue;
      for (std::size_t k = 0; k < order; ++k) {
        for (std::size_t i = lo[k] > 0 ? lo[k] - 1 : 0; i <= std::min(hi[k] + 1, cfg.dims[k] - 1); ++i) {
          used[k][i] = true;
        }
      }
      detail::for_each_in_box(lo, hi, [&](const Dims& idx) {
        const double d = detail::distance(idx, centre);
        if (d > radius) return;
        const double frac = radius > 0.0 ? d / radius : 0.0;
        b.at(idx) = cfg.peak * (1.0 - (1.0 - cfg.edge_fraction) * frac);
      });
      placed = true;
    }
    if (!placed) {
      throw UsageError("could not place region " + std::to_string(region + 1) + " after " +
                       std::to_string(cfg.max_attempts) + " attempts");
    }
  }
  return b;
}

struct SimulatedData {
  Dataset data;
  Eigen::VectorXd mean;  // E[y | X, eta]
};

// X and eta i.i.d. N(0, 1); y_i = <B, X_i> + gamma' eta_i + N(0, noise_variance).
inline SimulatedData gen_dataset(RngStream& s, const SimConfig& cfg, const DenseTensor& b_true,
                                 std::size_t n) {
  if (b_true.dims() != cfg.dims) throw UsageError("true coefficient dims do not match config");
  const auto v = static_cast<Eigen::Index>(b_true.size());
  const auto ni = static_cast<Eigen::Index>(n);
  const auto q = cfg.gamma.size();
  SimulatedData out;
  Dataset& d = out.data;
  d.dims = cfg.dims;
  d.x.resize(v, ni);
  d.eta.resize(ni, q);
  for (Eigen::Index i = 0; i < ni; ++i) {
    for (Eigen::Index k = 0; k < v; ++k) d.x(k, i) = s.normal();
    for (Eigen::Index c = 0; c < q; ++c) d.eta(i, c) = s.normal();
  }
  out.mean = d.x.transpose() * b_true.vec();
  if (q > 0) out.mean += d.eta * cfg.gamma;
  const double sd = std::sqrt(cfg.noise_variance);
  d.y = out.mean;
  for (Eigen::Index i = 0; i < ni; ++i) d.y[i] += sd * s.normal();
  return out;
}

inline SimulatedData gen_dataset(RngStream& s, const SimConfig& cfg, const DenseTensor& b_true) {
  return gen_dataset(s, cfg, b_true, cfg.n);
}

struct Simulation {
  DenseTensor b_true;
  SimulatedData train;
  SimulatedData test;  // empty when n_test == 0
};

// Regions, training set and optional held-out set, each from its own stream.
inline Simulation simulate(const SimConfig& cfg) {
  RngStream regions(cfg.seed, static_cast<std::uint64_t>(SimStream::kRegions));
  RngStream train(cfg.seed, static_cast<std::uint64_t>(SimStream::kTrain));
  Simulation sim;
  sim.b_true = gen_regions(regions, cfg);
  sim.train = gen_dataset(train, cfg, sim.b_true);
  if (cfg.n_test > 0) {
    RngStream test(cfg.seed, static_cast<std::uint64_t>(SimStream::kTest));
    sim.test = gen_dataset(test, cfg, sim.b_true, cfg.n_test);
  }
  return sim;
}

}  // namespace btrt
