#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "btrt/error.hpp"
#include "btrt/model.hpp"
#include "btrt/rng.hpp"
#include "btrt/tensor.hpp"

namespace btrt {

struct RunManifest {
  std::uint64_t seed = 0;
  Dims dims;
  Dims ranks;
  std::size_t n = 0;
  std::size_t q = 0;
  std::size_t iterations = 0;
  std::size_t burn_in = 0;
  std::size_t thin = 1;
  Hyperparams hyper;
  bool center_scale = false;
  double response_center = 0.0;
  double response_scale = 1.0;
  bool retain_factors = false;

  std::size_t retained() const {
    if (iterations <= burn_in) return 0;
    return (iterations - burn_in + thin - 1) / thin;
  }
};

// Post-burn-in draws on the original response scale. Matrices hold one
// column per retained iteration.
struct PosteriorDraws {
  RunManifest manifest;
  std::vector<double> loglik;
  std::vector<double> sigma2;
  std::vector<double> tau;
  std::vector<double> z;
  Eigen::MatrixXd gamma;    // q x S
  Eigen::MatrixXd b;        // V x S, vec(B) per draw
  Eigen::MatrixXd factors;  // F x S when manifest.retain_factors, else empty

  std::size_t size() const { return loglik.size(); }

  void reserve(std::size_t s) {
    loglik.reserve(s);
    sigma2.reserve(s);
    tau.reserve(s);
    z.reserve(s);
  }

  void validate() const {
    const std::size_t s = size();
    if (sigma2.size() != s || tau.size() != s || z.size() != s ||
        static_cast<std::size_t>(gamma.cols()) != s || static_cast<std::size_t>(b.cols()) != s) {
      throw UsageError("posterior draw blocks disagree on the draw count");
    }
    if (s != manifest.retained()) {
      throw UsageError("draw count " + std::to_string(s) + " does not match manifest (" +
                       std::to_string(manifest.retained()) + ")");
    }
  }
};

struct FitOptions {
  Dims ranks;
  std::size_t iterations = 11000;
  std::size_t burn_in = 1000;
  std::size_t thin = 1;
  std::uint64_t seed = 1;
  bool center_scale = true;
  bool auto_raise_rank1 = false;
  bool retain_factors = false;
  unsigned threads = 1;
  std::optional<Hyperparams> hyper;  // defaults from order and ranks when unset
  std::ostream* progress = nullptr;  // "iter=<k> loglik=<v>" records
  std::size_t progress_every = 100;
};

struct FitResult {
  PosteriorDraws draws;
  std::vector<double> loglik_trace;  // every iteration, burn-in included
  std::vector<std::string> warnings;
  std::size_t clamp_hits = 0;
  ModelState final_state;  // on the fitting (possibly standardized) scale
};

inline std::string rank1_warning(const Dims& ranks) {
  return "ranks " + dims_to_string(ranks) +
         " include a margin of rank 1; with weak signal this can give divergent chains, "
         "raising every rank to >= 2 (auto_raise_rank1) usually avoids it";
}

// Absolute correlation above `threshold` between a scalar covariate and a
// voxel makes B and gamma unidentifiable for that pair.
inline std::vector<std::string> collinearity_warnings(const Dataset& d, RngStream& s,
                                                      double threshold = 0.999,
                                                      std::size_t sample = 1000) {
  std::vector<std::string> out;
  if (d.q() == 0 || d.n() < 3) return out;
  const std::size_t v = d.voxels();
  std::vector<std::size_t> picks;
  if (v <= sample) {
    for (std::size_t k = 0; k < v; ++k) picks.push_back(k);
  } else {
    for (std::size_t k = 0; k < sample; ++k) picks.push_back(static_cast<std::size_t>(s.below(v)));
    std::sort(picks.begin(), picks.end());
    picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
  }
  auto centered = [](Eigen::VectorXd x) {
    x.array() -= x.mean();
    return x;
  };
  for (Eigen::Index c = 0; c < d.eta.cols(); ++c) {
    const Eigen::VectorXd e = centered(d.eta.col(c));
    const double en = e.norm();
    if (en == 0.0) continue;
    for (auto k : picks) {
      const Eigen::VectorXd x = centered(d.x.row(static_cast<Eigen::Index>(k)).transpose());
      const double xn = x.norm();
      if (xn == 0.0) continue;
      const double r = e.dot(x) / (en * xn);
      if (std::abs(r) > threshold) {
        out.push_back("scalar covariate " + std::to_string(c) + " is collinear with voxel " +
                      std::to_string(k) + " (|r| = " + std::to_string(std::abs(r)) +
                      "); B and gamma are not separately identifiable there");
      }
    }
  }
  return out;
}

inline FitResult fit(const Dataset& data, const FitOptions& opt) {
  data.validate();
  if (opt.ranks.size() != data.order()) {
    throw UsageError("ranks " + dims_to_string(opt.ranks) + " do not match tensor order " +
                     std::to_string(data.order()));
  }
  if (opt.thin < 1) throw UsageError("thin must be >= 1");
  if (opt.iterations <= opt.burn_in) throw UsageError("iterations must exceed burn-in");

  FitResult result;
  Dims ranks = opt.ranks;
  if (std::find(ranks.begin(), ranks.end(), std::size_t{1}) != ranks.end()) {
    if (opt.auto_raise_rank1) {
      for (auto& r : ranks) r = std::max<std::size_t>(r, 2);
      result.warnings.push_back(rank1_warning(opt.ranks) + "; raised to " + dims_to_string(ranks));
    } else {
      result.warnings.push_back(rank1_warning(ranks));
    }
  }
  const Hyperparams hyper =
      opt.hyper ? *opt.hyper : Hyperparams::defaults(data.order(), ranks, data.q());
  hyper.validate(data.q());

  {
    RngStream pre(opt.seed, ChainStreams::id(0, StreamBlock::kPreflight));
    for (auto& w : collinearity_warnings(data, pre)) result.warnings.push_back(std::move(w));
  }

  // Standardize the response; draws are reported back on the original scale.
  double center = 0.0;
  double scale = 1.0;
  Dataset work = data;
  if (opt.center_scale && data.n() >= 2) {
    center = data.y.mean();
    const double sd = std::sqrt((data.y.array() - center).square().sum() /
                                static_cast<double>(data.n() - 1));
    if (sd > 0.0) scale = sd;
    work.y = (data.y.array() - center) / scale;
  }
  const double log_scale_n = static_cast<double>(data.n()) * std::log(scale);

  RunManifest& m = result.draws.manifest;
  m.seed = opt.seed;
  m.dims = data.dims;
  m.ranks = ranks;
  m.n = data.n();
  m.q = data.q();
  m.iterations = opt.iterations;
  m.burn_in = opt.burn_in;
  m.thin = opt.thin;
  m.hyper = hyper;
  m.center_scale = opt.center_scale;
  m.response_center = center;
  m.response_scale = scale;
  m.retain_factors = opt.retain_factors;

  const std::size_t kept = m.retained();
  auto& dr = result.draws;
  dr.reserve(kept);
  dr.gamma.resize(static_cast<Eigen::Index>(data.q()), static_cast<Eigen::Index>(kept));
  dr.b.resize(static_cast<Eigen::Index>(data.voxels()), static_cast<Eigen::Index>(kept));
  std::size_t factor_len = dims_product(ranks);
  for (std::size_t j = 0; j < ranks.size(); ++j) factor_len += ranks[j] * data.dims[j];
  if (opt.retain_factors) {
    dr.factors.resize(static_cast<Eigen::Index>(factor_len), static_cast<Eigen::Index>(kept));
  }

  RngStream init_rng(opt.seed, ChainStreams::id(0, StreamBlock::kInit));
  ModelState st = init_state(init_rng, data.dims, ranks, hyper, data.q());
  ChainStreams rng(opt.seed);
  result.loglik_trace.reserve(opt.iterations);

  for (std::size_t it = 0; it < opt.iterations; ++it) {
    const double ll = gibbs_sweep(rng, st, work, hyper, opt.threads) - log_scale_n;
    if (!std::isfinite(ll) || !st.scales_positive_finite()) {
      throw NumericalError("chain left the support at iteration " + std::to_string(it + 1));
    }
    result.loglik_trace.push_back(ll);
    if (opt.progress && ((it + 1) % opt.progress_every == 0 || it + 1 == opt.iterations)) {
      *opt.progress << "iter=" << (it + 1) << " loglik=" << ll << '\n';
    }
    if (it < opt.burn_in || (it - opt.burn_in) % opt.thin != 0) continue;
    const auto col = static_cast<Eigen::Index>(dr.size());
    dr.loglik.push_back(ll);
    dr.sigma2.push_back(st.sigma2 * scale * scale);
    dr.tau.push_back(st.tau);
    dr.z.push_back(st.z);
    if (data.q() > 0) dr.gamma.col(col) = st.gamma * scale;
    dr.b.col(col) = tucker_compose(st.tucker, opt.threads).vec() * scale;
    if (opt.retain_factors) {
      Eigen::Index off = 0;
      for (const auto& f : st.tucker.factors) {
        dr.factors.col(col).segment(off, f.size()) =
            Eigen::Map<const Eigen::VectorXd>(f.data(), f.size());
        off += f.size();
      }
      dr.factors.col(col).segment(off, static_cast<Eigen::Index>(st.tucker.core.size())) =
          st.tucker.core.vec() * scale;
    }
  }
  result.clamp_hits = st.clamp_hits;
  if (st.clamp_hits > 0) {
    result.warnings.push_back("local scales were clamped to [1e-12, 1e12] " +
                              std::to_string(st.clamp_hits) + " times");
  }
  result.final_state = std::move(st);
  return result;
}

// Linear predictor of every draw for a V x m block of covariate tensors.
inline Eigen::MatrixXd draw_predictions(const PosteriorDraws& draws, const Eigen::MatrixXd& x,
                                        const Eigen::MatrixXd& eta) {
  if (x.rows() != draws.b.rows()) {
    throw UsageError("covariate tensors have " + std::to_string(x.rows()) +
                     " voxels, draws have " + std::to_string(draws.b.rows()));
  }
  if (eta.cols() != draws.gamma.rows() || eta.rows() != x.cols()) {
    throw UsageError("scalar covariates must be m x " + std::to_string(draws.gamma.rows()));
  }
  Eigen::MatrixXd pred = x.transpose() * draws.b;  // m x S
  if (eta.cols() > 0) pred.noalias() += eta * draws.gamma;
  pred.array() += draws.manifest.response_center;
  return pred;
}

struct DicResult {
  double dic = 0.0;
  double mean_deviance = 0.0;
  double deviance_at_mean = 0.0;
  double effective_parameters = 0.0;
};

// DIC = 2 mean(D) - D(theta_bar), D = -2 log-likelihood, theta_bar = posterior
// means of the composed B, gamma and sigma2.
inline DicResult dic(const PosteriorDraws& draws, const Dataset& data) {
  if (draws.size() < 2) throw UsageError("DIC needs at least two retained draws");
  data.validate();
  DicResult r;
  double sum = 0.0;
  for (double ll : draws.loglik) sum += -2.0 * ll;
  r.mean_deviance = sum / static_cast<double>(draws.size());

  const Eigen::VectorXd b_bar = draws.b.rowwise().mean();
  const double s2_bar = std::accumulate(draws.sigma2.begin(), draws.sigma2.end(), 0.0) /
                        static_cast<double>(draws.size());
  Eigen::VectorXd pred = data.x.transpose() * b_bar;
  if (data.q() > 0) pred += data.eta * draws.gamma.rowwise().mean();
  pred.array() += draws.manifest.response_center;
  r.deviance_at_mean = -2.0 * gaussian_log_likelihood(data.y, pred, s2_bar);
  r.effective_parameters = r.mean_deviance - r.deviance_at_mean;
  r.dic = r.mean_deviance + r.effective_parameters;
  return r;
}

// Type-7 sample quantile of an unsorted range (copied).
inline double quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw UsageError("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

struct PredictionSummary {
  Eigen::VectorXd median;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double level = 0.95;
};

// Posterior-predictive medians and central `level` intervals of the linear
// predictor, one entry per column of x.
inline PredictionSummary posterior_predict(const PosteriorDraws& draws, const Eigen::MatrixXd& x,
                                           const Eigen::MatrixXd& eta, double level = 0.95) {
  if (!(level > 0.0 && level < 1.0)) throw UsageError("interval level must be in (0, 1)");
  if (draws.size() == 0) throw UsageError("no posterior draws");
  const Eigen::MatrixXd pred = draw_predictions(draws, x, eta);
  PredictionSummary out;
  out.level = level;
  out.median.resize(pred.rows());
  out.lower.resize(pred.rows());
  out.upper.resize(pred.rows());
  std::vector<double> row(static_cast<std::size_t>(pred.cols()));
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    for (Eigen::Index s = 0; s < pred.cols(); ++s) row[static_cast<std::size_t>(s)] = pred(i, s);
    out.median[i] = quantile(row, 0.5);
    out.lower[i] = quantile(row, 0.5 - level / 2.0);
    out.upper[i] = quantile(row, 0.5 + level / 2.0);
  }
  return out;
}

inline PredictionSummary posterior_predict(const PosteriorDraws& draws, const DenseTensor& stacked,
                                           const Eigen::MatrixXd& eta, double level = 0.95) {
  if (stacked.order() < 2) throw UsageError("stacked covariate tensor needs order >= 2");
  const auto m = static_cast<Eigen::Index>(stacked.dims().back());
  const auto v = static_cast<Eigen::Index>(stacked.size()) / m;
  Eigen::Map<const Eigen::MatrixXd> x(stacked.data(), v, m);
  return posterior_predict(draws, Eigen::MatrixXd(x), eta, level);
}

}  // namespace btrt
