#pragma once

// Scoring (RMSE, RMSPE, Pearson), batch-means effective sample size, trace
// summaries, and the FitReport that collects them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "btrt/error.hpp"
#include "btrt/parallel.hpp"
#include "btrt/posterior.hpp"
#include "btrt/tensor.hpp"
#include "json.hpp"

namespace btrt {

inline double rmse(const Eigen::VectorXd& est, const Eigen::VectorXd& truth) {
  if (est.size() != truth.size()) throw UsageError("rmse: length mismatch");
  if (est.size() == 0) throw UsageError("rmse: empty input");
  return std::sqrt((est - truth).squaredNorm() / static_cast<double>(est.size()));
}

inline double rmse(const DenseTensor& est, const DenseTensor& truth) {
  if (est.dims() != truth.dims()) {
    throw UsageError("rmse: dims " + dims_to_string(est.dims()) + " vs " +
                     dims_to_string(truth.dims()));
  }
  return rmse(Eigen::VectorXd(est.vec()), Eigen::VectorXd(truth.vec()));
}

struct PredictionScore {
  double rmspe = 0.0;
  std::optional<double> pearson;  // missing when either input is constant
};

inline PredictionScore rmspe_pearson(const Eigen::VectorXd& pred, const Eigen::VectorXd& actual) {
  if (pred.size() != actual.size()) {
    throw UsageError("prediction length " + std::to_string(pred.size()) + " vs actual length " +
                     std::to_string(actual.size()));
  }
  if (pred.size() < 2) throw UsageError("need at least 2 predictions");
  PredictionScore out;
  out.rmspe = rmse(pred, actual);
  const Eigen::ArrayXd a = pred.array() - pred.mean();
  const Eigen::ArrayXd b = actual.array() - actual.mean();
  const double saa = a.square().sum();
  const double sbb = b.square().sum();
  if (saa > 0.0 && sbb > 0.0) {
    out.pearson = std::clamp((a * b).sum() / std::sqrt(saa * sbb), -1.0, 1.0);
  }
  return out;
}

inline constexpr std::size_t kMinEssLength = 100;

namespace detail {

inline double sample_variance(const double* x, std::size_t n) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (x[i] - mean) * (x[i] - mean);
  return ss / static_cast<double>(n - 1);
}

// Batch-means estimate of the long-run variance (the variance of sqrt(n) times
// the sample mean), batch size floor(sqrt(n)). Trailing partial batch dropped.
inline double batch_means_variance(const double* x, std::size_t n) {
  const auto size = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const std::size_t batches = n / size;
  if (batches < 2) return 0.0;
  const std::size_t used = batches * size;
  double grand = 0.0;
  for (std::size_t i = 0; i < used; ++i) grand += x[i];
  grand /= static_cast<double>(used);
  double ss = 0.0;
  for (std::size_t k = 0; k < batches; ++k) {
    double m = 0.0;
    for (std::size_t i = k * size; i < (k + 1) * size; ++i) m += x[i];
    m /= static_cast<double>(size);
    ss += (m - grand) * (m - grand);
  }
  return static_cast<double>(size) * ss / static_cast<double>(batches - 1);
}

}  // namespace detail

inline double ess(const double* chain, std::size_t n) {
  if (n < kMinEssLength) {
    throw UsageError("ESS needs at least " + std::to_string(kMinEssLength) + " draws, got " +
                     std::to_string(n));
  }
  const double var = detail::sample_variance(chain, n);
  const double lrv = detail::batch_means_variance(chain, n);
  const double s = static_cast<double>(n);
  if (!(var > 0.0)) return 1.0;
  if (!(lrv > 0.0)) return s;
  return std::clamp(s * var / lrv, 1.0, s);
}

inline double ess(const std::vector<double>& chain) { return ess(chain.data(), chain.size()); }

struct EssSummary {
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

// ESS of every row of a parameters x draws matrix.
inline EssSummary ess_summary(const Eigen::MatrixXd& draws, unsigned threads = 1) {
  const auto p = static_cast<std::size_t>(draws.rows());
  const auto s = static_cast<std::size_t>(draws.cols());
  if (p == 0) throw UsageError("ESS summary of an empty parameter block");
  std::vector<double> values(p);
  parallel_chunks(p, 64, threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> row(s);
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t c = 0; c < s; ++c) {
        row[c] = draws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      }
      values[i] = ess(row);
    }
  });
  EssSummary out;
  out.count = p;
  out.min = *std::min_element(values.begin(), values.end());
  out.max = *std::max_element(values.begin(), values.end());
  out.median = median(values);
  return out;
}

struct TraceSummary {
  std::size_t length = 0;
  double mean = 0.0;
  double slope = 0.0;     // per iteration
  double slope_se = 0.0;  // autocorrelation-aware
  bool trend_flag = false;
  double first_half_mean = 0.0;
  double second_half_mean = 0.0;
  double split_z = 0.0;
  bool split_flag = false;
};

inline constexpr double kTraceFlagSe = 2.0;

// Least-squares slope of the post-burn-in trace, with a standard error that
// scales the i.i.d. one by the batch-means long-run variance of the
// residuals, plus a split-half z statistic built the same way.
inline TraceSummary trace_summary(const std::vector<double>& trace, std::size_t burn_in) {
  if (trace.size() <= burn_in) {
    throw UsageError("trace of length " + std::to_string(trace.size()) +
                     " is not longer than burn-in " + std::to_string(burn_in));
  }
  const double* x = trace.data() + burn_in;
  const std::size_t n = trace.size() - burn_in;
  TraceSummary out;
  out.length = n;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  out.mean = mean;
  if (n < 4) return out;

  const double tbar = 0.5 * static_cast<double>(n - 1);
  double stt = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - tbar;
    stt += dt * dt;
    sty += dt * (x[i] - mean);
  }
  out.slope = sty / stt;
  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    resid[i] = x[i] - mean - out.slope * (static_cast<double>(i) - tbar);
  }
  double lrv = detail::batch_means_variance(resid.data(), n);
  if (!(lrv > 0.0)) lrv = detail::sample_variance(resid.data(), n);
  out.slope_se = std::sqrt(lrv / stt);
  out.trend_flag = out.slope_se > 0.0 ? std::abs(out.slope) > kTraceFlagSe * out.slope_se
                                      : out.slope != 0.0;

  const std::size_t h = n / 2;
  const std::size_t h2 = n - h;
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < h; ++i) m1 += x[i];
  for (std::size_t i = h; i < n; ++i) m2 += x[i];
  out.first_half_mean = m1 / static_cast<double>(h);
  out.second_half_mean = m2 / static_cast<double>(h2);
  auto lr = [](const double* p, std::size_t len) {
    if (len < 4) return detail::sample_variance(p, len);
    const double v = detail::batch_means_variance(p, len);
    return v > 0.0 ? v : detail::sample_variance(p, len);
  };
  const double se = std::sqrt(lr(x, h) / static_cast<double>(h) + lr(x + h, h2) / static_cast<double>(h2));
  const double diff = out.second_half_mean - out.first_half_mean;
  out.split_z = se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : std::copysign(INFINITY, diff));
  out.split_flag = std::abs(out.split_z) > kTraceFlagSe;
  return out;
}

struct FitReport {
  std::optional<double> rmse_b;
  std::optional<double> rmspe;
  std::optional<double> pearson;
  EssSummary ess_b;
  EssSummary ess_gamma;
  double ess_sigma2 = 0.0;
  std::optional<DicResult> dic;
  TraceSummary trace;
  std::vector<double> loglik_trace;
  std::vector<std::string> warnings;
  RunManifest manifest;
};

inline nlohmann::ordered_json to_json(const EssSummary& e) {
  return {{"min", e.min}, {"median", e.median}, {"max", e.max}, {"count", e.count}};
}

inline nlohmann::ordered_json to_json(const TraceSummary& t) {
  return {{"length", t.length},
          {"mean", t.mean},
          {"slope", t.slope},
          {"slope_se", t.slope_se},
          {"trend_flag", t.trend_flag},
          {"first_half_mean", t.first_half_mean},
          {"second_half_mean", t.second_half_mean},
          {"split_z", t.split_z},
          {"split_flag", t.split_flag}};
}

inline nlohmann::ordered_json to_json(const FitReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["rmse_B"] = opt(r.rmse_b);
  j["rmspe"] = opt(r.rmspe);
  j["pearson"] = opt(r.pearson);
  j["ess"] = {{"B", to_json(r.ess_b)}, {"gamma", to_json(r.ess_gamma)}, {"sigma2", r.ess_sigma2}};
  if (r.dic) {
    j["dic"] = {{"dic", r.dic->dic},
                {"mean_deviance", r.dic->mean_deviance},
                {"deviance_at_mean", r.dic->deviance_at_mean},
                {"effective_parameters", r.dic->effective_parameters}};
  } else {
    j["dic"] = nullptr;
  }
  j["trace"] = to_json(r.trace);
  j["warnings"] = r.warnings;
  j["ranks"] = r.manifest.ranks;
  j["seed"] = r.manifest.seed;
  j["loglik_trace"] = r.loglik_trace;
  return j;
}

// Draw-level diagnostics that need neither data nor truth.
inline FitReport diagnose(const PosteriorDraws& draws, std::size_t burn_in_of_trace,
                          const std::vector<double>& full_trace, unsigned threads = 1) {
  FitReport r;
  r.manifest = draws.manifest;
  if (draws.size() >= kMinEssLength) {
    r.ess_b = ess_summary(draws.b, threads);
    if (draws.gamma.rows() > 0) r.ess_gamma = ess_summary(draws.gamma, threads);
    r.ess_sigma2 = ess(draws.sigma2);
  } else {
    r.warnings.push_back("fewer than " + std::to_string(kMinEssLength) +
                         " retained draws; ESS not computed");
  }
  r.loglik_trace = full_trace;
  r.trace = trace_summary(full_trace, burn_in_of_trace);
  if (r.trace.trend_flag) r.warnings.push_back("post-burn-in log-likelihood trace has a trend");
  return r;
}

}  // namespace btrt
