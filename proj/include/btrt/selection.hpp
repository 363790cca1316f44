#pragma once

// Post-hoc sparsification of posterior draws and the greedy DIC rank search.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <vector>

#include "btrt/error.hpp"
#include "btrt/parallel.hpp"
#include "btrt/posterior.hpp"
#include "btrt/tensor.hpp"

namespace btrt {

inline constexpr int kTwoMeansMaxIter = 100;

struct TwoMeansSplit {
  std::size_t low_count = 0;  // size of the cluster with the smaller mean
  double low_mean = 0.0;
  double high_mean = 0.0;
  bool degenerate = false;  // all values equal; no split exists
};

namespace detail {

// Lloyd's algorithm on sorted 1-d values, initialized at (min, max). Both
// clusters stay contiguous in sorted order, so a split is a prefix length.
inline TwoMeansSplit two_means_sorted(const double* sorted, std::size_t count,
                                      const std::vector<double>& prefix) {
  TwoMeansSplit out;
  if (count == 0) {
    out.degenerate = true;
    return out;
  }
  const double lo = sorted[0];
  const double hi = sorted[count - 1];
  if (!(hi > lo)) {
    out.low_count = count;
    out.low_mean = out.high_mean = lo;
    out.degenerate = true;
    return out;
  }
  auto mean_of = [&](std::size_t a, std::size_t b) {
    return (prefix[b] - prefix[a]) / static_cast<double>(b - a);
  };
  double c0 = lo;
  double c1 = hi;
  std::size_t k = 0;
  for (int iter = 0; iter < kTwoMeansMaxIter; ++iter) {
    const double mid = 0.5 * (c0 + c1);
    const auto next = static_cast<std::size_t>(
        std::upper_bound(sorted, sorted + count, mid) - sorted);
    // A prefix of 0 or count would leave an empty cluster; the (min, max)
    // start makes that impossible, but clamp anyway.
    const std::size_t kk = std::clamp<std::size_t>(next, 1, count - 1);
    if (kk == k) break;
    k = kk;
    c0 = mean_of(0, k);
    c1 = mean_of(k, count);
  }
  out.low_count = k;
  out.low_mean = c0;
  out.high_mean = c1;
  return out;
}

}  // namespace detail

// Number of elements judged to be zero in one draw. The first split separates
// signal from the rest; the low cluster is then split again while the two
// sub-means differ by more than b. The result is the size of the last cluster
// whose split was no longer worth making.
inline std::size_t two_means_zero_count(std::vector<double> abs_values, double b) {
  if (abs_values.size() < 2) throw UsageError("sequential 2-means needs at least 2 parameters");
  std::sort(abs_values.begin(), abs_values.end());
  std::vector<double> prefix(abs_values.size() + 1, 0.0);
  for (std::size_t i = 0; i < abs_values.size(); ++i) prefix[i + 1] = prefix[i] + abs_values[i];

  auto first = detail::two_means_sorted(abs_values.data(), abs_values.size(), prefix);
  if (first.degenerate) return abs_values.size();
  std::size_t a = first.low_count;
  for (;;) {
    auto split = detail::two_means_sorted(abs_values.data(), a, prefix);
    if (split.degenerate) return a;
    if (!(std::abs(split.high_mean - split.low_mean) > b)) return a;
    a = split.low_count;
  }
}

struct TwoMeansResult {
  Eigen::VectorXd estimate;           // sparse point estimate
  Eigen::VectorXd median;             // elementwise posterior median
  std::vector<std::size_t> nz_per_draw;
  std::size_t nz_hat = 0;
  double b = 0.0;
  bool b_defaulted = false;
};

// Default gap threshold: twice the median over elements of the across-draw
// standard deviation, i.e. a gap smaller than typical posterior noise is not a
// real split. Falls back to 1e-3 times the median per-draw max |theta| when
// draws carry no spread (single draw, constant chains).
inline double default_two_means_b(const Eigen::MatrixXd& draws) {
  const auto p = draws.rows();
  const auto s = draws.cols();
  if (s >= 2) {
    std::vector<double> sd(static_cast<std::size_t>(p));
    for (Eigen::Index i = 0; i < p; ++i) {
      const double m = draws.row(i).mean();
      sd[static_cast<std::size_t>(i)] =
          std::sqrt((draws.row(i).array() - m).square().sum() / static_cast<double>(s - 1));
    }
    const double med = median(sd);
    if (med > 0.0 && std::isfinite(med)) return 2.0 * med;
  }
  std::vector<double> maxes(static_cast<std::size_t>(s));
  for (Eigen::Index c = 0; c < s; ++c) {
    maxes[static_cast<std::size_t>(c)] = draws.col(c).cwiseAbs().maxCoeff();
  }
  const double fallback = 1e-3 * median(maxes);
  return fallback > 0.0 ? fallback : std::numeric_limits<double>::min();
}

// draws: P x S, one column per posterior draw.
inline TwoMeansResult sequential_2means(const Eigen::MatrixXd& draws,
                                        std::optional<double> b = std::nullopt,
                                        unsigned threads = 1) {
  const auto p = draws.rows();
  const auto s = draws.cols();
  if (s < 1) throw UsageError("sequential 2-means needs at least one draw");
  if (p < 2) throw UsageError("sequential 2-means needs at least 2 parameters");
  if (!draws.allFinite()) throw UsageError("sequential 2-means: non-finite draws");
  TwoMeansResult out;
  if (b) {
    if (!(*b > 0.0) || !std::isfinite(*b)) throw UsageError("2-means threshold b must be > 0");
    out.b = *b;
  } else {
    out.b = default_two_means_b(draws);
    out.b_defaulted = true;
  }

  out.nz_per_draw.assign(static_cast<std::size_t>(s), 0);
  parallel_chunks(static_cast<std::size_t>(s), 16, threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> buf(static_cast<std::size_t>(p));
    for (std::size_t c = lo; c < hi; ++c) {
      for (Eigen::Index i = 0; i < p; ++i) {
        buf[static_cast<std::size_t>(i)] = std::abs(draws(i, static_cast<Eigen::Index>(c)));
      }
      out.nz_per_draw[c] = two_means_zero_count(buf, out.b);
    }
  });

  std::vector<double> counts(out.nz_per_draw.begin(), out.nz_per_draw.end());
  out.nz_hat = static_cast<std::size_t>(std::floor(median(counts)));

  out.median.resize(p);
  std::vector<double> row(static_cast<std::size_t>(s));
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index c = 0; c < s; ++c) row[static_cast<std::size_t>(c)] = draws(i, c);
    out.median[i] = median(row);
  }

  // Stable ordering by |median|, ties broken by index.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
  for (Eigen::Index i = 0; i < p; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b2) {
    return std::abs(out.median[a]) < std::abs(out.median[b2]);
  });
  out.estimate = out.median;
  for (std::size_t k = 0; k < out.nz_hat; ++k) out.estimate[order[k]] = 0.0;
  return out;
}

struct RankVisit {
  Dims ranks;
  double dic = std::numeric_limits<double>::infinity();
  bool failed = false;
};

struct RankSearchTrace {
  std::vector<RankVisit> visited;
  Dims selected;
  double selected_dic = std::numeric_limits<double>::infinity();
};

using DicOracle = std::function<double(const Dims&)>;

// Phase 1 grows equal ranks until DIC stops decreasing. Phase 2 repeatedly
// tries lowering one margin of the current baseline and moves to the best
// strict improvement.
inline RankSearchTrace rank_search(const DicOracle& oracle, std::size_t order,
                                   std::size_t max_rank) {
  if (order < 1) throw UsageError("rank search needs order >= 1");
  if (max_rank < 1) throw UsageError("rank search needs max rank >= 1");
  RankSearchTrace trace;
  std::set<Dims> seen;

  auto evaluate = [&](const Dims& ranks) {
    RankVisit visit{ranks};
    try {
      visit.dic = oracle(ranks);
      if (std::isnan(visit.dic)) {
        visit.dic = std::numeric_limits<double>::infinity();
        visit.failed = true;
      }
    } catch (const Error&) {
      visit.failed = true;
    }
    seen.insert(ranks);
    trace.visited.push_back(visit);
    return visit.dic;
  };

  Dims best(order, 1);
  double best_dic = evaluate(best);
  for (std::size_t r = 2; r <= max_rank; ++r) {
    const Dims cand(order, r);
    const double d = evaluate(cand);
    if (!(d < best_dic)) break;
    best = cand;
    best_dic = d;
  }

  // Candidates are fitted from the last margin down; the move goes to the
  // lowest DIC, ties to the lowest margin index.
  for (;;) {
    std::optional<Dims> next;
    double next_dic = best_dic;
    for (std::size_t j = order; j-- > 0;) {
      if (best[j] <= 1) continue;
      Dims cand = best;
      --cand[j];
      if (seen.count(cand)) continue;
      const double d = evaluate(cand);
      if (d < best_dic && (!next || d <= next_dic)) {
        next = cand;
        next_dic = d;
      }
    }
    if (!next) break;
    best = *next;
    best_dic = next_dic;
  }
  trace.selected = best;
  trace.selected_dic = best_dic;
  return trace;
}

// Rank search driven by real fits, scoring each rank vector by DIC.
inline RankSearchTrace rank_search(const Dataset& data, const FitOptions& base,
                                   std::size_t max_rank) {
  return rank_search(
      [&](const Dims& ranks) {
        FitOptions opt = base;
        opt.ranks = ranks;
        opt.auto_raise_rank1 = false;
        auto res = fit(data, opt);
        return dic(res.draws, data).dic;
      },
      data.order(), max_rank);
}

}  // namespace btrt
