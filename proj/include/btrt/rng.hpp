#pragma once

// Seedable random streams and the variate generators needed by the Gibbs
// full conditionals. Variates are generated from raw engine bits with
// portable algorithms, so sequences are identical on every platform.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>

#include "btrt/error.hpp"

namespace btrt {

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_(stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32), 0x42545254u};
    engine_.seed(seq);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  // Marsaglia polar method; the second variate of each pair is cached.
  double normal() {
    if (spare_) {
      const double out = *spare_;
      spare_.reset();
      return out;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    return u * f;
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw UsageError("below: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

namespace detail {
inline void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw UsageError(std::string(what) + " must be positive and finite, got " +
                     std::to_string(v));
  }
}
}  // namespace detail

// Shape/rate parameterization: mean shape/rate. Marsaglia-Tsang.
inline double sample_gamma(RngStream& s, double shape, double rate) {
  detail::require_positive(shape, "gamma shape");
  detail::require_positive(rate, "gamma rate");
  if (shape < 1.0) {
    const double g = sample_gamma(s, shape + 1.0, 1.0);
    return std::exp(std::log(g) + std::log(s.uniform()) / shape) / rate;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = s.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = s.uniform();
    if (u < 1.0 - 0.0331 * (x * x) * (x * x)) return d * v / rate;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
  }
}

inline double sample_inv_gamma(RngStream& s, double a, double b) {
  return 1.0 / sample_gamma(s, a, b);
}

inline double sample_exponential(RngStream& s, double rate) {
  detail::require_positive(rate, "exponential rate");
  return -std::log(s.uniform()) / rate;
}

// GIG(p, a, b): density proportional to x^(p-1) exp(-(a x + b / x) / 2).
// Devroye's (2014) rejection sampler on the log scale, which needs no
// numerical setup and keeps a bounded rejection rate for every p.
inline double sample_gig(RngStream& s, double p, double a, double b) {
  detail::require_positive(a, "GIG a");
  detail::require_positive(b, "GIG b");
  if (!std::isfinite(p)) throw UsageError("GIG p must be finite");
  if (p < 0.0) return 1.0 / sample_gig(s, -p, b, a);

  const double lambda = p;
  const double omega = std::sqrt(a) * std::sqrt(b);
  const double root = std::hypot(lambda, omega);
  // root - lambda without cancellation.
  const double alpha = omega * omega / (root + lambda);

  auto psi = [&](double x) {
    return -alpha * (std::cosh(x) - 1.0) - lambda * (std::expm1(x) - x);
  };
  auto dpsi = [&](double x) { return -alpha * std::sinh(x) - lambda * std::expm1(x); };

  double t;
  {
    const double g = -psi(1.0);
    if (g > 2.0) {
      t = std::sqrt(2.0 / (alpha + lambda));
    } else if (g < 0.5) {
      t = std::log(4.0 / (alpha + 2.0 * lambda));
    } else {
      t = 1.0;
    }
  }
  double sl;
  {
    const double g = -psi(-1.0);
    if (g > 2.0) {
      sl = std::sqrt(4.0 / (alpha * std::cosh(1.0) + lambda));
    } else if (g < 0.5) {
      const double inv = 1.0 / alpha;
      const double cand = std::log1p(inv + std::sqrt(inv * inv + 2.0 * inv));
      sl = lambda > 0.0 ? std::min(1.0 / lambda, cand) : cand;
    } else {
      sl = 1.0;
    }
  }

  const double eta = -psi(t);
  const double zeta = -dpsi(t);
  const double theta = -psi(-sl);
  const double xi = dpsi(-sl);
  const double pw = 1.0 / xi;
  const double rw = 1.0 / zeta;
  const double td = t - rw * eta;
  const double sd = sl - pw * theta;
  const double q = td + sd;
  const double total = pw + q + rw;

  double x;
  for (;;) {
    const double u = s.uniform();
    const double v = s.uniform();
    const double w = s.uniform();
    double log_chi;
    if (u < q / total) {
      x = -sd + q * v;
      log_chi = 0.0;
    } else if (u < (q + rw) / total) {
      x = td - rw * std::log(v);
      log_chi = -eta - zeta * (x - t);
    } else {
      x = -sd + pw * std::log(v);
      log_chi = -theta + xi * (x + sl);
    }
    if (std::log(w) + log_chi <= psi(x)) break;
  }
  // Undo the mode-centred log transform: x_orig = (lambda + root) / a * e^x.
  return (lambda + root) / a * std::exp(x);
}

// Draw from N(precision^-1 mean_term, precision^-1) via one Cholesky
// factorization and two triangular solves.
inline Eigen::VectorXd sample_mvn_precision(RngStream& s, const Eigen::VectorXd& mean_term,
                                            const Eigen::MatrixXd& precision) {
  if (precision.rows() != precision.cols() || precision.rows() != mean_term.size()) {
    throw UsageError("sample_mvn_precision: shape mismatch");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("precision matrix is not positive definite (size " +
                         std::to_string(precision.rows()) + ")");
  }
  const auto& lower = llt.matrixL();
  Eigen::VectorXd mean = lower.solve(mean_term);
  Eigen::VectorXd noise(mean_term.size());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = s.normal();
  mean += noise;
  llt.matrixU().solveInPlace(mean);
  if (!mean.allFinite()) throw NumericalError("non-finite multivariate normal draw");
  return mean;
}

}  // namespace btrt
