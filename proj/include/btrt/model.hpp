#pragma once

// State, hyperparameters and Gibbs full conditionals for scalar-on-tensor
// regression with a Tucker-structured coefficient and generalized
// double-Pareto shrinkage on both the margin factors and the core.
//
//   y_i = <B, X_i> + gamma' eta_i + e_i,   e_i ~ N(0, sigma2)
//   B   = sum_r g_r beta_{1,r_1} o ... o beta_{D,r_D}
//   beta_{j,r} ~ N(0, tau W_{j,r}),  W = diag(omega_{j,r,l}),
//   omega ~ Exp(lambda^2 / 2),  lambda ~ Gamma(a_lambda, b_lambda),  tau ~ Gamma(a_tau, b_tau)
//   g_r ~ N(0, z v_r),  v_r ~ Exp(phi_r^2 / 2),  phi_r ~ Gamma(a_phi, b_phi),  z ~ Gamma(a_z, b_z)
//   gamma ~ N(mu_gamma, Sigma_gamma),  sigma2 ~ InvGamma(a_sigma, b_sigma)
//
// Gamma distributions use the shape/rate parameterization.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "btrt/error.hpp"
#include "btrt/rng.hpp"
#include "btrt/tensor.hpp"

namespace btrt {

inline constexpr double kScaleFloor = 1e-12;
inline constexpr double kScaleCap = 1e12;

struct Hyperparams {
  double a_sigma = 3.0;
  double b_sigma = 20.0;
  double a_lambda = 3.0;
  double b_lambda = 1.0;
  double a_tau = 1.0;
  double b_tau = 1.0;
  double a_z = 1.0;
  double b_z = 1.0;
  double a_phi = 3.0;
  double b_phi = 1.0;
  Eigen::VectorXd mu_gamma;
  Eigen::MatrixXd sigma_gamma;

  // Defaults as a function of tensor order, ranks and covariate count.
  static Hyperparams defaults(std::size_t order, std::span<const std::size_t> ranks,
                              std::size_t q) {
    Hyperparams h;
    const double d = static_cast<double>(order);
    const double min_rank = static_cast<double>(*std::min_element(ranks.begin(), ranks.end()));
    h.b_lambda = std::pow(h.a_lambda, 1.0 / (2.0 * d));
    h.b_phi = std::pow(h.a_phi, 1.0 / (2.0 * d));
    h.b_tau = std::pow(min_rank, 1.0 / d - 1.0);
    h.b_z = h.b_tau;
    h.mu_gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));
    h.sigma_gamma = 900.0 * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(q),
                                                      static_cast<Eigen::Index>(q));
    return h;
  }

  void validate(std::size_t q) const {
    const double scalars[] = {a_sigma, b_sigma, a_lambda, b_lambda, a_tau,
                              b_tau,   a_z,     b_z,      a_phi,    b_phi};
    for (double v : scalars) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw UsageError("hyperparameters must be positive and finite");
      }
    }
    if (static_cast<std::size_t>(mu_gamma.size()) != q ||
        static_cast<std::size_t>(sigma_gamma.rows()) != q ||
        static_cast<std::size_t>(sigma_gamma.cols()) != q) {
      throw UsageError("mu_gamma / sigma_gamma must match the covariate count " +
                       std::to_string(q));
    }
    if (q > 0) {
      Eigen::LLT<Eigen::MatrixXd> llt(sigma_gamma);
      if (llt.info() != Eigen::Success || !sigma_gamma.isApprox(sigma_gamma.transpose())) {
        throw UsageError("sigma_gamma must be symmetric positive definite");
      }
    }
  }
};

struct ModelState {
  TuckerFactorSet tucker;
  std::vector<Eigen::MatrixXd> omega;   // p_j x R_j local scales
  std::vector<Eigen::VectorXd> lambda;  // R_j rates
  double tau = 1.0;
  DenseTensor v;    // core local scales, dims R
  DenseTensor phi;  // core rates, dims R
  double z = 1.0;
  Eigen::VectorXd gamma;
  double sigma2 = 1.0;
  std::size_t clamp_hits = 0;  // omega/v values clamped before inversion

  Dims dims() const { return tucker.dims(); }
  Dims ranks() const { return tucker.ranks(); }

  bool scales_positive_finite() const {
    auto ok = [](double x) { return x > 0.0 && std::isfinite(x); };
    if (!ok(tau) || !ok(z) || !ok(sigma2)) return false;
    for (const auto& m : omega) {
      if (!m.allFinite() || (m.array() <= 0.0).any()) return false;
    }
    for (const auto& l : lambda) {
      if (!l.allFinite() || (l.array() <= 0.0).any()) return false;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!ok(v[i]) || !ok(phi[i])) return false;
    }
    return true;
  }
};

// Responses y (n), covariate tensors stored as a V x n matrix whose column i
// is vec(X_i) in mode-1-major order, and scalar covariates eta (n x q).
struct Dataset {
  Dims dims;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::MatrixXd eta;

  std::size_t n() const { return static_cast<std::size_t>(y.size()); }
  std::size_t q() const { return static_cast<std::size_t>(eta.cols()); }
  std::size_t voxels() const { return dims_product(dims); }
  std::size_t order() const { return dims.size(); }

  // dims (p_1, ..., p_D, n)
  Dims stacked_dims() const {
    Dims out = dims;
    out.push_back(n());
    return out;
  }

  void validate() const {
    if (dims.empty()) throw UsageError("dataset needs a tensor order of at least 1");
    for (auto d : dims) {
      if (d == 0) throw UsageError("dataset dims must be positive");
    }
    if (static_cast<std::size_t>(x.rows()) != voxels() ||
        static_cast<std::size_t>(x.cols()) != n()) {
      throw UsageError("covariate tensor holds " + std::to_string(x.cols()) +
                       " subjects but there are " + std::to_string(n()) + " responses");
    }
    if (static_cast<std::size_t>(eta.rows()) != n()) {
      throw UsageError("scalar covariates have " + std::to_string(eta.rows()) +
                       " rows but there are " + std::to_string(n()) + " responses");
    }
  }

  // `stacked` has dims (p_1, ..., p_D, n).
  static Dataset from_tensor(const DenseTensor& stacked, Eigen::VectorXd y, Eigen::MatrixXd eta) {
    if (stacked.order() < 2) throw UsageError("stacked covariate tensor needs order >= 2");
    Dataset d;
    d.dims.assign(stacked.dims().begin(), stacked.dims().end() - 1);
    const auto n = static_cast<Eigen::Index>(stacked.dims().back());
    d.x = Eigen::Map<const Eigen::MatrixXd>(stacked.data(),
                                            static_cast<Eigen::Index>(d.voxels()), n);
    d.y = std::move(y);
    d.eta = eta.size() == 0 && eta.rows() == 0 ? Eigen::MatrixXd(d.y.size(), 0) : std::move(eta);
    d.validate();
    return d;
  }

  DenseTensor stacked() const {
    return DenseTensor(stacked_dims(), std::vector<double>(x.data(), x.data() + x.size()));
  }

  DenseTensor subject(std::size_t i) const {
    const double* col = x.col(static_cast<Eigen::Index>(i)).data();
    return DenseTensor(dims, std::vector<double>(col, col + voxels()));
  }
};

// One RNG stream per parameter block of the sweep.
enum class StreamBlock : std::uint64_t {
  kInit = 1,
  kFactors,
  kLocalScales,
  kGlobalScale,
  kCore,
  kCoreScales,
  kGamma,
  kNoise,
  kPreflight,
};

struct ChainStreams {
  explicit ChainStreams(std::uint64_t seed, std::uint64_t chain = 0)
      : factors(seed, id(chain, StreamBlock::kFactors)),
        local_scales(seed, id(chain, StreamBlock::kLocalScales)),
        global_scale(seed, id(chain, StreamBlock::kGlobalScale)),
        core(seed, id(chain, StreamBlock::kCore)),
        core_scales(seed, id(chain, StreamBlock::kCoreScales)),
        gamma(seed, id(chain, StreamBlock::kGamma)),
        noise(seed, id(chain, StreamBlock::kNoise)) {}

  static std::uint64_t id(std::uint64_t chain, StreamBlock b) {
    return (chain << 8) | static_cast<std::uint64_t>(b);
  }

  RngStream factors;
  RngStream local_scales;
  RngStream global_scale;
  RngStream core;
  RngStream core_scales;
  RngStream gamma;
  RngStream noise;
};

// Gaussian full conditional in precision form; the data and prior parts are
// kept apart so each can be inspected.
struct GaussianConditional {
  Eigen::MatrixXd data_precision;
  Eigen::VectorXd prior_precision;  // diagonal of the prior precision
  Eigen::MatrixXd prior_precision_full;  // used instead of the diagonal when non-empty
  Eigen::VectorXd mean_term;

  Eigen::MatrixXd precision() const {
    Eigen::MatrixXd p = data_precision;
    if (prior_precision_full.size() > 0) {
      p += prior_precision_full;
    } else {
      p.diagonal() += prior_precision;
    }
    return p;
  }

  Eigen::VectorXd mean() const { return precision().llt().solve(mean_term); }
};

namespace detail {

inline double clamp_scale(double s, std::size_t& hits) {
  if (s < kScaleFloor) {
    ++hits;
    return kScaleFloor;
  }
  if (s > kScaleCap) {
    ++hits;
    return kScaleCap;
  }
  return s;
}

inline double keep_representable(double s) {
  return std::clamp(s, std::numeric_limits<double>::min(), std::numeric_limits<double>::max());
}

// GIG draw that tolerates a zero b-argument. With b == 0 the density is a
// Gamma(p, a/2) when p > 0; otherwise it is improper and `fallback` is drawn.
template <typename Fallback>
double sample_gig_or(RngStream& s, double p, double a, double b, Fallback&& fallback) {
  if (b > 0.0) return sample_gig(s, p, a, b);
  if (p > 0.0) return sample_gamma(s, p, a / 2.0);
  return fallback();
}

// Result of contracting the stacked data tensor (p_1..p_D, n) on every
// covariate mode except `keep` with the transposed factors.
struct Contraction {
  Dims dims;  // (R_1, .., p_keep, .., R_D, n)
  std::vector<double> values;
};

inline Contraction contract_except(const Dataset& d, const std::vector<Eigen::MatrixXd>& factors,
                                   std::size_t keep, unsigned threads) {
  Contraction cur{d.stacked_dims(), {}};
  const double* src = d.x.data();
  for (std::size_t m = 0; m < d.order(); ++m) {
    if (m == keep) continue;
    Dims out_dims = cur.dims;
    out_dims[m] = static_cast<std::size_t>(factors[m].cols());
    std::vector<double> out(dims_product(out_dims));
    detail::mode_multiply_raw(src, cur.dims, m, factors[m].transpose(), out.data(), threads);
    cur.dims = std::move(out_dims);
    cur.values = std::move(out);
    src = cur.values.data();
  }
  if (cur.values.empty()) cur.values.assign(d.x.data(), d.x.data() + d.x.size());
  return cur;
}

// Column i of entry r holds u_i(r) = sum over multi-ranks with r_j == r of
// g_r * m_i(r). The contraction does not involve factor j, so every r of
// margin j comes out of one pass.
inline std::vector<Eigen::MatrixXd> margin_designs(const Contraction& c, const DenseTensor& core,
                                                   std::size_t j) {
  const std::size_t order = core.order();
  const auto& rk = core.dims();
  const std::size_t left = dims_product(std::span(rk).subspan(0, j));
  const std::size_t right = dims_product(std::span(rk).subspan(j + 1));
  const std::size_t pj = c.dims[j];
  const std::size_t rj = rk[j];
  const std::size_t n = c.dims[order];
  const auto pji = static_cast<Eigen::Index>(pj);
  const auto rji = static_cast<Eigen::Index>(rj);
  std::vector<Eigen::MatrixXd> u(rj, Eigen::MatrixXd(pji, static_cast<Eigen::Index>(n)));
  Eigen::MatrixXd acc(pji, rji);
  for (std::size_t i = 0; i < n; ++i) {
    acc.setZero();
    for (std::size_t k = 0; k < right; ++k) {
      Eigen::Map<const Eigen::MatrixXd> block(c.values.data() + left * pj * (k + right * i),
                                              static_cast<Eigen::Index>(left), pji);
      Eigen::Map<const Eigen::MatrixXd> g(core.data() + left * rj * k,
                                          static_cast<Eigen::Index>(left), rji);
      acc.noalias() += block.transpose() * g;
    }
    for (std::size_t r = 0; r < rj; ++r) {
      u[r].col(static_cast<Eigen::Index>(i)) = acc.col(static_cast<Eigen::Index>(r));
    }
  }
  return u;
}

inline Eigen::MatrixXd margin_design(const Contraction& c, const DenseTensor& core, std::size_t j,
                                     std::size_t r) {
  return std::move(margin_designs(c, core, j)[r]);
}

// Rows index vec(G); column i holds t_i(r) = <beta_{1,r_1} o ... o beta_{D,r_D}, X_i>.
inline Eigen::MatrixXd core_design(const Contraction& except_last, const Eigen::MatrixXd& last_factor,
                                   std::size_t order, unsigned threads) {
  Dims out_dims = except_last.dims;
  out_dims[order - 1] = static_cast<std::size_t>(last_factor.cols());
  const std::size_t n = out_dims.back();
  const std::size_t cells = dims_product(std::span(out_dims).subspan(0, order));
  Eigen::MatrixXd t(static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(n));
  detail::mode_multiply_raw(except_last.values.data(), except_last.dims, order - 1,
                            last_factor.transpose(), t.data(), threads);
  return t;
}

inline Eigen::MatrixXd scaled_gram(const Eigen::MatrixXd& design, double scale) {
  const auto k = design.rows();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(k, k);
  p.selfadjointView<Eigen::Lower>().rankUpdate(design, scale);
  return p.selfadjointView<Eigen::Lower>();
}

inline GaussianConditional beta_conditional_from(const ModelState& st, const Eigen::MatrixXd& u,
                                                 const Eigen::VectorXd& rest, std::size_t j,
                                                 std::size_t r, std::size_t& hits) {
  GaussianConditional c;
  const double inv_s2 = 1.0 / st.sigma2;
  c.data_precision = scaled_gram(u, inv_s2);
  c.mean_term = (u * rest) * inv_s2;
  const auto& om = st.omega[j];
  c.prior_precision.resize(om.rows());
  for (Eigen::Index l = 0; l < om.rows(); ++l) {
    c.prior_precision[l] = 1.0 / (st.tau * clamp_scale(om(l, static_cast<Eigen::Index>(r)), hits));
  }
  return c;
}

inline GaussianConditional core_conditional_from(const ModelState& st, const Eigen::MatrixXd& t,
                                                 const Eigen::VectorXd& target, std::size_t& hits) {
  GaussianConditional c;
  const double inv_s2 = 1.0 / st.sigma2;
  c.data_precision = scaled_gram(t, inv_s2);
  c.mean_term = (t * target) * inv_s2;
  c.prior_precision.resize(static_cast<Eigen::Index>(st.v.size()));
  for (std::size_t k = 0; k < st.v.size(); ++k) {
    c.prior_precision[static_cast<Eigen::Index>(k)] = 1.0 / (st.z * clamp_scale(st.v[k], hits));
  }
  return c;
}

inline double sum_sq_scaled(const ModelState& st) {
  double s = 0.0;
  for (std::size_t j = 0; j < st.tucker.factors.size(); ++j) {
    s += (st.tucker.factors[j].array().square() / st.omega[j].array()).sum();
  }
  return s;
}

}  // namespace detail

inline void check_shapes(const ModelState& st, const Dataset& d) {
  if (st.dims() != d.dims) {
    throw UsageError("state dims " + dims_to_string(st.dims()) + " do not match data dims " +
                     dims_to_string(d.dims));
  }
  if (static_cast<std::size_t>(st.gamma.size()) != d.q()) {
    throw UsageError("state has " + std::to_string(st.gamma.size()) +
                     " scalar coefficients, data has " + std::to_string(d.q()));
  }
}

namespace detail {
inline ModelState allocate_state(const Dims& dims, const Dims& ranks, std::size_t q) {
  if (dims.size() != ranks.size() || dims.empty()) {
    throw UsageError("ranks " + dims_to_string(ranks) + " do not match dims " +
                     dims_to_string(dims));
  }
  for (std::size_t j = 0; j < ranks.size(); ++j) {
    if (ranks[j] < 1 || dims[j] < 1) throw UsageError("ranks and dims must be >= 1");
  }
  ModelState st;
  st.tucker.core = DenseTensor(ranks);
  st.v = DenseTensor(ranks);
  st.phi = DenseTensor(ranks);
  for (std::size_t j = 0; j < dims.size(); ++j) {
    const auto p = static_cast<Eigen::Index>(dims[j]);
    const auto r = static_cast<Eigen::Index>(ranks[j]);
    st.tucker.factors.push_back(Eigen::MatrixXd::Zero(p, r));
    st.omega.push_back(Eigen::MatrixXd::Ones(p, r));
    st.lambda.push_back(Eigen::VectorXd::Ones(r));
  }
  st.gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));
  return st;
}

inline void draw_scales_from_prior(RngStream& s, ModelState& st, const Hyperparams& h) {
  st.tau = sample_gamma(s, h.a_tau, h.b_tau);
  for (std::size_t j = 0; j < st.omega.size(); ++j) {
    for (Eigen::Index r = 0; r < st.lambda[j].size(); ++r) {
      const double lam = sample_gamma(s, h.a_lambda, h.b_lambda);
      st.lambda[j][r] = lam;
      for (Eigen::Index l = 0; l < st.omega[j].rows(); ++l) {
        st.omega[j](l, r) = keep_representable(sample_exponential(s, lam * lam / 2.0));
      }
    }
  }
  st.z = sample_gamma(s, h.a_z, h.b_z);
  for (std::size_t k = 0; k < st.v.size(); ++k) {
    st.phi[k] = sample_gamma(s, h.a_phi, h.b_phi);
    st.v[k] = keep_representable(sample_exponential(s, st.phi[k] * st.phi[k] / 2.0));
  }
}
}  // namespace detail

// Starting point for a chain: scales from their priors, small random factors,
// standard normal core, gamma at its prior mean, sigma2 at its prior mean.
inline ModelState init_state(RngStream& s, const Dims& dims, const Dims& ranks,
                             const Hyperparams& h, std::size_t q) {
  h.validate(q);
  ModelState st = detail::allocate_state(dims, ranks, q);
  detail::draw_scales_from_prior(s, st, h);
  for (auto& f : st.tucker.factors) {
    for (Eigen::Index k = 0; k < f.size(); ++k) f.data()[k] = 0.1 * s.normal();
  }
  for (std::size_t k = 0; k < st.tucker.core.size(); ++k) st.tucker.core[k] = s.normal();
  st.gamma = h.mu_gamma;
  st.sigma2 = h.a_sigma > 1.0 ? h.b_sigma / (h.a_sigma - 1.0) : h.b_sigma / (h.a_sigma + 1.0);
  return st;
}

// Exact draw of every parameter from the joint prior.
inline ModelState draw_from_prior(RngStream& s, const Dims& dims, const Dims& ranks,
                                  const Hyperparams& h, std::size_t q) {
  h.validate(q);
  ModelState st = detail::allocate_state(dims, ranks, q);
  detail::draw_scales_from_prior(s, st, h);
  for (std::size_t j = 0; j < st.tucker.factors.size(); ++j) {
    auto& f = st.tucker.factors[j];
    for (Eigen::Index r = 0; r < f.cols(); ++r) {
      for (Eigen::Index l = 0; l < f.rows(); ++l) {
        f(l, r) = std::sqrt(st.tau * st.omega[j](l, r)) * s.normal();
      }
    }
  }
  for (std::size_t k = 0; k < st.tucker.core.size(); ++k) {
    st.tucker.core[k] = std::sqrt(st.z * st.v[k]) * s.normal();
  }
  if (q > 0) {
    Eigen::MatrixXd lower = h.sigma_gamma.llt().matrixL();
    Eigen::VectorXd e(static_cast<Eigen::Index>(q));
    for (Eigen::Index k = 0; k < e.size(); ++k) e[k] = s.normal();
    st.gamma = h.mu_gamma + lower * e;
  }
  st.sigma2 = sample_inv_gamma(s, h.a_sigma, h.b_sigma);
  return st;
}

// <B, X_i> for every subject, B composed from the current state.
inline Eigen::VectorXd tensor_contribution(const ModelState& st, const Dataset& d,
                                           unsigned threads = 1) {
  check_shapes(st, d);
  const DenseTensor b = tucker_compose(st.tucker, threads);
  return d.x.transpose() * b.vec();
}

inline Eigen::VectorXd linear_predictor(const ModelState& st, const Dataset& d) {
  Eigen::VectorXd pred = tensor_contribution(st, d);
  if (d.q() > 0) pred += d.eta * st.gamma;
  return pred;
}

inline double gaussian_log_likelihood(const Eigen::VectorXd& y, const Eigen::VectorXd& pred,
                                      double sigma2) {
  const double n = static_cast<double>(y.size());
  const double ssr = (y - pred).squaredNorm();
  return -0.5 * n * std::log(2.0 * std::numbers::pi * sigma2) - 0.5 * ssr / sigma2;
}

inline double log_likelihood(const ModelState& st, const Dataset& d) {
  return gaussian_log_likelihood(d.y, linear_predictor(st, d), st.sigma2);
}

// ---------------------------------------------------------------------------
// Full conditionals
// ---------------------------------------------------------------------------

inline GaussianConditional gamma_conditional(const ModelState& st, const Dataset& d,
                                             const Hyperparams& h,
                                             const Eigen::VectorXd& tensor_part) {
  GaussianConditional c;
  const Eigen::MatrixXd prior_prec = h.sigma_gamma.inverse();
  const double inv_s2 = 1.0 / st.sigma2;
  c.data_precision = (d.eta.transpose() * d.eta) * inv_s2;
  c.prior_precision_full = prior_prec;
  c.mean_term = (d.eta.transpose() * (d.y - tensor_part)) * inv_s2 + prior_prec * h.mu_gamma;
  return c;
}

inline GaussianConditional gamma_conditional(const ModelState& st, const Dataset& d,
                                             const Hyperparams& h) {
  check_shapes(st, d);
  return gamma_conditional(st, d, h, tensor_contribution(st, d));
}

inline void update_gamma(RngStream& s, ModelState& st, const Dataset& d, const Hyperparams& h) {
  if (d.q() == 0) return;
  const auto c = gamma_conditional(st, d, h);
  st.gamma = sample_mvn_precision(s, c.mean_term, c.precision());
}

inline void update_sigma2_from_ssr(RngStream& s, ModelState& st, std::size_t n, double ssr,
                                   const Hyperparams& h) {
  st.sigma2 = sample_inv_gamma(s, h.a_sigma + 0.5 * static_cast<double>(n), h.b_sigma + 0.5 * ssr);
}

inline void update_sigma2(RngStream& s, ModelState& st, const Dataset& d, const Hyperparams& h) {
  check_shapes(st, d);
  const double ssr = (d.y - linear_predictor(st, d)).squaredNorm();
  update_sigma2_from_ssr(s, st, d.n(), ssr, h);
}

// Conditional of beta_{j,r} given everything else.
inline GaussianConditional beta_conditional(ModelState& st, const Dataset& d, const Hyperparams&,
                                            std::size_t j, std::size_t r) {
  check_shapes(st, d);
  const auto y_except = detail::contract_except(d, st.tucker.factors, j, 1);
  const Eigen::MatrixXd u = detail::margin_design(y_except, st.tucker.core, j, r);
  Eigen::VectorXd rest = d.y - tensor_contribution(st, d) +
                         u.transpose() * st.tucker.factors[j].col(static_cast<Eigen::Index>(r));
  if (d.q() > 0) rest -= d.eta * st.gamma;
  return detail::beta_conditional_from(st, u, rest, j, r, st.clamp_hits);
}

inline void update_beta_margin(RngStream& s, ModelState& st, const Dataset& d,
                               const Hyperparams& h, std::size_t j, std::size_t r) {
  const auto c = beta_conditional(st, d, h, j, r);
  st.tucker.factors[j].col(static_cast<Eigen::Index>(r)) =
      sample_mvn_precision(s, c.mean_term, c.precision());
}

inline GaussianConditional core_conditional(ModelState& st, const Dataset& d, const Hyperparams&) {
  check_shapes(st, d);
  const std::size_t last = d.order() - 1;
  const auto y_except = detail::contract_except(d, st.tucker.factors, last, 1);
  const Eigen::MatrixXd t = detail::core_design(y_except, st.tucker.factors[last], d.order(), 1);
  Eigen::VectorXd target = d.y;
  if (d.q() > 0) target -= d.eta * st.gamma;
  return detail::core_conditional_from(st, t, target, st.clamp_hits);
}

inline void update_core(RngStream& s, ModelState& st, const Dataset& d, const Hyperparams& h) {
  const auto c = core_conditional(st, d, h);
  const Eigen::VectorXd g = sample_mvn_precision(s, c.mean_term, c.precision());
  st.tucker.core.vec() = g;
}

// omega_{j,r,l} | beta, lambda, tau ~ GIG(1/2, lambda^2, beta^2 / tau).
inline void update_omega(RngStream& s, ModelState& st, const Hyperparams&, std::size_t j,
                         std::size_t r, std::size_t l) {
  const auto ri = static_cast<Eigen::Index>(r);
  const auto li = static_cast<Eigen::Index>(l);
  const double lam2 = st.lambda[j][ri] * st.lambda[j][ri];
  const double beta = st.tucker.factors[j](li, ri);
  const double b = beta * beta / st.tau;
  const double draw = detail::sample_gig_or(s, 0.5, lam2, b, [] { return 0.0; });
  st.omega[j](li, ri) = detail::keep_representable(draw);
}

// lambda_{j,r} | beta, tau with omega integrated out (Laplace marginal):
// Gamma(a_lambda + p_j, b_lambda + ||beta||_1 / sqrt(tau)).
// The omega column of (j, r) is stale afterwards; see update_lambda_omega.
inline void update_lambda(RngStream& s, ModelState& st, const Hyperparams& h, std::size_t j,
                          std::size_t r) {
  const auto ri = static_cast<Eigen::Index>(r);
  const auto& f = st.tucker.factors[j];
  const double l1 = f.col(ri).lpNorm<1>();
  st.lambda[j][ri] = sample_gamma(s, h.a_lambda + static_cast<double>(f.rows()),
                                  h.b_lambda + l1 / std::sqrt(st.tau));
}

inline void update_lambda_omega(RngStream& s, ModelState& st, const Hyperparams& h, std::size_t j,
                                std::size_t r) {
  update_lambda(s, st, h, j, r);
  for (Eigen::Index l = 0; l < st.omega[j].rows(); ++l) {
    update_omega(s, st, h, j, r, static_cast<std::size_t>(l));
  }
}

// tau | beta, omega ~ GIG(a_tau - N/2, 2 b_tau, sum beta^2 / omega).
inline void update_tau(RngStream& s, ModelState& st, const Hyperparams& h) {
  double count = 0.0;
  for (const auto& f : st.tucker.factors) count += static_cast<double>(f.size());
  const double sum_sq = detail::sum_sq_scaled(st);
  const double order = h.a_tau - 0.5 * count;
  const double draw = detail::sample_gig_or(s, order, 2.0 * h.b_tau, sum_sq,
                                            [&] { return sample_gamma(s, h.a_tau, h.b_tau); });
  st.tau = detail::keep_representable(draw);
}

// phi_r | g_r, z with v_r integrated out:
// Gamma(a_phi + 1, b_phi + |g_r| / sqrt(z)). Leaves v_r stale.
inline void update_phi(RngStream& s, ModelState& st, const Hyperparams& h, std::size_t k) {
  st.phi[k] = sample_gamma(s, h.a_phi + 1.0, h.b_phi + std::abs(st.tucker.core[k]) / std::sqrt(st.z));
}

// v_r | g_r, phi_r, z ~ GIG(1/2, phi_r^2, g_r^2 / z).
inline void update_v(RngStream& s, ModelState& st, const Hyperparams&, std::size_t k) {
  const double g = st.tucker.core[k];
  const double draw =
      detail::sample_gig_or(s, 0.5, st.phi[k] * st.phi[k], g * g / st.z, [] { return 0.0; });
  st.v[k] = detail::keep_representable(draw);
}

// z | G, v ~ GIG(a_z - K/2, 2 b_z, sum g^2 / v), K the number of core cells.
inline void update_z(RngStream& s, ModelState& st, const Hyperparams& h) {
  double sum_sq = 0.0;
  for (std::size_t k = 0; k < st.v.size(); ++k) {
    sum_sq += st.tucker.core[k] * st.tucker.core[k] / st.v[k];
  }
  const double order = h.a_z - 0.5 * static_cast<double>(st.v.size());
  const double draw = detail::sample_gig_or(s, order, 2.0 * h.b_z, sum_sq,
                                            [&] { return sample_gamma(s, h.a_z, h.b_z); });
  st.z = detail::keep_representable(draw);
}

// Every (phi_r, v_r) pair, then z.
inline void update_v_phi_z(RngStream& s, ModelState& st, const Hyperparams& h) {
  for (std::size_t k = 0; k < st.v.size(); ++k) {
    update_phi(s, st, h, k);
    update_v(s, st, h, k);
  }
  update_z(s, st, h);
}

// One MCMC iteration. Order: every beta_{j,r} (j, then r ascending); every
// (lambda_{j,r}, omega_{j,r}) pair; tau; the core G; every (phi_r, v_r); z;
// gamma; sigma2. Returns the log-likelihood at the new state.
inline double gibbs_sweep(ChainStreams& rng, ModelState& st, const Dataset& d,
                          const Hyperparams& h, unsigned threads = 1) {
  check_shapes(st, d);
  const std::size_t order = d.order();
  Eigen::VectorXd eta_gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.n()));
  if (d.q() > 0) eta_gamma = d.eta * st.gamma;
  Eigen::VectorXd tensor_part = tensor_contribution(st, d, threads);

  detail::Contraction except_last;
  for (std::size_t j = 0; j < order; ++j) {
    auto y_except = detail::contract_except(d, st.tucker.factors, j, threads);
    const auto designs = detail::margin_designs(y_except, st.tucker.core, j);
    for (std::size_t r = 0; r < static_cast<std::size_t>(st.tucker.factors[j].cols()); ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      const Eigen::MatrixXd& u = designs[r];
      const Eigen::VectorXd old = st.tucker.factors[j].col(ri);
      const Eigen::VectorXd rest = d.y - eta_gamma - tensor_part + u.transpose() * old;
      const auto c = detail::beta_conditional_from(st, u, rest, j, r, st.clamp_hits);
      const Eigen::VectorXd fresh = sample_mvn_precision(rng.factors, c.mean_term, c.precision());
      tensor_part.noalias() += u.transpose() * (fresh - old);
      st.tucker.factors[j].col(ri) = fresh;
    }
    if (j + 1 == order) except_last = std::move(y_except);
  }

  for (std::size_t j = 0; j < order; ++j) {
    for (std::size_t r = 0; r < static_cast<std::size_t>(st.tucker.factors[j].cols()); ++r) {
      update_lambda_omega(rng.local_scales, st, h, j, r);
    }
  }
  update_tau(rng.global_scale, st, h);

  {
    const Eigen::MatrixXd t =
        detail::core_design(except_last, st.tucker.factors[order - 1], order, threads);
    const auto c = detail::core_conditional_from(st, t, d.y - eta_gamma, st.clamp_hits);
    const Eigen::VectorXd g = sample_mvn_precision(rng.core, c.mean_term, c.precision());
    st.tucker.core.vec() = g;
    tensor_part.noalias() = t.transpose() * g;
  }
  update_v_phi_z(rng.core_scales, st, h);

  if (d.q() > 0) {
    const auto c = gamma_conditional(st, d, h, tensor_part);
    st.gamma = sample_mvn_precision(rng.gamma, c.mean_term, c.precision());
    eta_gamma = d.eta * st.gamma;
  }
  const Eigen::VectorXd pred = tensor_part + eta_gamma;
  update_sigma2_from_ssr(rng.noise, st, d.n(), (d.y - pred).squaredNorm(), h);
  return gaussian_log_likelihood(d.y, pred, st.sigma2);
}

}  // namespace btrt
