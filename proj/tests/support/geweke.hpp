#pragma once

// Geweke's joint-distribution test. The marginal-conditional simulator draws
// parameters from the prior; the successive-conditional simulator alternates a
// Gibbs sweep with a fresh response given the parameters. Both target the
// joint prior of the parameters, so the means of any statistic must agree.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "btrt/diagnostics.hpp"
#include "btrt/model.hpp"

namespace btrt::test {

struct GewekeStat {
  std::string name;
  double forward_mean = 0.0;
  double successive_mean = 0.0;
  double z = 0.0;
};

struct GewekeResult {
  std::vector<GewekeStat> stats;
  std::size_t within = 0;  // |z| <= limit
  double limit = 4.0;
};

struct GewekeConfig {
  Dims dims{3, 3};
  Dims ranks{2, 2};
  std::size_t n = 10;
  std::size_t q = 1;
  std::size_t samples = 100000;
  std::uint64_t seed = 7;
};

namespace geweke_detail {

inline std::vector<std::string> stat_names() {
  std::vector<std::string> names{"log tau", "log z", "log sigma2", "gamma",
                                 "log lambda[0][0]", "log omega[0](0,0)", "log v[0]",
                                 "log phi[0]"};
  for (const char* cell : {"beta1(0,0)", "beta2(1,1)", "g(0,0)", "g(1,0)", "B(0,0)", "B(1,2)",
                           "B(2,2)"}) {
    names.push_back(cell);
    names.push_back(std::string("log|") + cell + "|");
  }
  return names;
}

inline std::vector<double> stats_of(const ModelState& st) {
  std::vector<double> s{std::log(st.tau),
                        std::log(st.z),
                        std::log(st.sigma2),
                        st.gamma[0],
                        std::log(st.lambda[0][0]),
                        std::log(st.omega[0](0, 0)),
                        std::log(st.v[0]),
                        std::log(st.phi[0])};
  const DenseTensor b = tucker_compose(st.tucker);
  const double cells[] = {st.tucker.factors[0](0, 0), st.tucker.factors[1](1, 1),
                          st.tucker.core.at({0, 0}),  st.tucker.core.at({1, 0}),
                          b.at({0, 0}),               b.at({1, 2}),
                          b.at({2, 2})};
  for (double c : cells) {
    s.push_back(c);
    s.push_back(std::log(std::abs(c)));
  }
  return s;
}

inline void draw_response(RngStream& s, const ModelState& st, Dataset& d) {
  const Eigen::VectorXd pred = linear_predictor(st, d);
  const double sd = std::sqrt(st.sigma2);
  for (Eigen::Index i = 0; i < d.y.size(); ++i) d.y[i] = pred[i] + sd * s.normal();
}

}  // namespace geweke_detail

inline GewekeResult geweke_test(const GewekeConfig& cfg) {
  RngStream design(cfg.seed, 1);
  Dataset d;
  d.dims = cfg.dims;
  const auto v = static_cast<Eigen::Index>(dims_product(cfg.dims));
  const auto n = static_cast<Eigen::Index>(cfg.n);
  const auto q = static_cast<Eigen::Index>(cfg.q);
  d.x.resize(v, n);
  d.eta.resize(n, q);
  d.y = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < d.x.size(); ++k) d.x.data()[k] = design.normal();
  for (Eigen::Index k = 0; k < d.eta.size(); ++k) d.eta.data()[k] = design.normal();
  const Hyperparams h = Hyperparams::defaults(cfg.dims.size(), cfg.ranks, cfg.q);

  const auto names = geweke_detail::stat_names();
  const std::size_t k = names.size();
  std::vector<std::vector<double>> fwd(k, std::vector<double>(cfg.samples));
  std::vector<std::vector<double>> suc(k, std::vector<double>(cfg.samples));

  RngStream prior(cfg.seed, 2);
  for (std::size_t m = 0; m < cfg.samples; ++m) {
    const auto s = geweke_detail::stats_of(draw_from_prior(prior, cfg.dims, cfg.ranks, h, cfg.q));
    for (std::size_t i = 0; i < k; ++i) fwd[i][m] = s[i];
  }

  RngStream start(cfg.seed, 3);
  RngStream noise(cfg.seed, 4);
  ChainStreams chain(cfg.seed, 1);
  ModelState st = draw_from_prior(start, cfg.dims, cfg.ranks, h, cfg.q);
  geweke_detail::draw_response(noise, st, d);
  for (std::size_t m = 0; m < cfg.samples; ++m) {
    gibbs_sweep(chain, st, d, h);
    geweke_detail::draw_response(noise, st, d);
    const auto s = geweke_detail::stats_of(st);
    for (std::size_t i = 0; i < k; ++i) suc[i][m] = s[i];
  }

  GewekeResult out;
  const double count = static_cast<double>(cfg.samples);
  for (std::size_t i = 0; i < k; ++i) {
    GewekeStat g;
    g.name = names[i];
    g.forward_mean = sample_mean(fwd[i]);
    g.successive_mean = sample_mean(suc[i]);
    const double var_f = sample_var(fwd[i]);
    const double lrv_s = btrt::detail::batch_means_variance(suc[i].data(), suc[i].size());
    g.z = (g.forward_mean - g.successive_mean) / std::sqrt(var_f / count + lrv_s / count);
    if (std::abs(g.z) <= out.limit) ++out.within;
    out.stats.push_back(g);
  }
  return out;
}

}  // namespace btrt::test
