#pragma once

// Command-line front end. Every subcommand writes into one run directory and
// leaves a manifest.cfg there; passing that file back via --config (with a
// fresh --out) reproduces the run.

#include <Eigen/Dense>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "btrt/diagnostics.hpp"
#include "btrt/error.hpp"
#include "btrt/glm.hpp"
#include "btrt/io.hpp"
#include "btrt/posterior.hpp"
#include "btrt/selection.hpp"
#include "btrt/simgen.hpp"
#include "json.hpp"

namespace btrt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

inline constexpr const char* kManifestName = "manifest.cfg";

struct CliArgs {
  std::string config;
  std::string out;
  std::string data;
  std::string split = "train";
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::optional<std::string> ranks;
  std::optional<std::size_t> iterations, burn_in, max_rank;
  std::optional<double> b, fdr_q;
  std::string draws, truth, trace, pred, actual;
  bool quiet = false;
};

namespace cli {

inline RunConfig load_config(const CliArgs& a) {
  if (a.config.empty()) return {};
  return read_config(a.config);
}

inline fs::path absolute_path(const fs::path& p) { return fs::absolute(p).lexically_normal(); }

inline fs::path out_dir(const CliArgs& a) {
  if (a.out.empty()) throw UsageError("--out is required");
  const fs::path dir = resolve_run_dir(a.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError(IoErrorCode::kWriteFailed, "cannot create run directory " + dir.string());
  return dir;
}

inline void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg) {
  write_text_file(dir / kManifestName, "; btrt " + command + "\n" + config_text(cfg));
}

inline void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

// --data DIR fills [data] with the standard file names found there.
inline void apply_data_dir(const CliArgs& a, RunConfig& cfg) {
  if (a.data.empty()) return;
  const fs::path dir = absolute_path(a.data);
  const std::string prefix = a.split == "test" ? "test_" : "";
  if (a.split != "test" && a.split != "train") throw UsageError("--split must be train or test");
  const auto files = dataset_files_in(dir, prefix);
  cfg.data.tensor = files.tensor.string();
  cfg.data.response = files.response.string();
  if (files.covariates) cfg.data.covariates = files.covariates->string();
  else cfg.data.covariates.reset();
  if (fs::exists(dir / DataLayout::kTruth)) cfg.data.truth = (dir / DataLayout::kTruth).string();
}

inline void absolutize(RunConfig& cfg) {
  for (auto* p : {&cfg.data.tensor, &cfg.data.response, &cfg.data.covariates, &cfg.data.truth,
                  &cfg.data.draws, &cfg.data.predictions}) {
    if (*p) *p = absolute_path(**p).string();
  }
}

inline Dataset require_dataset(const RunConfig& cfg) {
  if (!cfg.data.tensor || !cfg.data.response) {
    throw UsageError("data not given: pass --data DIR or set [data] tensor and response");
  }
  DatasetFiles f{*cfg.data.tensor, *cfg.data.response, {}};
  if (cfg.data.covariates) f.covariates = fs::path(*cfg.data.covariates);
  return load_dataset(f);
}

inline std::optional<DenseTensor> load_truth(const RunConfig& cfg) {
  if (!cfg.data.truth) return std::nullopt;
  return read_tensor(*cfg.data.truth);
}

inline FitOptions fit_options(const RunConfig& cfg, const Dataset& d, unsigned threads) {
  FitOptions opt;
  if (!cfg.model.ranks) throw UsageError("ranks not given: pass --ranks or set [model] ranks");
  opt.ranks = *cfg.model.ranks;
  if (opt.ranks.size() != d.order()) {
    throw UsageError("ranks " + join_dims(opt.ranks) + " do not match tensor order " + std::to_string(d.order()));
  }
  for (auto r : opt.ranks) {
    if (r == 0) throw UsageError("ranks must be >= 1");
  }
  if (cfg.model.iterations) opt.iterations = *cfg.model.iterations;
  if (cfg.model.burn_in) opt.burn_in = *cfg.model.burn_in;
  if (cfg.model.thin) opt.thin = *cfg.model.thin;
  if (cfg.model.seed) opt.seed = *cfg.model.seed;
  if (cfg.model.center_scale_response) opt.center_scale = *cfg.model.center_scale_response;
  if (cfg.model.auto_raise_rank1) opt.auto_raise_rank1 = *cfg.model.auto_raise_rank1;
  if (cfg.model.retain_factors) opt.retain_factors = *cfg.model.retain_factors;
  Dims ranks = opt.ranks;
  if (opt.auto_raise_rank1) {
    for (auto& r : ranks) r = std::max<std::size_t>(r, 2);
  }
  opt.hyper = resolve_hyper(cfg.hyper, d.order(), ranks, d.q());
  opt.threads = threads;
  return opt;
}

// Records the resolved model settings so the manifest is self-contained.
inline void record_model(RunConfig& cfg, const FitOptions& opt) {
  cfg.model.ranks = opt.ranks;
  cfg.model.iterations = opt.iterations;
  cfg.model.burn_in = opt.burn_in;
  cfg.model.thin = opt.thin;
  cfg.model.seed = opt.seed;
  cfg.model.center_scale_response = opt.center_scale;
  cfg.model.auto_raise_rank1 = opt.auto_raise_rank1;
  cfg.model.retain_factors = opt.retain_factors;
  const auto& h = *opt.hyper;
  cfg.hyper.a_sigma = h.a_sigma;
  cfg.hyper.b_sigma = h.b_sigma;
  cfg.hyper.a_lambda = h.a_lambda;
  cfg.hyper.b_lambda = h.b_lambda;
  cfg.hyper.a_tau = h.a_tau;
  cfg.hyper.b_tau = h.b_tau;
  cfg.hyper.a_z = h.a_z;
  cfg.hyper.b_z = h.b_z;
  cfg.hyper.a_phi = h.a_phi;
  cfg.hyper.b_phi = h.b_phi;
  cfg.hyper.mu_gamma = std::vector<double>(h.mu_gamma.data(), h.mu_gamma.data() + h.mu_gamma.size());
  cfg.hyper.sigma_gamma =
      std::vector<double>(h.sigma_gamma.data(), h.sigma_gamma.data() + h.sigma_gamma.size());
}

inline void apply_model_flags(const CliArgs& a, RunConfig& cfg) {
  if (a.ranks) cfg.model.ranks = parse_dims(*a.ranks, "--ranks");
  if (a.iterations) cfg.model.iterations = *a.iterations;
  if (a.burn_in) cfg.model.burn_in = *a.burn_in;
  if (a.seed) cfg.model.seed = *a.seed;
  if (a.max_rank) cfg.model.max_rank = *a.max_rank;
}

inline nlohmann::ordered_json selection_json(const TwoMeansResult& s) {
  nlohmann::ordered_json j;
  j["b"] = s.b;
  j["b_defaulted"] = s.b_defaulted;
  j["nz_hat"] = s.nz_hat;
  j["nonzero"] = static_cast<std::size_t>(s.estimate.size()) - s.nz_hat;
  j["nz_per_draw"] = s.nz_per_draw;
  return j;
}

// ---------------------------------------------------------------- commands

inline int cmd_simulate(const CliArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a);
  if (a.seed) cfg.simulate.seed = *a.seed;
  const SimConfig sc = resolve_sim(cfg.simulate);
  const fs::path dir = out_dir(a);
  const Simulation sim = simulate(sc);

  save_dataset(dir, sim.train.data);
  write_tensor(dir / DataLayout::kTruth, sim.b_true);
  write_vector_text(dir / "mean.txt", sim.train.mean);
  if (sc.n_test > 0) {
    save_dataset(dir, sim.test.data, "test_");
    write_vector_text(dir / "test_mean.txt", sim.test.mean);
  }
  nlohmann::ordered_json truth;
  truth["dims"] = sc.dims;
  truth["gamma"] = std::vector<double>(sc.gamma.data(), sc.gamma.data() + sc.gamma.size());
  truth["noise_variance"] = sc.noise_variance;
  truth["nonzero_voxels"] = (sim.b_true.vec().array() != 0.0).count();
  truth["zero_estimate_rmse"] = rmse(Eigen::VectorXd::Zero(sim.b_true.vec().size()),
                                     Eigen::VectorXd(sim.b_true.vec()));
  write_json(dir / "truth.json", truth);

  // Resolved settings, so the manifest is complete even when the config was empty.
  RunConfig m;
  m.simulate.dims = sc.dims;
  m.simulate.regions = sc.regions;
  m.simulate.radius_min = sc.radius_min;
  m.simulate.radius_max = sc.radius_max;
  m.simulate.peak = sc.peak;
  m.simulate.edge_fraction = sc.edge_fraction;
  m.simulate.separate_projections = sc.separate_projections;
  m.simulate.n = sc.n;
  m.simulate.n_test = sc.n_test;
  m.simulate.gamma = std::vector<double>(sc.gamma.data(), sc.gamma.data() + sc.gamma.size());
  m.simulate.noise_variance = sc.noise_variance;
  m.simulate.seed = sc.seed;
  write_manifest(dir, "simulate", m);
  out << "wrote simulated data to " << dir.string() << '\n';
  return kExitOk;
}

inline int cmd_fit(const CliArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(a);
  apply_data_dir(a, cfg);
  apply_model_flags(a, cfg);
  if (a.b) cfg.selection.s2means_b = *a.b;
  absolutize(cfg);
  const Dataset data = require_dataset(cfg);
  const auto truth = load_truth(cfg);
  FitOptions opt = fit_options(cfg, data, a.threads);
  if (!a.quiet) {
    opt.progress = &err;
    opt.progress_every = 1000;
  }
  const fs::path dir = out_dir(a);
  const std::string rank1 = rank1_warning(opt.ranks);
  if (std::find(opt.ranks.begin(), opt.ranks.end(), std::size_t{1}) != opt.ranks.end()) {
    err << "warning: " << rank1 << '\n';
  }

  FitResult res = fit(data, opt);
  for (const auto& w : res.warnings) {
    if (w.rfind(rank1, 0) != 0) err << "warning: " << w << '\n';
  }
  write_draws(dir / "draws.btd", res.draws);
  write_vector_text(dir / "loglik.txt",
                    Eigen::Map<const Eigen::VectorXd>(res.loglik_trace.data(),
                                                      static_cast<Eigen::Index>(res.loglik_trace.size())));

  FitReport report = diagnose(res.draws, opt.burn_in, res.loglik_trace, a.threads);
  for (const auto& w : res.warnings) report.warnings.push_back(w);
  report.dic = dic(res.draws, data);
  const auto sel = sequential_2means(res.draws.b, cfg.selection.s2means_b, a.threads);
  write_tensor(dir / "B_hat.btt", DenseTensor(data.dims, std::vector<double>(sel.estimate.data(), sel.estimate.data() + sel.estimate.size())));
  if (truth) report.rmse_b = rmse(sel.estimate, Eigen::VectorXd(truth->vec()));
  const auto pred = posterior_predict(res.draws, data.x, data.eta);
  const auto score = rmspe_pearson(pred.median, data.y);
  report.rmspe = score.rmspe;
  report.pearson = score.pearson;

  auto j = to_json(report);
  j["selection"] = selection_json(sel);
  write_json(dir / "report.json", j);

  record_model(cfg, opt);
  write_manifest(dir, "fit", cfg);
  out << "fit ranks " << join_dims(res.draws.manifest.ranks) << ": " << res.draws.size()
      << " draws, DIC " << format_double(report.dic->dic);
  if (report.rmse_b) out << ", RMSE(B) " << format_double(*report.rmse_b);
  out << '\n';
  return kExitOk;
}

inline int cmd_rank_search(const CliArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(a);
  apply_data_dir(a, cfg);
  apply_model_flags(a, cfg);
  absolutize(cfg);
  const Dataset data = require_dataset(cfg);
  const std::size_t max_rank = cfg.model.max_rank.value_or(4);
  const fs::path dir = out_dir(a);

  const auto trace = rank_search(
      [&](const Dims& ranks) {
        RunConfig c = cfg;
        c.model.ranks = ranks;
        c.model.auto_raise_rank1 = false;
        FitOptions opt = fit_options(c, data, a.threads);
        auto res = fit(data, opt);
        const double d = dic(res.draws, data).dic;
        if (!a.quiet) err << "ranks " << join_dims(ranks) << ": DIC " << format_double(d) << '\n';
        return d;
      },
      data.order(), max_rank);

  nlohmann::ordered_json j;
  j["visited"] = nlohmann::ordered_json::array();
  for (const auto& v : trace.visited) {
    j["visited"].push_back({{"ranks", v.ranks},
                            {"dic", std::isfinite(v.dic) ? nlohmann::ordered_json(v.dic) : nlohmann::ordered_json("inf")},
                            {"failed", v.failed}});
  }
  j["selected"] = trace.selected;
  j["selected_dic"] = trace.selected_dic;
  write_json(dir / "rank_trace.json", j);

  cfg.model.max_rank = max_rank;
  cfg.model.ranks.reset();
  write_manifest(dir, "rank-search", cfg);
  out << "selected ranks " << join_dims(trace.selected) << " after " << trace.visited.size() << " fits\n";
  return kExitOk;
}

inline int cmd_select(const CliArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a);
  if (!a.draws.empty()) cfg.data.draws = a.draws;
  if (!a.truth.empty()) cfg.data.truth = a.truth;
  if (a.b) cfg.selection.s2means_b = *a.b;
  absolutize(cfg);
  if (!cfg.data.draws) throw UsageError("--draws is required");
  const PosteriorDraws draws = read_draws(*cfg.data.draws);
  const auto sel = sequential_2means(draws.b, cfg.selection.s2means_b, a.threads);
  const fs::path dir = out_dir(a);
  write_tensor(dir / "B_hat.btt", DenseTensor(draws.manifest.dims,
                                              std::vector<double>(sel.estimate.data(), sel.estimate.data() + sel.estimate.size())));
  auto j = selection_json(sel);
  if (const auto truth = load_truth(cfg)) j["rmse_B"] = rmse(sel.estimate, Eigen::VectorXd(truth->vec()));
  write_json(dir / "selection.json", j);
  write_manifest(dir, "select", cfg);
  out << "2-means kept " << (sel.estimate.size() - static_cast<Eigen::Index>(sel.nz_hat)) << " of "
      << sel.estimate.size() << " coefficients (b = " << format_double(sel.b) << ")\n";
  return kExitOk;
}

inline int cmd_predict(const CliArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a);
  apply_data_dir(a, cfg);
  if (!a.draws.empty()) cfg.data.draws = a.draws;
  absolutize(cfg);
  if (!cfg.data.draws) throw UsageError("--draws is required");
  if (!cfg.data.tensor) throw UsageError("covariate tensor not given: pass --data DIR or set [data] tensor");
  const PosteriorDraws draws = read_draws(*cfg.data.draws);
  const DenseTensor stacked = read_tensor(*cfg.data.tensor);
  const auto m = static_cast<Eigen::Index>(stacked.dims().back());
  Eigen::MatrixXd eta(m, 0);
  if (cfg.data.covariates) eta = read_matrix_csv(*cfg.data.covariates);
  if (eta.rows() != m) {
    throw IoError(IoErrorCode::kDimensionMismatch, "covariates have " + std::to_string(eta.rows()) +
                                                       " rows but the tensor has " + std::to_string(m) + " subjects");
  }
  const double level = cfg.selection.level.value_or(0.95);
  const auto pred = posterior_predict(draws, stacked, eta, level);
  const fs::path dir = out_dir(a);
  write_vector_text(dir / "predictions.txt", pred.median);
  Eigen::MatrixXd table(pred.median.size(), 3);
  table << pred.median, pred.lower, pred.upper;
  write_matrix_csv(dir / "intervals.csv", table, {"median", "lower", "upper"});
  if (cfg.data.response) {
    const Eigen::VectorXd y = read_vector_text(*cfg.data.response);
    const auto s = rmspe_pearson(pred.median, y);
    nlohmann::ordered_json j;
    j["rmspe"] = s.rmspe;
    j["pearson"] = s.pearson ? nlohmann::ordered_json(*s.pearson) : nlohmann::ordered_json(nullptr);
    write_json(dir / "metrics.json", j);
    out << "RMSPE " << format_double(s.rmspe);
    if (s.pearson) out << ", Pearson " << format_double(*s.pearson);
    out << '\n';
  }
  cfg.selection.level = level;
  write_manifest(dir, "predict", cfg);
  out << "wrote " << pred.median.size() << " predictions\n";
  return kExitOk;
}

inline int cmd_glm(const CliArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a);
  apply_data_dir(a, cfg);
  if (a.fdr_q) cfg.selection.fdr_q = *a.fdr_q;
  absolutize(cfg);
  const Dataset data = require_dataset(cfg);
  const double q = cfg.selection.fdr_q.value_or(0.05);
  const auto map = glm_coefficient_map(data, q, a.threads);
  const fs::path dir = out_dir(a);
  write_tensor(dir / "glm_map.btt", map.estimate);

  std::string csv;
  for (std::size_t k = 0; k < data.order(); ++k) csv += "i" + std::to_string(k + 1) + ",";
  csv += "estimate,std_error,p_value,rejected,zero_variance\n";
  for (const auto& v : map.voxels) {
    for (auto i : v.index) csv += std::to_string(i) + ",";
    csv += format_double(v.estimate) + "," + format_double(v.std_error) + "," + format_double(v.p_value) + "," +
           (v.rejected ? "1" : "0") + "," + (v.zero_variance ? "1" : "0") + "\n";
  }
  write_text_file(dir / "glm_voxels.csv", csv);

  nlohmann::ordered_json j;
  j["fdr_q"] = q;
  j["rejected"] = map.rejected;
  if (const auto truth = load_truth(cfg)) j["rmse_B"] = rmse(map.estimate, *truth);
  write_json(dir / "glm_report.json", j);
  cfg.selection.fdr_q = q;
  write_manifest(dir, "glm", cfg);
  out << "GLM rejected " << map.rejected << " of " << map.voxels.size() << " voxels at q = " << format_double(q) << '\n';
  return kExitOk;
}

inline int cmd_diagnose(const CliArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a);
  if (!a.draws.empty()) cfg.data.draws = a.draws;
  if (!a.truth.empty()) cfg.data.truth = a.truth;
  absolutize(cfg);
  if (!cfg.data.draws) throw UsageError("--draws is required");
  const PosteriorDraws draws = read_draws(*cfg.data.draws);
  std::vector<double> trace = draws.loglik;
  std::size_t burn = 0;
  if (!a.trace.empty()) {
    const Eigen::VectorXd t = read_vector_text(a.trace);
    trace.assign(t.data(), t.data() + t.size());
    burn = draws.manifest.burn_in;
  }
  FitReport report = diagnose(draws, burn, trace, a.threads);
  if (const auto truth = load_truth(cfg)) {
    const auto sel = sequential_2means(draws.b, cfg.selection.s2means_b, a.threads);
    report.rmse_b = rmse(sel.estimate, Eigen::VectorXd(truth->vec()));
  }
  const fs::path dir = out_dir(a);
  write_json(dir / "report.json", to_json(report));
  write_manifest(dir, "diagnose", cfg);
  out << "median ESS(B) " << format_double(report.ess_b.median) << " of " << draws.size()
      << (report.trace.trend_flag ? "; log-likelihood trend flagged" : "; no trend flag") << '\n';
  return kExitOk;
}

inline int cmd_metrics(const CliArgs& a, std::ostream& out) {
  RunConfig cfg = load_config(a);
  if (!a.pred.empty()) cfg.data.predictions = a.pred;
  if (!a.actual.empty()) cfg.data.response = a.actual;
  absolutize(cfg);
  if (!cfg.data.predictions || !cfg.data.response) throw UsageError("--pred and --actual are required");
  const Eigen::VectorXd pred = read_vector_text(*cfg.data.predictions);
  const Eigen::VectorXd actual = read_vector_text(*cfg.data.response);
  const auto s = rmspe_pearson(pred, actual);
  nlohmann::ordered_json j;
  j["rmspe"] = s.rmspe;
  j["pearson"] = s.pearson ? nlohmann::ordered_json(*s.pearson) : nlohmann::ordered_json(nullptr);
  if (!a.out.empty()) {
    const fs::path dir = out_dir(a);
    write_json(dir / "metrics.json", j);
    write_manifest(dir, "metrics", cfg);
  }
  out << j.dump() << '\n';
  return kExitOk;
}

}  // namespace cli

// Runs one subcommand. Returns 0 on success, 1 for usage or I/O errors and
// 2 for numerical failures.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Bayesian scalar-on-tensor regression with the Tucker decomposition", "btrt"};
  app.require_subcommand(1);
  CliArgs a;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", a.config, "run configuration (INI)")->check(CLI::ExistingFile);
    s->add_option("--out", a.out, "run directory for outputs");
    s->add_option("--seed", a.seed, "random seed");
    s->add_option("--threads", a.threads, "worker threads (affects wall time only)")
        ->check(CLI::Range(1u, 1024u));
    s->add_flag("--quiet", a.quiet, "suppress progress output");
  };
  auto data_opts = [&](CLI::App* s) {
    s->add_option("--data", a.data, "data directory written by simulate")->check(CLI::ExistingDirectory);
    s->add_option("--split", a.split, "train or test files inside --data")->check(CLI::IsMember({"train", "test"}));
  };

  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  common(sim);
  auto* fit_cmd = app.add_subcommand("fit", "run the Gibbs sampler");
  common(fit_cmd);
  data_opts(fit_cmd);
  fit_cmd->add_option("--ranks", a.ranks, "Tucker ranks, e.g. 4,4");
  fit_cmd->add_option("--iterations", a.iterations, "total iterations");
  fit_cmd->add_option("--burn-in", a.burn_in, "discarded iterations");
  fit_cmd->add_option("--b", a.b, "2-means gap threshold");
  auto* rs = app.add_subcommand("rank-search", "greedy DIC search over Tucker ranks");
  common(rs);
  data_opts(rs);
  rs->add_option("--max-rank", a.max_rank, "largest rank per margin");
  rs->add_option("--iterations", a.iterations, "total iterations per fit");
  rs->add_option("--burn-in", a.burn_in, "discarded iterations per fit");
  auto* sel = app.add_subcommand("select", "sequential 2-means point estimate");
  common(sel);
  sel->add_option("--draws", a.draws, "draws file")->check(CLI::ExistingFile);
  sel->add_option("--truth", a.truth, "true coefficient tensor for scoring")->check(CLI::ExistingFile);
  sel->add_option("--b", a.b, "2-means gap threshold");
  auto* pr = app.add_subcommand("predict", "posterior-predictive medians and intervals");
  common(pr);
  data_opts(pr);
  pr->add_option("--draws", a.draws, "draws file")->check(CLI::ExistingFile);
  auto* glm = app.add_subcommand("glm", "voxelwise GLM with Benjamini-Hochberg");
  common(glm);
  data_opts(glm);
  glm->add_option("--fdr-q", a.fdr_q, "target false discovery rate");
  auto* dg = app.add_subcommand("diagnose", "ESS and trace diagnostics for a draws file");
  common(dg);
  dg->add_option("--draws", a.draws, "draws file")->check(CLI::ExistingFile);
  dg->add_option("--trace", a.trace, "full log-likelihood trace (loglik.txt)")->check(CLI::ExistingFile);
  dg->add_option("--truth", a.truth, "true coefficient tensor for scoring")->check(CLI::ExistingFile);
  auto* mt = app.add_subcommand("metrics", "RMSPE and Pearson correlation");
  common(mt);
  mt->add_option("--pred", a.pred, "predictions, one per line")->check(CLI::ExistingFile);
  mt->add_option("--actual", a.actual, "observed values, one per line")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* shown = &app;
    for (auto* s : app.get_subcommands()) shown = s;
    err << shown->help();
    return kExitUsage;
  }

  try {
    if (sim->parsed()) return cli::cmd_simulate(a, out);
    if (fit_cmd->parsed()) return cli::cmd_fit(a, out, err);
    if (rs->parsed()) return cli::cmd_rank_search(a, out, err);
    if (sel->parsed()) return cli::cmd_select(a, out);
    if (pr->parsed()) return cli::cmd_predict(a, out);
    if (glm->parsed()) return cli::cmd_glm(a, out);
    if (dg->parsed()) return cli::cmd_diagnose(a, out);
    if (mt->parsed()) return cli::cmd_metrics(a, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace btrt
