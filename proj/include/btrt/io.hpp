#pragma once

// File formats and run configuration.
//
// TensorFile: "BTRT", u16 version, u16 order, order x u64 dims, then the
// payload as little-endian doubles in mode-1-major order.
// DrawsFile: a text header ending in "end\n", then one binary record per
// retained draw: loglik, sigma2, tau, z, gamma[q], B[V], factors[F].

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <unistd.h>
#include <vector>

#include "btrt/error.hpp"
#include "btrt/model.hpp"
#include "btrt/posterior.hpp"
#include "btrt/simgen.hpp"
#include "btrt/tensor.hpp"

namespace btrt {

namespace fs = std::filesystem;

inline constexpr std::array<char, 4> kTensorMagic{'B', 'T', 'R', 'T'};
inline constexpr std::uint16_t kTensorVersion = 1;
inline constexpr int kDrawsVersion = 1;
inline constexpr const char* kDrawsMagic = "BTRT-DRAWS";
inline constexpr const char* kRunRootEnv = "BTRT_RUN_ROOT";

// ---------------------------------------------------------------- text/number

// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(std::string_view text, const std::string& where) {
  const std::string t = trim(text);
  double v = 0.0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw IoError(IoErrorCode::kParse, where + ": cannot parse number '" + t + "'");
  }
  return v;
}

inline std::uint64_t parse_uint(std::string_view text, const std::string& where) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw IoError(IoErrorCode::kParse, where + ": expected a non-negative integer, got '" + t + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view text, const std::string& where) {
  std::string t = trim(text);
  for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw IoError(IoErrorCode::kParse, where + ": expected true/false, got '" + t + "'");
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline Dims parse_dims(std::string_view text, const std::string& where) {
  Dims out;
  for (const auto& part : split(text, ',')) out.push_back(parse_uint(part, where));
  if (out.empty()) throw IoError(IoErrorCode::kParse, where + ": empty list");
  return out;
}

inline std::vector<double> parse_doubles(std::string_view text, const std::string& where) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  for (const auto& part : split(text, ',')) out.push_back(parse_double(part, where));
  return out;
}

inline std::string join_dims(const Dims& d) {
  std::string out;
  for (std::size_t k = 0; k < d.size(); ++k) out += (k ? "," : "") + std::to_string(d[k]);
  return out;
}

inline std::string join_doubles(const double* v, std::size_t n) {
  std::string out;
  for (std::size_t k = 0; k < n; ++k) out += (k ? "," : "") + format_double(v[k]);
  return out;
}

// -------------------------------------------------------------- atomic writes

// Writes via a sibling temporary file and renames it over `path`.
template <typename Fn>
void write_atomic(const fs::path& path, Fn&& body, bool binary = true) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) throw IoError(IoErrorCode::kWriteFailed, "cannot open " + tmp.string() + " for writing");
    body(out);
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError(IoErrorCode::kWriteFailed, "write to " + path.string() + " failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError(IoErrorCode::kWriteFailed, "cannot move output into place at " + path.string());
  }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  write_atomic(path, [&](std::ostream& o) { o << text; });
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ----------------------------------------------------------- little endian

namespace detail {

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

template <typename T>
void put_le(std::ostream& o, T v) {
  const T le = byteswap_if_big(v);
  o.write(reinterpret_cast<const char*>(&le), sizeof(T));
}

inline void put_doubles_le(std::ostream& o, const double* v, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    o.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < n; ++i) put_le(o, v[i]);
  }
}

template <typename T>
bool get_le(std::istream& in, T& v) {
  T raw;
  if (!in.read(reinterpret_cast<char*>(&raw), sizeof(T))) return false;
  v = byteswap_if_big(raw);
  return true;
}

inline bool get_doubles_le(std::istream& in, double* v, std::size_t n) {
  if (!in.read(reinterpret_cast<char*>(v), static_cast<std::streamsize>(n * sizeof(double)))) {
    return false;
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) v[i] = byteswap_if_big(v[i]);
  }
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------- TensorFile

inline void write_tensor(std::ostream& o, const DenseTensor& t) {
  o.write(kTensorMagic.data(), kTensorMagic.size());
  detail::put_le<std::uint16_t>(o, kTensorVersion);
  detail::put_le<std::uint16_t>(o, static_cast<std::uint16_t>(t.order()));
  for (auto d : t.dims()) detail::put_le<std::uint64_t>(o, d);
  detail::put_doubles_le(o, t.data(), t.size());
}

inline void write_tensor(const fs::path& path, const DenseTensor& t) {
  if (t.order() > 0xFFFF) throw UsageError("tensor order too large for the file format");
  write_atomic(path, [&](std::ostream& o) { write_tensor(o, t); });
}

inline DenseTensor read_tensor(std::istream& in, const std::string& name) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kTensorMagic) {
    throw IoError(IoErrorCode::kBadMagic, name + ": not a tensor file (bad magic)");
  }
  std::uint16_t version = 0, order = 0;
  if (!detail::get_le(in, version) || !detail::get_le(in, order)) {
    throw IoError(IoErrorCode::kTruncatedPayload, name + ": truncated header");
  }
  if (version != kTensorVersion) {
    throw IoError(IoErrorCode::kVersionMismatch, name + ": tensor format version " +
                                                     std::to_string(version) + ", expected " +
                                                     std::to_string(kTensorVersion));
  }
  if (order == 0) throw IoError(IoErrorCode::kParse, name + ": tensor order 0");
  Dims dims(order);
  for (auto& d : dims) {
    std::uint64_t v = 0;
    if (!detail::get_le(in, v)) throw IoError(IoErrorCode::kTruncatedPayload, name + ": truncated header");
    if (v == 0) throw IoError(IoErrorCode::kParse, name + ": zero-length dimension");
    d = v;
  }
  std::vector<double> values(dims_product(dims));
  if (!detail::get_doubles_le(in, values.data(), values.size())) {
    throw IoError(IoErrorCode::kTruncatedPayload,
                  name + ": truncated payload (expected " + std::to_string(values.size()) +
                      " values for dims " + dims_to_string(dims) + ")");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError(IoErrorCode::kParse, name + ": trailing bytes after payload");
  }
  return DenseTensor(std::move(dims), std::move(values));
}

inline DenseTensor read_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::kOpenFailed, "cannot open tensor file " + path.string());
  return read_tensor(in, path.string());
}

// ---------------------------------------------------- one-value-per-line text

inline Eigen::VectorXd read_vector_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path.string());
  std::vector<double> v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    v.push_back(parse_double(t, path.string() + ":" + std::to_string(lineno)));
  }
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::string vector_text(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out += format_double(v[i]) + "\n";
  return out;
}

inline void write_vector_text(const fs::path& path, const Eigen::VectorXd& v) {
  write_text_file(path, vector_text(v));
}

// ----------------------------------------------------------------- CSV matrix

// Comma-separated rows; a first row that does not parse as numbers is taken
// as a header and skipped.
inline Eigen::MatrixXd read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (first) {
      first = false;
      try {
        rows.push_back(parse_doubles(t, where));
      } catch (const IoError&) {
        continue;  // header
      }
      continue;
    }
    rows.push_back(parse_doubles(t, where));
    if (rows.back().size() != rows.front().size()) {
      throw IoError(IoErrorCode::kParse, where + ": expected " + std::to_string(rows.front().size()) +
                                             " columns, found " + std::to_string(rows.back().size()));
    }
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto q = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd m(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < q; ++c) m(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
  }
  return m;
}

inline std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& header = {}) {
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
  if (!header.empty()) out += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out += (c ? "," : "") + format_double(m(i, c));
    out += "\n";
  }
  return out;
}

inline void write_matrix_csv(const fs::path& path, const Eigen::MatrixXd& m,
                             const std::vector<std::string>& header = {}) {
  write_text_file(path, matrix_csv(m, header));
}

// ------------------------------------------------------------------ RunConfig

// Sectioned key=value settings. Every field is optional here; each
// subcommand checks for the keys it needs.
struct RunConfig {
  struct Data {
    std::optional<std::string> tensor, response, covariates, truth, draws, predictions;
  } data;
  struct Model {
    std::optional<Dims> ranks;
    std::optional<std::size_t> iterations, burn_in, thin, max_rank;
    std::optional<std::uint64_t> seed;
    std::optional<bool> center_scale_response, auto_raise_rank1, retain_factors;
  } model;
  struct Hyper {
    std::optional<double> a_sigma, b_sigma, a_lambda, b_lambda, a_tau, b_tau, a_z, b_z, a_phi, b_phi;
    std::optional<std::vector<double>> mu_gamma, sigma_gamma;
  } hyper;
  struct Selection {
    std::optional<double> s2means_b, fdr_q, level;
  } selection;
  struct Simulate {
    std::optional<Dims> dims;
    std::optional<std::size_t> regions, n, n_test;
    std::optional<double> radius_min, radius_max, peak, edge_fraction, noise_variance;
    std::optional<std::vector<double>> gamma;
    std::optional<std::uint64_t> seed;
    std::optional<bool> separate_projections;
  } simulate;
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema{
      {"data", {"tensor", "response", "covariates", "truth", "draws", "predictions"}},
      {"model",
       {"ranks", "iterations", "burn_in", "thin", "max_rank", "seed", "center_scale_response",
        "auto_raise_rank1", "retain_factors"}},
      {"hyper",
       {"a_sigma", "b_sigma", "a_lambda", "b_lambda", "a_tau", "b_tau", "a_z", "b_z", "a_phi",
        "b_phi", "mu_gamma", "sigma_gamma"}},
      {"selection", {"s2means_b", "fdr_q", "level"}},
      {"simulate",
       {"dims", "regions", "n", "n_test", "radius_min", "radius_max", "peak", "edge_fraction",
        "noise_variance", "gamma", "seed", "separate_projections"}},
  };
  return schema;
}

}  // namespace detail

// Relative data paths are resolved against `base` (the config's directory).
inline RunConfig parse_config(const std::string& text, const std::string& name = "config",
                              const fs::path& base = {}) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw IoError(IoErrorCode::kParse, name + ": " + e.message() + " (line " +
                                           std::to_string(e.line()) + ")");
  }
  const auto& schema = detail::config_schema();
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    auto sit = schema.find(section);
    if (sit == schema.end() || body.empty()) {
      throw UsageError(name + ": unknown section [" + section + "]");
    }
    for (const auto& [key, node] : body) {
      if (!sit->second.count(key)) {
        throw UsageError(name + ": unknown key '" + key + "' in [" + section + "]");
      }
      const std::string v = node.get_value<std::string>();
      const std::string where = name + " [" + section + "] " + key;
      auto path = [&] {
        fs::path p(trim(v));
        if (p.is_relative() && !base.empty()) p = base / p;
        return p.lexically_normal().string();
      };
      if (section == "data") {
        auto& d = cfg.data;
        if (key == "tensor") d.tensor = path();
        else if (key == "response") d.response = path();
        else if (key == "covariates") d.covariates = path();
        else if (key == "truth") d.truth = path();
        else if (key == "draws") d.draws = path();
        else if (key == "predictions") d.predictions = path();
      } else if (section == "model") {
        auto& m = cfg.model;
        if (key == "ranks") m.ranks = parse_dims(v, where);
        else if (key == "iterations") m.iterations = parse_uint(v, where);
        else if (key == "burn_in") m.burn_in = parse_uint(v, where);
        else if (key == "thin") m.thin = parse_uint(v, where);
        else if (key == "max_rank") m.max_rank = parse_uint(v, where);
        else if (key == "seed") m.seed = parse_uint(v, where);
        else if (key == "center_scale_response") m.center_scale_response = parse_bool(v, where);
        else if (key == "auto_raise_rank1") m.auto_raise_rank1 = parse_bool(v, where);
        else if (key == "retain_factors") m.retain_factors = parse_bool(v, where);
      } else if (section == "hyper") {
        auto& h = cfg.hyper;
        if (key == "mu_gamma") h.mu_gamma = parse_doubles(v, where);
        else if (key == "sigma_gamma") h.sigma_gamma = parse_doubles(v, where);
        else {
          const double x = parse_double(v, where);
          if (key == "a_sigma") h.a_sigma = x;
          else if (key == "b_sigma") h.b_sigma = x;
          else if (key == "a_lambda") h.a_lambda = x;
          else if (key == "b_lambda") h.b_lambda = x;
          else if (key == "a_tau") h.a_tau = x;
          else if (key == "b_tau") h.b_tau = x;
          else if (key == "a_z") h.a_z = x;
          else if (key == "b_z") h.b_z = x;
          else if (key == "a_phi") h.a_phi = x;
          else if (key == "b_phi") h.b_phi = x;
        }
      } else if (section == "selection") {
        auto& s = cfg.selection;
        const double x = parse_double(v, where);
        if (key == "s2means_b") s.s2means_b = x;
        else if (key == "fdr_q") s.fdr_q = x;
        else if (key == "level") s.level = x;
      } else if (section == "simulate") {
        auto& s = cfg.simulate;
        if (key == "dims") s.dims = parse_dims(v, where);
        else if (key == "regions") s.regions = parse_uint(v, where);
        else if (key == "n") s.n = parse_uint(v, where);
        else if (key == "n_test") s.n_test = parse_uint(v, where);
        else if (key == "gamma") s.gamma = parse_doubles(v, where);
        else if (key == "seed") s.seed = parse_uint(v, where);
        else if (key == "separate_projections") s.separate_projections = parse_bool(v, where);
        else {
          const double x = parse_double(v, where);
          if (key == "radius_min") s.radius_min = x;
          else if (key == "radius_max") s.radius_max = x;
          else if (key == "peak") s.peak = x;
          else if (key == "edge_fraction") s.edge_fraction = x;
          else if (key == "noise_variance") s.noise_variance = x;
        }
      }
    }
  }
  return cfg;
}

inline RunConfig read_config(const fs::path& path) {
  return parse_config(read_text_file(path), path.string(), path.parent_path());
}

// INI text with only the keys that are set, in a fixed order.
inline std::string config_text(const RunConfig& cfg) {
  std::ostringstream o;
  auto section = [&](const char* name, const std::vector<std::pair<std::string, std::string>>& kv) {
    if (kv.empty()) return;
    o << '[' << name << "]\n";
    for (const auto& [k, v] : kv) o << k << " = " << v << '\n';
    o << '\n';
  };
  using KV = std::vector<std::pair<std::string, std::string>>;
  auto add = [](KV& kv, const char* k, const auto& opt) {
    if (!opt) return;
    using T = std::decay_t<decltype(*opt)>;
    if constexpr (std::is_same_v<T, std::string>) kv.emplace_back(k, *opt);
    else if constexpr (std::is_same_v<T, bool>) kv.emplace_back(k, *opt ? "true" : "false");
    else if constexpr (std::is_same_v<T, double>) kv.emplace_back(k, format_double(*opt));
    else if constexpr (std::is_same_v<T, Dims>) kv.emplace_back(k, join_dims(*opt));
    else if constexpr (std::is_same_v<T, std::vector<double>>) kv.emplace_back(k, join_doubles(opt->data(), opt->size()));
    else kv.emplace_back(k, std::to_string(*opt));
  };
  KV d;
  add(d, "tensor", cfg.data.tensor);
  add(d, "response", cfg.data.response);
  add(d, "covariates", cfg.data.covariates);
  add(d, "truth", cfg.data.truth);
  add(d, "draws", cfg.data.draws);
  add(d, "predictions", cfg.data.predictions);
  section("data", d);
  KV m;
  add(m, "ranks", cfg.model.ranks);
  add(m, "iterations", cfg.model.iterations);
  add(m, "burn_in", cfg.model.burn_in);
  add(m, "thin", cfg.model.thin);
  add(m, "max_rank", cfg.model.max_rank);
  add(m, "seed", cfg.model.seed);
  add(m, "center_scale_response", cfg.model.center_scale_response);
  add(m, "auto_raise_rank1", cfg.model.auto_raise_rank1);
  add(m, "retain_factors", cfg.model.retain_factors);
  section("model", m);
  KV h;
  add(h, "a_sigma", cfg.hyper.a_sigma);
  add(h, "b_sigma", cfg.hyper.b_sigma);
  add(h, "a_lambda", cfg.hyper.a_lambda);
  add(h, "b_lambda", cfg.hyper.b_lambda);
  add(h, "a_tau", cfg.hyper.a_tau);
  add(h, "b_tau", cfg.hyper.b_tau);
  add(h, "a_z", cfg.hyper.a_z);
  add(h, "b_z", cfg.hyper.b_z);
  add(h, "a_phi", cfg.hyper.a_phi);
  add(h, "b_phi", cfg.hyper.b_phi);
  add(h, "mu_gamma", cfg.hyper.mu_gamma);
  add(h, "sigma_gamma", cfg.hyper.sigma_gamma);
  section("hyper", h);
  KV s;
  add(s, "s2means_b", cfg.selection.s2means_b);
  add(s, "fdr_q", cfg.selection.fdr_q);
  add(s, "level", cfg.selection.level);
  section("selection", s);
  KV g;
  add(g, "dims", cfg.simulate.dims);
  add(g, "regions", cfg.simulate.regions);
  add(g, "radius_min", cfg.simulate.radius_min);
  add(g, "radius_max", cfg.simulate.radius_max);
  add(g, "peak", cfg.simulate.peak);
  add(g, "edge_fraction", cfg.simulate.edge_fraction);
  add(g, "separate_projections", cfg.simulate.separate_projections);
  add(g, "n", cfg.simulate.n);
  add(g, "n_test", cfg.simulate.n_test);
  add(g, "gamma", cfg.simulate.gamma);
  add(g, "noise_variance", cfg.simulate.noise_variance);
  add(g, "seed", cfg.simulate.seed);
  section("simulate", g);
  return o.str();
}

// Hyperparameters: defaults from order and ranks, with any configured key
// overriding. b_lambda and b_phi follow an overridden a_lambda / a_phi.
inline Hyperparams resolve_hyper(const RunConfig::Hyper& c, std::size_t order, const Dims& ranks,
                                 std::size_t q) {
  Hyperparams h = Hyperparams::defaults(order, ranks, q);
  const double d = static_cast<double>(order);
  if (c.a_sigma) h.a_sigma = *c.a_sigma;
  if (c.b_sigma) h.b_sigma = *c.b_sigma;
  if (c.a_lambda) h.a_lambda = *c.a_lambda;
  h.b_lambda = c.b_lambda ? *c.b_lambda : std::pow(h.a_lambda, 1.0 / (2.0 * d));
  if (c.a_tau) h.a_tau = *c.a_tau;
  if (c.b_tau) h.b_tau = *c.b_tau;
  if (c.a_z) h.a_z = *c.a_z;
  if (c.b_z) h.b_z = *c.b_z;
  if (c.a_phi) h.a_phi = *c.a_phi;
  h.b_phi = c.b_phi ? *c.b_phi : std::pow(h.a_phi, 1.0 / (2.0 * d));
  const auto qi = static_cast<Eigen::Index>(q);
  if (c.mu_gamma) {
    if (c.mu_gamma->size() != q) {
      throw UsageError("mu_gamma has " + std::to_string(c.mu_gamma->size()) +
                       " entries but there are " + std::to_string(q) + " scalar covariates");
    }
    h.mu_gamma = Eigen::Map<const Eigen::VectorXd>(c.mu_gamma->data(), qi);
  }
  if (c.sigma_gamma) {
    const auto& s = *c.sigma_gamma;
    if (s.size() == 1) {
      h.sigma_gamma = s[0] * Eigen::MatrixXd::Identity(qi, qi);
    } else if (s.size() == q * q) {
      h.sigma_gamma = Eigen::Map<const Eigen::MatrixXd>(s.data(), qi, qi);
    } else {
      throw UsageError("sigma_gamma needs 1 (scaled identity) or q*q = " + std::to_string(q * q) +
                       " values, got " + std::to_string(s.size()));
    }
  }
  h.validate(q);
  return h;
}

inline SimConfig resolve_sim(const RunConfig::Simulate& c) {
  SimConfig s;
  if (c.dims) s.dims = *c.dims;
  if (c.regions) s.regions = *c.regions;
  if (c.radius_min) s.radius_min = *c.radius_min;
  if (c.radius_max) s.radius_max = *c.radius_max;
  if (c.peak) s.peak = *c.peak;
  if (c.edge_fraction) s.edge_fraction = *c.edge_fraction;
  if (c.separate_projections) s.separate_projections = *c.separate_projections;
  if (c.n) s.n = *c.n;
  if (c.n_test) s.n_test = *c.n_test;
  if (c.gamma) s.gamma = Eigen::Map<const Eigen::VectorXd>(c.gamma->data(), static_cast<Eigen::Index>(c.gamma->size()));
  if (c.noise_variance) s.noise_variance = *c.noise_variance;
  if (c.seed) s.seed = *c.seed;
  s.validate();
  return s;
}

// ------------------------------------------------------------------- Dataset

struct DatasetFiles {
  fs::path tensor;
  fs::path response;
  std::optional<fs::path> covariates;
};

// Tensor file holds dims (p_1, ..., p_D, n). Response count and covariate
// rows must equal its trailing dimension.
inline Dataset load_dataset(const DatasetFiles& f) {
  const DenseTensor stacked = read_tensor(f.tensor);
  if (stacked.order() < 2) {
    throw IoError(IoErrorCode::kDimensionMismatch,
                  f.tensor.string() + ": needs a trailing subject dimension (order >= 2)");
  }
  const std::size_t n = stacked.dims().back();
  Eigen::VectorXd y = read_vector_text(f.response);
  if (static_cast<std::size_t>(y.size()) != n) {
    throw IoError(IoErrorCode::kDimensionMismatch,
                  f.response.string() + " has " + std::to_string(y.size()) + " responses but " +
                      f.tensor.string() + " has " + std::to_string(n) + " subjects");
  }
  Eigen::MatrixXd eta(static_cast<Eigen::Index>(n), 0);
  if (f.covariates) {
    eta = read_matrix_csv(*f.covariates);
    if (static_cast<std::size_t>(eta.rows()) != n) {
      throw IoError(IoErrorCode::kDimensionMismatch,
                    f.covariates->string() + " has " + std::to_string(eta.rows()) + " rows but " +
                        f.tensor.string() + " has " + std::to_string(n) + " subjects");
    }
  }
  return Dataset::from_tensor(stacked, std::move(y), std::move(eta));
}

// Standard file names inside a data directory written by `simulate`.
struct DataLayout {
  static constexpr const char* kTensor = "X.btt";
  static constexpr const char* kResponse = "y.txt";
  static constexpr const char* kCovariates = "eta.csv";
  static constexpr const char* kTruth = "B_true.btt";
  static constexpr const char* kTestTensor = "test_X.btt";
  static constexpr const char* kTestResponse = "test_y.txt";
  static constexpr const char* kTestCovariates = "test_eta.csv";
};

inline void save_dataset(const fs::path& dir, const Dataset& d, const std::string& prefix = "") {
  write_tensor(dir / (prefix + DataLayout::kTensor), d.stacked());
  write_vector_text(dir / (prefix + DataLayout::kResponse), d.y);
  if (d.q() > 0) write_matrix_csv(dir / (prefix + DataLayout::kCovariates), d.eta);
}

inline DatasetFiles dataset_files_in(const fs::path& dir, const std::string& prefix = "") {
  DatasetFiles f{dir / (prefix + DataLayout::kTensor), dir / (prefix + DataLayout::kResponse), {}};
  const fs::path cov = dir / (prefix + DataLayout::kCovariates);
  if (fs::exists(cov)) f.covariates = cov;
  return f;
}

// ----------------------------------------------------------------- DrawsFile

inline std::size_t factor_length(const Dims& dims, const Dims& ranks) {
  std::size_t len = dims_product(ranks);
  for (std::size_t j = 0; j < ranks.size(); ++j) len += ranks[j] * dims[j];
  return len;
}

inline std::string draws_header(const PosteriorDraws& d) {
  const auto& m = d.manifest;
  const auto& h = m.hyper;
  std::ostringstream o;
  o << kDrawsMagic << ' ' << kDrawsVersion << '\n';
  o << "seed=" << m.seed << '\n';
  o << "dims=" << join_dims(m.dims) << '\n';
  o << "ranks=" << join_dims(m.ranks) << '\n';
  o << "n=" << m.n << '\n';
  o << "q=" << m.q << '\n';
  o << "iterations=" << m.iterations << '\n';
  o << "burn_in=" << m.burn_in << '\n';
  o << "thin=" << m.thin << '\n';
  o << "center_scale=" << (m.center_scale ? "true" : "false") << '\n';
  o << "response_center=" << format_double(m.response_center) << '\n';
  o << "response_scale=" << format_double(m.response_scale) << '\n';
  o << "retain_factors=" << (m.retain_factors ? "true" : "false") << '\n';
  o << "hyper.a_sigma=" << format_double(h.a_sigma) << '\n';
  o << "hyper.b_sigma=" << format_double(h.b_sigma) << '\n';
  o << "hyper.a_lambda=" << format_double(h.a_lambda) << '\n';
  o << "hyper.b_lambda=" << format_double(h.b_lambda) << '\n';
  o << "hyper.a_tau=" << format_double(h.a_tau) << '\n';
  o << "hyper.b_tau=" << format_double(h.b_tau) << '\n';
  o << "hyper.a_z=" << format_double(h.a_z) << '\n';
  o << "hyper.b_z=" << format_double(h.b_z) << '\n';
  o << "hyper.a_phi=" << format_double(h.a_phi) << '\n';
  o << "hyper.b_phi=" << format_double(h.b_phi) << '\n';
  o << "hyper.mu_gamma=" << join_doubles(h.mu_gamma.data(), static_cast<std::size_t>(h.mu_gamma.size())) << '\n';
  o << "hyper.sigma_gamma=" << join_doubles(h.sigma_gamma.data(), static_cast<std::size_t>(h.sigma_gamma.size())) << '\n';
  o << "records=" << d.size() << '\n';
  o << "record=loglik,sigma2,tau,z,gamma[" << m.q << "],B[" << dims_product(m.dims) << "]";
  if (m.retain_factors) o << ",factors[" << factor_length(m.dims, m.ranks) << "]";
  o << '\n';
  o << "end\n";
  return o.str();
}

inline void write_draws(std::ostream& o, const PosteriorDraws& d) {
  d.validate();
  o << draws_header(d);
  const std::size_t q = d.manifest.q;
  const auto v = static_cast<std::size_t>(d.b.rows());
  const auto f = static_cast<std::size_t>(d.factors.rows());
  for (std::size_t s = 0; s < d.size(); ++s) {
    const auto c = static_cast<Eigen::Index>(s);
    detail::put_le(o, d.loglik[s]);
    detail::put_le(o, d.sigma2[s]);
    detail::put_le(o, d.tau[s]);
    detail::put_le(o, d.z[s]);
    if (q > 0) detail::put_doubles_le(o, d.gamma.col(c).data(), q);
    detail::put_doubles_le(o, d.b.col(c).data(), v);
    if (d.manifest.retain_factors) detail::put_doubles_le(o, d.factors.col(c).data(), f);
  }
}

inline void write_draws(const fs::path& path, const PosteriorDraws& d) {
  write_atomic(path, [&](std::ostream& o) { write_draws(o, d); });
}

inline PosteriorDraws read_draws(std::istream& in, const std::string& name) {
  std::string line;
  if (!std::getline(in, line)) throw IoError(IoErrorCode::kTruncatedPayload, name + ": empty file");
  {
    std::istringstream first(line);
    std::string magic;
    int version = 0;
    first >> magic >> version;
    if (magic != kDrawsMagic) throw IoError(IoErrorCode::kBadMagic, name + ": not a draws file (bad magic)");
    if (version != kDrawsVersion) {
      throw IoError(IoErrorCode::kVersionMismatch, name + ": draws format version " +
                                                       std::to_string(version) + ", expected " +
                                                       std::to_string(kDrawsVersion));
    }
  }
  std::map<std::string, std::string> kv;
  for (;;) {
    // A line ending at EOF without its newline was cut short.
    if (!std::getline(in, line) || in.eof()) {
      throw IoError(IoErrorCode::kTruncatedPayload, name + ": truncated header");
    }
    if (line == "end") break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(IoErrorCode::kParse, name + ": bad header line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw IoError(IoErrorCode::kParse, name + ": header lacks '" + k + "'");
    return it->second;
  };
  const std::string w = name + " header";
  PosteriorDraws d;
  auto& m = d.manifest;
  m.seed = parse_uint(get("seed"), w);
  m.dims = parse_dims(get("dims"), w);
  m.ranks = parse_dims(get("ranks"), w);
  m.n = parse_uint(get("n"), w);
  m.q = parse_uint(get("q"), w);
  m.iterations = parse_uint(get("iterations"), w);
  m.burn_in = parse_uint(get("burn_in"), w);
  m.thin = parse_uint(get("thin"), w);
  m.center_scale = parse_bool(get("center_scale"), w);
  m.response_center = parse_double(get("response_center"), w);
  m.response_scale = parse_double(get("response_scale"), w);
  m.retain_factors = parse_bool(get("retain_factors"), w);
  auto& h = m.hyper;
  h.a_sigma = parse_double(get("hyper.a_sigma"), w);
  h.b_sigma = parse_double(get("hyper.b_sigma"), w);
  h.a_lambda = parse_double(get("hyper.a_lambda"), w);
  h.b_lambda = parse_double(get("hyper.b_lambda"), w);
  h.a_tau = parse_double(get("hyper.a_tau"), w);
  h.b_tau = parse_double(get("hyper.b_tau"), w);
  h.a_z = parse_double(get("hyper.a_z"), w);
  h.b_z = parse_double(get("hyper.b_z"), w);
  h.a_phi = parse_double(get("hyper.a_phi"), w);
  h.b_phi = parse_double(get("hyper.b_phi"), w);
  const auto qi = static_cast<Eigen::Index>(m.q);
  const auto mu = parse_doubles(get("hyper.mu_gamma"), w);
  const auto sg = parse_doubles(get("hyper.sigma_gamma"), w);
  if (mu.size() != m.q || sg.size() != m.q * m.q) {
    throw IoError(IoErrorCode::kDimensionMismatch, name + ": gamma prior does not match q");
  }
  h.mu_gamma = Eigen::Map<const Eigen::VectorXd>(mu.data(), qi);
  h.sigma_gamma = Eigen::Map<const Eigen::MatrixXd>(sg.data(), qi, qi);
  const std::size_t records = parse_uint(get("records"), w);
  if (records != m.retained()) {
    throw IoError(IoErrorCode::kDimensionMismatch,
                  name + ": " + std::to_string(records) + " records but the schedule retains " +
                      std::to_string(m.retained()));
  }

  const std::size_t v = dims_product(m.dims);
  const std::size_t f = m.retain_factors ? factor_length(m.dims, m.ranks) : 0;
  const auto s = static_cast<Eigen::Index>(records);
  d.loglik.resize(records);
  d.sigma2.resize(records);
  d.tau.resize(records);
  d.z.resize(records);
  d.gamma.resize(qi, s);
  d.b.resize(static_cast<Eigen::Index>(v), s);
  if (f > 0) d.factors.resize(static_cast<Eigen::Index>(f), s);
  for (std::size_t r = 0; r < records; ++r) {
    const auto c = static_cast<Eigen::Index>(r);
    bool ok = detail::get_le(in, d.loglik[r]) && detail::get_le(in, d.sigma2[r]) &&
              detail::get_le(in, d.tau[r]) && detail::get_le(in, d.z[r]);
    ok = ok && (m.q == 0 || detail::get_doubles_le(in, d.gamma.col(c).data(), m.q));
    ok = ok && detail::get_doubles_le(in, d.b.col(c).data(), v);
    ok = ok && (f == 0 || detail::get_doubles_le(in, d.factors.col(c).data(), f));
    if (!ok) {
      throw IoError(IoErrorCode::kTruncatedPayload, name + ": truncated payload at record " +
                                                        std::to_string(r + 1) + " of " +
                                                        std::to_string(records));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError(IoErrorCode::kParse, name + ": trailing bytes after the last record");
  }
  return d;
}

inline PosteriorDraws read_draws(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::kOpenFailed, "cannot open draws file " + path.string());
  return read_draws(in, path.string());
}

// --------------------------------------------------------------- run folders

// Relative output directories land under $BTRT_RUN_ROOT when it is set.
inline fs::path resolve_run_dir(const fs::path& out) {
  if (out.is_relative()) {
    if (const char* root = std::getenv(kRunRootEnv); root && *root) return fs::path(root) / out;
  }
  return out;
}

}  // namespace btrt
