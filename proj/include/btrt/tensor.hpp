#pragma once

// Dense tensors stored mode-1-major (the first index varies fastest), plus the
// CP/Tucker compositions and mode contractions used by the sampler.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "btrt/error.hpp"
#include "btrt/parallel.hpp"

namespace btrt {

using Dims = std::vector<std::size_t>;

inline std::size_t dims_product(std::span<const std::size_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string dims_to_string(std::span<const std::size_t> dims) {
  std::string out = "(";
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (k) out += ",";
    out += std::to_string(dims[k]);
  }
  return out + ")";
}

class DenseTensor {
 public:
  DenseTensor() : dims_{1}, values_(1, 0.0) {}

  explicit DenseTensor(Dims dims) : dims_(std::move(dims)) {
    check_dims();
    values_.assign(dims_product(dims_), 0.0);
  }

  DenseTensor(Dims dims, std::vector<double> values)
      : dims_(std::move(dims)), values_(std::move(values)) {
    check_dims();
    if (values_.size() != dims_product(dims_)) {
      throw UsageError("tensor value count " + std::to_string(values_.size()) +
                       " does not match dims " + dims_to_string(dims_));
    }
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t mode) const { return dims_.at(mode); }
  std::size_t order() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return values_.size(); }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  const std::vector<double>& values() const noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::size_t linear_index(std::span<const std::size_t> index) const {
    if (index.size() != dims_.size()) throw UsageError("multi-index order mismatch");
    std::size_t linear = 0;
    std::size_t stride = 1;
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      if (index[k] >= dims_[k]) throw UsageError("multi-index out of range");
      linear += index[k] * stride;
      stride *= dims_[k];
    }
    return linear;
  }

  Dims multi_index(std::size_t linear) const {
    Dims index(dims_.size());
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      index[k] = linear % dims_[k];
      linear /= dims_[k];
    }
    return index;
  }

  double& at(std::span<const std::size_t> index) { return values_[linear_index(index)]; }
  double at(std::span<const std::size_t> index) const { return values_[linear_index(index)]; }
  double& at(std::initializer_list<std::size_t> index) {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
  }
  double at(std::initializer_list<std::size_t> index) const {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
  }

  Eigen::Map<Eigen::VectorXd> vec() {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }
  Eigen::Map<const Eigen::VectorXd> vec() const {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }

  bool operator==(const DenseTensor&) const = default;

 private:
  void check_dims() const {
    if (dims_.empty()) throw UsageError("tensor order must be at least 1");
    for (auto d : dims_) {
      if (d == 0) throw UsageError("tensor dims must be positive, got " + dims_to_string(dims_));
    }
  }

  Dims dims_;
  std::vector<double> values_;
};

struct TuckerFactorSet {
  std::vector<Eigen::MatrixXd> factors;  // factor j is p_j x R_j
  DenseTensor core;                      // dims (R_1, ..., R_D)

  std::size_t order() const { return factors.size(); }

  Dims ranks() const { return core.dims(); }

  Dims dims() const {
    Dims out;
    for (const auto& f : factors) out.push_back(static_cast<std::size_t>(f.rows()));
    return out;
  }

  void validate() const {
    if (factors.size() != core.order()) {
      throw UsageError("Tucker factor count " + std::to_string(factors.size()) +
                       " does not match core order " + std::to_string(core.order()));
    }
    for (std::size_t j = 0; j < factors.size(); ++j) {
      if (static_cast<std::size_t>(factors[j].cols()) != core.dim(j)) {
        throw UsageError("factor " + std::to_string(j) + " has " +
                         std::to_string(factors[j].cols()) + " columns, core dim is " +
                         std::to_string(core.dim(j)));
      }
      if (factors[j].rows() < 1) throw UsageError("factor matrices need at least one row");
    }
  }
};

namespace detail {

// out = in x_mode m, where m is (rows x dims[mode]). Buffers are raw so the
// trailing "subject" mode of a data tensor may be zero-length.
// Work is split over the slowest-varying index in fixed-size chunks.
inline void mode_multiply_raw(const double* in, std::span<const std::size_t> dims, std::size_t mode,
                              const Eigen::MatrixXd& m, double* out, unsigned threads = 1) {
  using ConstMat = Eigen::Map<const Eigen::MatrixXd>;
  using Mat = Eigen::Map<Eigen::MatrixXd>;
  const std::size_t left = dims_product(dims.subspan(0, mode));
  const std::size_t mid = dims[mode];
  const std::size_t right = dims_product(dims.subspan(mode + 1));
  const auto rows = static_cast<Eigen::Index>(m.rows());
  if (static_cast<std::size_t>(m.cols()) != mid) {
    throw UsageError("mode product: matrix has " + std::to_string(m.cols()) +
                     " columns, mode " + std::to_string(mode) + " has length " +
                     std::to_string(mid));
  }
  if (left == 1) {
    // Whole tensor is a (mid x right) column-major matrix.
    parallel_chunks(right, 256, threads, [&](std::size_t b, std::size_t e) {
      const auto cols = static_cast<Eigen::Index>(e - b);
      ConstMat block(in + b * mid, static_cast<Eigen::Index>(mid), cols);
      Mat dst(out + b * rows, rows, cols);
      dst.noalias() = m * block;
    });
    return;
  }
  const Eigen::MatrixXd mt = m.transpose();
  parallel_chunks(right, 16, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) {
      ConstMat block(in + r * left * mid, static_cast<Eigen::Index>(left),
                     static_cast<Eigen::Index>(mid));
      Mat dst(out + r * left * rows, static_cast<Eigen::Index>(left), rows);
      dst.noalias() = block * mt;
    }
  });
}

}  // namespace detail

inline Eigen::VectorXd vectorize(const DenseTensor& t) { return t.vec(); }

// Rows index `mode` (zero-based); columns run over the remaining indices in
// mode-1-major order with `mode` removed.
inline Eigen::MatrixXd matricize(const DenseTensor& t, std::size_t mode) {
  if (mode >= t.order()) {
    throw UsageError("matricize: mode " + std::to_string(mode) + " out of range for order " +
                     std::to_string(t.order()));
  }
  const auto& dims = t.dims();
  const std::size_t left = dims_product(std::span(dims).subspan(0, mode));
  const std::size_t mid = dims[mode];
  const std::size_t right = dims_product(std::span(dims).subspan(mode + 1));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(mid), static_cast<Eigen::Index>(left * right));
  for (std::size_t r = 0; r < right; ++r) {
    for (std::size_t c = 0; c < mid; ++c) {
      for (std::size_t l = 0; l < left; ++l) {
        out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(l + left * r)) =
            t[l + left * (c + mid * r)];
      }
    }
  }
  return out;
}

// Inverse of matricize.
inline DenseTensor fold(const Eigen::MatrixXd& m, std::size_t mode, Dims dims) {
  if (mode >= dims.size()) throw UsageError("fold: mode out of range");
  const std::size_t left = dims_product(std::span(dims).subspan(0, mode));
  const std::size_t mid = dims[mode];
  const std::size_t right = dims_product(std::span(dims).subspan(mode + 1));
  if (static_cast<std::size_t>(m.rows()) != mid ||
      static_cast<std::size_t>(m.cols()) != left * right) {
    throw UsageError("fold: matrix shape does not match dims " + dims_to_string(dims));
  }
  DenseTensor t(std::move(dims));
  for (std::size_t r = 0; r < right; ++r) {
    for (std::size_t c = 0; c < mid; ++c) {
      for (std::size_t l = 0; l < left; ++l) {
        t[l + left * (c + mid * r)] =
            m(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(l + left * r));
      }
    }
  }
  return t;
}

inline double inner(const DenseTensor& a, const DenseTensor& b) {
  if (a.dims() != b.dims()) {
    throw UsageError("inner: shape mismatch " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  }
  return a.vec().dot(b.vec());
}

inline DenseTensor mode_multiply(const DenseTensor& t, std::size_t mode, const Eigen::MatrixXd& m,
                                 unsigned threads = 1) {
  if (mode >= t.order()) throw UsageError("mode_multiply: mode out of range");
  Dims out_dims = t.dims();
  out_dims[mode] = static_cast<std::size_t>(m.rows());
  DenseTensor out(out_dims);
  detail::mode_multiply_raw(t.data(), t.dims(), mode, m, out.data(), threads);
  return out;
}

inline DenseTensor outer(std::span<const Eigen::VectorXd> vectors) {
  if (vectors.empty()) throw UsageError("outer: need at least one vector");
  Dims dims;
  for (const auto& v : vectors) dims.push_back(static_cast<std::size_t>(v.size()));
  DenseTensor t(dims);
  std::vector<double> acc(vectors[0].data(), vectors[0].data() + vectors[0].size());
  for (std::size_t k = 1; k < vectors.size(); ++k) {
    std::vector<double> next(acc.size() * static_cast<std::size_t>(vectors[k].size()));
    for (Eigen::Index c = 0; c < vectors[k].size(); ++c) {
      for (std::size_t l = 0; l < acc.size(); ++l) {
        next[l + acc.size() * static_cast<std::size_t>(c)] = acc[l] * vectors[k][c];
      }
    }
    acc = std::move(next);
  }
  std::copy(acc.begin(), acc.end(), t.data());
  return t;
}

inline DenseTensor cp_compose(std::span<const Eigen::MatrixXd> factors) {
  if (factors.empty()) throw UsageError("cp_compose: need at least one factor");
  const auto rank = factors[0].cols();
  for (const auto& f : factors) {
    if (f.cols() != rank) throw UsageError("cp_compose: factors have differing column counts");
  }
  Dims dims;
  for (const auto& f : factors) dims.push_back(static_cast<std::size_t>(f.rows()));
  DenseTensor out(dims);
  std::vector<Eigen::VectorXd> cols(factors.size());
  for (Eigen::Index r = 0; r < rank; ++r) {
    for (std::size_t j = 0; j < factors.size(); ++j) cols[j] = factors[j].col(r);
    out.vec() += outer(cols).vec();
  }
  return out;
}

// Evaluated as successive mode products of the core with each factor.
inline DenseTensor tucker_compose(const TuckerFactorSet& f, unsigned threads = 1) {
  f.validate();
  DenseTensor t = f.core;
  for (std::size_t j = 0; j < f.order(); ++j) t = mode_multiply(t, j, f.factors[j], threads);
  return t;
}

// <beta_1 o ... o beta_D, x> without forming the outer product.
inline double summand_project(const DenseTensor& x, std::span<const Eigen::VectorXd> betas) {
  if (betas.size() != x.order()) throw UsageError("summand_project: need one vector per mode");
  std::vector<double> cur(x.values());
  std::size_t remaining = x.size();
  for (std::size_t k = 0; k < betas.size(); ++k) {
    const auto p = static_cast<std::size_t>(betas[k].size());
    if (p != x.dim(k)) throw UsageError("summand_project: vector length mismatch on mode " +
                                        std::to_string(k));
    const std::size_t rest = remaining / p;
    Eigen::Map<const Eigen::MatrixXd> m(cur.data(), static_cast<Eigen::Index>(p),
                                        static_cast<Eigen::Index>(rest));
    Eigen::VectorXd next = m.transpose() * betas[k];
    cur.assign(next.data(), next.data() + next.size());
    remaining = rest;
  }
  return cur[0];
}

// m with beta_mode' m == summand_project(x, betas) for every beta on `mode`.
// `others` holds the D-1 vectors for the remaining modes, in mode order.
inline Eigen::VectorXd margin_contract(const DenseTensor& x, std::size_t mode,
                                       std::span<const Eigen::VectorXd> others) {
  if (mode >= x.order()) throw UsageError("margin_contract: mode out of range");
  if (others.size() + 1 != x.order()) {
    throw UsageError("margin_contract: need D-1 vectors");
  }
  DenseTensor cur = x;
  std::size_t o = 0;
  for (std::size_t k = 0; k < x.order(); ++k) {
    if (k == mode) continue;
    const auto& v = others[o++];
    if (static_cast<std::size_t>(v.size()) != x.dim(k)) {
      throw UsageError("margin_contract: vector length mismatch on mode " + std::to_string(k));
    }
    cur = mode_multiply(cur, k, v.transpose());
  }
  return cur.vec();
}

}  // namespace btrt
