#include <gtest/gtest.h>

#include <vector>

#include "btrt/rng.hpp"
#include "btrt/tensor.hpp"

namespace btrt {
namespace {

DenseTensor random_tensor(RngStream& s, Dims dims) {
  DenseTensor t(std::move(dims));
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = s.normal();
  return t;
}

Eigen::MatrixXd random_matrix(RngStream& s, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = s.normal();
  return m;
}

DenseTensor two_by_two() {
  DenseTensor a({2, 2});
  a.at({0, 0}) = 1;
  a.at({1, 0}) = 3;
  a.at({0, 1}) = 2;
  a.at({1, 1}) = 4;
  return a;
}

// Visits every multi-index of `dims` in mode-1-major order.
template <typename Fn>
void for_each_index(const Dims& dims, Fn&& fn) {
  Dims idx(dims.size(), 0);
  const std::size_t total = dims_product(dims);
  for (std::size_t lin = 0; lin < total; ++lin) {
    fn(idx);
    for (std::size_t k = 0; k < dims.size(); ++k) {
      if (++idx[k] < dims[k]) break;
      idx[k] = 0;
    }
  }
}

TEST(DenseTensor, RejectsZeroDimsAndWrongValueCount) {
  EXPECT_THROW(DenseTensor({2, 0}), UsageError);
  EXPECT_THROW(DenseTensor(Dims{}), UsageError);
  EXPECT_THROW(DenseTensor({2, 2}, {1.0, 2.0, 3.0}), UsageError);
  DenseTensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
}

TEST(DenseTensor, LinearAndMultiIndexAgree) {
  DenseTensor t({3, 4, 2});
  for (std::size_t k = 0; k < t.size(); ++k) {
    const Dims idx = t.multi_index(k);
    EXPECT_EQ(t.linear_index(idx), k);
  }
  EXPECT_EQ(t.linear_index(Dims{1, 0, 0}), 1u);
  EXPECT_EQ(t.linear_index(Dims{0, 1, 0}), 3u);
  EXPECT_EQ(t.linear_index(Dims{0, 0, 1}), 12u);
}

TEST(Vectorize, FirstIndexFastest) {
  const Eigen::VectorXd v = vectorize(two_by_two());
  EXPECT_EQ(v, Eigen::Vector4d(1, 3, 2, 4));
}

TEST(Vectorize, OrderOneIsIdentity) {
  DenseTensor t({2}, {5.0, 6.0});
  EXPECT_EQ(vectorize(t), Eigen::Vector2d(5, 6));
}

TEST(Vectorize, ConstantTensor) {
  DenseTensor t({2, 2, 2}, std::vector<double>(8, 1.0));
  const Eigen::VectorXd v = vectorize(t);
  ASSERT_EQ(v.size(), 8);
  EXPECT_TRUE((v.array() == 1.0).all());
}

TEST(Matricize, OrderTwoModes) {
  const DenseTensor a = two_by_two();
  Eigen::Matrix2d m1, m2;
  m1 << 1, 2, 3, 4;
  m2 << 1, 3, 2, 4;
  EXPECT_EQ(matricize(a, 0), Eigen::MatrixXd(m1));
  EXPECT_EQ(matricize(a, 1), Eigen::MatrixXd(m2));
}

TEST(Matricize, ThirdModeMatchesIndexEnumeration) {
  RngStream s(3, 0);
  const DenseTensor t = random_tensor(s, {2, 3, 2});
  const Eigen::MatrixXd m = matricize(t, 2);
  ASSERT_EQ(m.rows(), 2);
  ASSERT_EQ(m.cols(), 6);
  // Column of (i1, i2) is i1 + 2 * i2 once mode 3 is removed.
  for (std::size_t i1 = 0; i1 < 2; ++i1) {
    for (std::size_t i2 = 0; i2 < 3; ++i2) {
      for (std::size_t i3 = 0; i3 < 2; ++i3) {
        EXPECT_EQ(m(static_cast<Eigen::Index>(i3), static_cast<Eigen::Index>(i1 + 2 * i2)),
                  t.at({i1, i2, i3}));
      }
    }
  }
}

TEST(Matricize, ModeOutOfRange) {
  EXPECT_THROW(matricize(two_by_two(), 2), UsageError);
}

TEST(Matricize, FoldRoundTripAllModesUpToOrderFour) {
  RngStream s(4, 0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t order = 1 + s.below(4);
    Dims dims(order);
    for (auto& d : dims) d = 1 + s.below(4);
    const DenseTensor t = random_tensor(s, dims);
    for (std::size_t k = 0; k < order; ++k) {
      const Eigen::MatrixXd m = matricize(t, k);
      EXPECT_EQ(static_cast<std::size_t>(m.rows()), dims[k]);
      EXPECT_EQ(fold(m, k, dims), t);
      // Row l of the matricization holds exactly the entries with index k == l.
      for_each_index(dims, [&](const Dims& idx) {
        std::size_t col = 0, stride = 1;
        for (std::size_t j = 0; j < order; ++j) {
          if (j == k) continue;
          col += idx[j] * stride;
          stride *= dims[j];
        }
        EXPECT_EQ(m(static_cast<Eigen::Index>(idx[k]), static_cast<Eigen::Index>(col)), t.at(idx));
      });
    }
  }
}

TEST(Inner, IdentityPattern) {
  DenseTensor a({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(inner(a, a), 2.0);
}

TEST(Inner, ZeroTensor) {
  RngStream s(5, 0);
  const DenseTensor a = random_tensor(s, {3, 4});
  EXPECT_EQ(inner(a, DenseTensor({3, 4})), 0.0);
}

TEST(Inner, MatchesElementwiseSum) {
  RngStream s(6, 0);
  const DenseTensor a = random_tensor(s, {3, 4});
  const DenseTensor b = random_tensor(s, {3, 4});
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) sum += a.at({i, j}) * b.at({i, j});
  }
  EXPECT_NEAR(inner(a, b), sum, 1e-12 * std::abs(sum) + 1e-15);
}

TEST(Inner, ShapeMismatch) {
  EXPECT_THROW(inner(DenseTensor({2, 3}), DenseTensor({3, 2})), UsageError);
}

TEST(Inner, EqualsDotOfVectorizationsForManyShapes) {
  RngStream s(7, 0);
  for (int trial = 0; trial < 20; ++trial) {
    Dims dims(1 + s.below(4));
    for (auto& d : dims) d = 1 + s.below(5);
    const DenseTensor a = random_tensor(s, dims);
    const DenseTensor b = random_tensor(s, dims);
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) sum += a.values()[k] * b.values()[k];
    EXPECT_NEAR(inner(a, b), vectorize(a).dot(vectorize(b)), 1e-12);
    EXPECT_NEAR(inner(a, b), sum, 1e-12);
  }
}

TEST(CpCompose, SingleOuterProduct) {
  std::vector<Eigen::MatrixXd> f{Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)};
  const DenseTensor b = cp_compose(f);
  EXPECT_EQ(b.values(), (std::vector<double>{0, 0, 1, 0}));
  EXPECT_EQ(b.at({0, 1}), 1.0);
}

TEST(CpCompose, ZeroSummandChangesNothing) {
  RngStream s(8, 0);
  std::vector<Eigen::MatrixXd> one{random_matrix(s, 3, 1), random_matrix(s, 4, 1)};
  std::vector<Eigen::MatrixXd> two(2);
  for (int j = 0; j < 2; ++j) {
    two[j] = Eigen::MatrixXd::Zero(one[j].rows(), 2);
    two[j].col(0) = one[j].col(0);
  }
  EXPECT_EQ(cp_compose(one), cp_compose(two));
}

TEST(CpCompose, MatchesTripleLoop) {
  RngStream s(9, 0);
  std::vector<Eigen::MatrixXd> f{random_matrix(s, 3, 2), random_matrix(s, 4, 2),
                                 random_matrix(s, 2, 2)};
  const DenseTensor b = cp_compose(f);
  for_each_index({3, 4, 2}, [&](const Dims& v) {
    double expect = 0.0;
    for (int r = 0; r < 2; ++r) {
      double prod = 1.0;
      for (int j = 0; j < 3; ++j) prod *= f[j](static_cast<Eigen::Index>(v[j]), r);
      expect += prod;
    }
    EXPECT_NEAR(b.at(v), expect, 1e-12);
  });
}

TEST(CpCompose, MismatchedColumns) {
  std::vector<Eigen::MatrixXd> f{Eigen::MatrixXd::Ones(2, 2), Eigen::MatrixXd::Ones(2, 3)};
  EXPECT_THROW(cp_compose(f), UsageError);
}

TEST(TuckerCompose, RankOneWithScaledCore) {
  TuckerFactorSet f;
  f.factors = {Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)};
  f.core = DenseTensor({1, 1}, {2.0});
  const DenseTensor b = tucker_compose(f);
  EXPECT_EQ(b.values(), (std::vector<double>{0, 0, 2, 0}));
}

TEST(TuckerCompose, SuperdiagonalCoreIsCp) {
  RngStream s(10, 0);
  for (std::size_t order : {2u, 3u}) {
    const Eigen::Index r = 3;
    TuckerFactorSet f;
    Dims ranks(order, 3);
    f.core = DenseTensor(ranks);
    for (Eigen::Index k = 0; k < r; ++k) {
      f.core.at(Dims(order, static_cast<std::size_t>(k))) = 1.0;
    }
    for (std::size_t j = 0; j < order; ++j) f.factors.push_back(random_matrix(s, 4 + j, r));
    const DenseTensor t = tucker_compose(f);
    const DenseTensor c = cp_compose(f.factors);
    for (std::size_t k = 0; k < t.size(); ++k) {
      EXPECT_NEAR(t[k], c[k], 1e-12 * std::max(1.0, std::abs(c[k])));
    }
  }
}

TEST(TuckerCompose, MatchesExhaustiveSum) {
  RngStream s(11, 0);
  TuckerFactorSet f;
  f.factors = {random_matrix(s, 4, 2), random_matrix(s, 5, 3)};
  f.core = random_tensor(s, {2, 3});
  const DenseTensor b = tucker_compose(f);
  EXPECT_EQ(b.dims(), (Dims{4, 5}));
  for_each_index({4, 5}, [&](const Dims& v) {
    double expect = 0.0;
    for (std::size_t r1 = 0; r1 < 2; ++r1) {
      for (std::size_t r2 = 0; r2 < 3; ++r2) {
        expect += f.core.at({r1, r2}) * f.factors[0](static_cast<Eigen::Index>(v[0]), r1) *
                  f.factors[1](static_cast<Eigen::Index>(v[1]), r2);
      }
    }
    EXPECT_NEAR(b.at(v), expect, 1e-12);
  });
}

TEST(TuckerCompose, ThreadCountDoesNotChangeBits) {
  RngStream s(12, 0);
  TuckerFactorSet f;
  f.factors = {random_matrix(s, 30, 3), random_matrix(s, 40, 4), random_matrix(s, 20, 2)};
  f.core = random_tensor(s, {3, 4, 2});
  EXPECT_EQ(tucker_compose(f, 1), tucker_compose(f, 4));
}

TEST(TuckerCompose, InvariantViolations) {
  TuckerFactorSet f;
  f.factors = {Eigen::MatrixXd::Ones(3, 2)};
  f.core = DenseTensor({2, 2});
  EXPECT_THROW(tucker_compose(f), UsageError);
  f.factors.push_back(Eigen::MatrixXd::Ones(3, 3));
  EXPECT_THROW(tucker_compose(f), UsageError);
}

TEST(ModeMultiply, MatchesBruteForce) {
  RngStream s(13, 0);
  const DenseTensor t = random_tensor(s, {3, 4, 5});
  for (std::size_t mode = 0; mode < 3; ++mode) {
    const Eigen::MatrixXd m = random_matrix(s, 2, static_cast<Eigen::Index>(t.dim(mode)));
    const DenseTensor out = mode_multiply(t, mode, m);
    Dims od = t.dims();
    od[mode] = 2;
    ASSERT_EQ(out.dims(), od);
    for_each_index(od, [&](const Dims& idx) {
      double expect = 0.0;
      Dims src = idx;
      for (std::size_t l = 0; l < t.dim(mode); ++l) {
        src[mode] = l;
        expect += m(static_cast<Eigen::Index>(idx[mode]), static_cast<Eigen::Index>(l)) * t.at(src);
      }
      EXPECT_NEAR(out.at(idx), expect, 1e-12);
    });
    EXPECT_EQ(mode_multiply(t, mode, m, 3), out);
  }
}

TEST(SummandProject, CoordinatePick) {
  DenseTensor x({2, 2});
  x.at({0, 1}) = 7.0;
  std::vector<Eigen::VectorXd> b{Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)};
  EXPECT_EQ(summand_project(x, b), 7.0);
}

TEST(SummandProject, ZeroVector) {
  RngStream s(14, 0);
  const DenseTensor x = random_tensor(s, {3, 3});
  std::vector<Eigen::VectorXd> b{Eigen::Vector3d(1, 2, 3), Eigen::Vector3d::Zero()};
  EXPECT_EQ(summand_project(x, b), 0.0);
}

TEST(SummandProject, EqualsInnerWithComposedSummand) {
  RngStream s(15, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const DenseTensor x = random_tensor(s, {3, 4, 5});
    std::vector<Eigen::VectorXd> b{random_matrix(s, 3, 1), random_matrix(s, 4, 1),
                                   random_matrix(s, 5, 1)};
    std::vector<Eigen::MatrixXd> f(b.begin(), b.end());
    const double expect = inner(cp_compose(f), x);
    EXPECT_NEAR(summand_project(x, b), expect, 1e-12 * std::max(1.0, std::abs(expect)));
  }
}

TEST(SummandProject, ShapeMismatch) {
  DenseTensor x({2, 3});
  std::vector<Eigen::VectorXd> b{Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)};
  EXPECT_THROW(summand_project(x, b), UsageError);
}

TEST(MarginContract, MatrixVectorProduct) {
  DenseTensor x({2, 2}, {1, 0, 0, 1});
  std::vector<Eigen::VectorXd> others{Eigen::Vector2d(1, 1)};
  EXPECT_EQ(margin_contract(x, 0, others), Eigen::Vector2d(1, 1));
}

TEST(MarginContract, ZeroTensor) {
  std::vector<Eigen::VectorXd> others{Eigen::Vector3d(1, 2, 3)};
  EXPECT_TRUE(margin_contract(DenseTensor({2, 3}), 0, others).isZero(0.0));
}

TEST(MarginContract, BilinearWithSummandProject) {
  RngStream s(16, 0);
  const DenseTensor x = random_tensor(s, {3, 4, 5});
  const std::vector<Eigen::VectorXd> all{random_matrix(s, 3, 1), random_matrix(s, 4, 1),
                                         random_matrix(s, 5, 1)};
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<Eigen::VectorXd> others;
    for (std::size_t k = 0; k < 3; ++k) {
      if (k != j) others.push_back(all[k]);
    }
    const Eigen::VectorXd m = margin_contract(x, j, others);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<Eigen::VectorXd> full = all;
      full[j] = random_matrix(s, static_cast<Eigen::Index>(x.dim(j)), 1);
      const double expect = summand_project(x, full);
      EXPECT_NEAR(full[j].dot(m), expect, 1e-12 * std::max(1.0, std::abs(expect)));
    }
  }
}

TEST(MarginContract, LinearInTheTensor) {
  RngStream s(17, 0);
  const DenseTensor x = random_tensor(s, {3, 4, 2});
  const DenseTensor y = random_tensor(s, {3, 4, 2});
  DenseTensor sum(x.dims());
  sum.vec() = x.vec() + y.vec();
  const std::vector<Eigen::VectorXd> others{random_matrix(s, 3, 1), random_matrix(s, 2, 1)};
  const Eigen::VectorXd lhs = margin_contract(sum, 1, others);
  const Eigen::VectorXd rhs = margin_contract(x, 1, others) + margin_contract(y, 1, others);
  EXPECT_LT((lhs - rhs).norm(), 1e-12 * (1.0 + rhs.norm()));
}

TEST(MarginContract, ShapeErrors) {
  DenseTensor x({2, 3});
  std::vector<Eigen::VectorXd> wrong{Eigen::Vector2d(1, 1)};
  EXPECT_THROW(margin_contract(x, 0, wrong), UsageError);
  EXPECT_THROW(margin_contract(x, 2, wrong), UsageError);
}

}  // namespace
}  // namespace btrt
