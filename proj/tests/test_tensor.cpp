#include <gtest/gtest.h>

#include "cpest/tensor.hpp"
#include "test_util.hpp"

using namespace cpest;
using cpest::testing::outer_sum;
using cpest::testing::random_matrix;
using cpest::testing::random_model;
using cpest::testing::random_tensor;
using cpest::testing::rel_err;

namespace {

// Column index of each unfolding written out from the layout contract.
CMatrix unfold_oracle(const Tensor3C& t, int mode) {
  const auto [n1, n2, n3] = t.dims();
  CMatrix m;
  if (mode == 1) m.resize(n1, n2 * n3);
  if (mode == 2) m.resize(n2, n1 * n3);
  if (mode == 3) m.resize(n3, n1 * n2);
  for (Index k = 0; k < n3; ++k)
    for (Index j = 0; j < n2; ++j)
      for (Index i = 0; i < n1; ++i) {
        if (mode == 1) m(i, j + n2 * k) = t(i, j, k);
        if (mode == 2) m(j, i + n1 * k) = t(i, j, k);
        if (mode == 3) m(k, i + n1 * j) = t(i, j, k);
      }
  return m;
}

}  // namespace

TEST(Tensor, StorageIsFirstIndexFastest) {
  Tensor3C t({2, 3, 4});
  t(1, 2, 3) = cplx(5.0, -1.0);
  EXPECT_EQ(t.data()[1 + 2 * (2 + 3 * 3)], cplx(5.0, -1.0));
  EXPECT_EQ(t.dim(1), 2);
  EXPECT_EQ(t.dim(3), 4);
  EXPECT_THROW(t.dim(4), ArgumentError);
}

TEST(Tensor, UnfoldMatchesIndexFormula) {
  std::mt19937_64 rng(1);
  const Tensor3C t = random_tensor(rng, {3, 4, 5});
  for (int mode = 1; mode <= 3; ++mode) EXPECT_EQ(unfold(t, mode), unfold_oracle(t, mode));
  EXPECT_THROW(unfold(t, 0), ArgumentError);
}

TEST(Tensor, FoldUnfoldRoundTripIsExact) {
  std::mt19937_64 rng(2);
  for (const Tensor3C::Dims dims : {Tensor3C::Dims{1, 1, 1}, Tensor3C::Dims{2, 5, 3},
                                    Tensor3C::Dims{6, 6, 6}, Tensor3C::Dims{7, 1, 4}}) {
    const Tensor3C t = random_tensor(rng, dims);
    for (int mode = 1; mode <= 3; ++mode) EXPECT_TRUE(fold(unfold(t, mode), mode, dims) == t);
  }
}

TEST(Tensor, FoldRejectsWrongShape) {
  EXPECT_THROW(fold(CMatrix::Zero(3, 4), 1, {3, 2, 3}), ArgumentError);
}

TEST(Tensor, KhatriRaoMatchesNestedLoops) {
  std::mt19937_64 rng(3);
  const CMatrix x = random_matrix(rng, 4, 3);
  const CMatrix y = random_matrix(rng, 5, 3);
  const CMatrix kr = khatri_rao(x, y);
  ASSERT_EQ(kr.rows(), 20);
  for (Index r = 0; r < 3; ++r)
    for (Index p = 0; p < 4; ++p)
      for (Index q = 0; q < 5; ++q) EXPECT_EQ(kr(q + p * 5, r), x(p, r) * y(q, r));
  EXPECT_THROW(khatri_rao(x, random_matrix(rng, 5, 2)), ArgumentError);
}

TEST(Tensor, KhatriRaoColumnIsKronecker) {
  std::mt19937_64 rng(4);
  const CMatrix x = random_matrix(rng, 3, 2);
  const CMatrix y = random_matrix(rng, 2, 2);
  const CMatrix kr = khatri_rao(x, y);
  for (Index r = 0; r < 2; ++r) {
    CVector kron(6);
    for (Index p = 0; p < 3; ++p) kron.segment(2 * p, 2) = x(p, r) * y.col(r);
    EXPECT_LT(rel_err(kr.col(r), kron), 1e-15);
  }
}

TEST(Tensor, ReconstructMatchesOuterProducts) {
  std::mt19937_64 rng(5);
  const CPModel m = random_model(rng, {4, 3, 5}, 3);
  EXPECT_LT(rel_err(cp_reconstruct(m).data(), outer_sum(m).data()), 1e-14);
}

TEST(Tensor, UnfoldingIdentities) {
  std::mt19937_64 rng(6);
  const CPModel m = random_model(rng, {4, 6, 5}, 3);
  const Tensor3C x = outer_sum(m);
  EXPECT_LT(rel_err(unfold(x, 1), m.a * khatri_rao(m.c, m.b).transpose()), 1e-12);
  EXPECT_LT(rel_err(unfold(x, 2), m.b * khatri_rao(m.c, m.a).transpose()), 1e-12);
  EXPECT_LT(rel_err(unfold(x, 3), m.c * khatri_rao(m.b, m.a).transpose()), 1e-12);
}

TEST(Tensor, ModelValidation) {
  CPModel bad{CMatrix::Zero(3, 2), CMatrix::Zero(3, 1), CMatrix::Zero(3, 2)};
  EXPECT_THROW(bad.validate(), ArgumentError);
  EXPECT_THROW(cp_reconstruct(bad), ArgumentError);
  CPModel empty{CMatrix(3, 0), CMatrix(3, 0), CMatrix(3, 0)};
  EXPECT_THROW(empty.validate(), ArgumentError);
}

TEST(Tensor, SelectKeepsRequestedComponents) {
  std::mt19937_64 rng(7);
  const CPModel m = random_model(rng, {3, 3, 3}, 4);
  const CPModel s = m.select({2, 0});
  ASSERT_EQ(s.rank(), 2);
  EXPECT_EQ(s.a.col(0), m.a.col(2));
  EXPECT_EQ(s.c.col(1), m.c.col(0));
}

TEST(Tensor, RelativeFit) {
  std::mt19937_64 rng(8);
  const CPModel m = random_model(rng, {3, 4, 2}, 2);
  const Tensor3C t = cp_reconstruct(m);
  EXPECT_LT(relative_fit(m, t).value, 1e-15);
  const FitResult zero = relative_fit(m, Tensor3C({3, 4, 2}));
  EXPECT_TRUE(zero.absolute);
  EXPECT_NEAR(zero.value, t.data().norm(), 1e-12);
}

TEST(Tensor, ArithmeticOperators) {
  std::mt19937_64 rng(9);
  const Tensor3C a = random_tensor(rng, {2, 2, 2});
  const Tensor3C b = random_tensor(rng, {2, 2, 2});
  EXPECT_LT(rel_err((a + b - b).data(), a.data()), 1e-15);
  EXPECT_LT(rel_err((cplx(2.0, 0.0) * a).data(), (a + a).data()), 1e-15);
  Tensor3C c({2, 2, 3});
  EXPECT_THROW(c += a, ArgumentError);
}

TEST(KRank, HandBuiltCases) {
  EXPECT_EQ(k_rank(CMatrix::Identity(4, 4)), 4);
  CMatrix dup = CMatrix::Identity(3, 3);
  dup.col(2) = dup.col(0) * cplx(0.0, 2.0);
  EXPECT_EQ(k_rank(dup), 1);  // columns 0 and 2 are parallel
  CMatrix zero_col = CMatrix::Identity(3, 3);
  zero_col.col(1).setZero();
  EXPECT_EQ(k_rank(zero_col), 0);
  // Three generic vectors in C^2: any two independent, all three dependent.
  CMatrix wide(2, 3);
  wide << 1.0, 0.0, 1.0, 0.0, 1.0, 1.0;
  EXPECT_EQ(k_rank(wide), 2);
}

TEST(KRank, BoundedByRank) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const CMatrix x = random_matrix(rng, 3, 5) * random_matrix(rng, 5, 6);
    const int kr = k_rank(x);
    const Index rank = Eigen::FullPivLU<CMatrix>(x).rank();
    EXPECT_LE(kr, rank);
    EXPECT_LE(rank, 3);
  }
}

TEST(KRank, CapabilityLimit) {
  EXPECT_THROW(k_rank(CMatrix::Identity(9, 9)), CapabilityError);
  std::mt19937_64 rng(11);
  EXPECT_EQ(k_rank_sampled(CMatrix::Identity(12, 12), 20, rng), 12);
}

TEST(KRank, KruskalCondition) {
  std::mt19937_64 rng(12);
  // Generic 6 x 4 factors: k = 4 each, 12 >= 10.
  EXPECT_TRUE(kruskal_ok(random_matrix(rng, 6, 4), random_matrix(rng, 6, 4),
                         random_matrix(rng, 6, 4), 4));
  // K = 1 caps k_C at 1: 4 + 4 + 1 < 10.
  EXPECT_FALSE(kruskal_ok(random_matrix(rng, 6, 4), random_matrix(rng, 6, 4),
                          random_matrix(rng, 1, 4), 4));
}
