#pragma once

// Dense third-order complex tensors and the CP (CANDECOMP/PARAFAC) algebra
// built on them.
//
// Storage is column-major with the first index fastest:
//   X(i1, i2, i3) lives at data[i1 + I1 * (i2 + I2 * i3)]   (0-based)
// which makes the mode-1 unfolding a plain reshape and makes data() equal to
// vec(X_(3)^T). Unfoldings put earlier modes fastest in the column index:
//   mode 1: column i2 + I2 * i3
//   mode 2: column i1 + I1 * i3
//   mode 3: column i1 + I1 * i2
// Khatri-Rao products use the matching row order, so that
//   X_(1) = A (C kr B)^T,  X_(2) = B (C kr A)^T,  X_(3) = C (B kr A)^T.

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "cpest/types.hpp"

namespace cpest {

class Tensor3C {
 public:
  using Dims = std::array<Index, 3>;

  Tensor3C() = default;
  /// Zero tensor of the given shape.
  explicit Tensor3C(const Dims& dims);
  Tensor3C(const Dims& dims, CVector data);

  const Dims& dims() const noexcept { return dims_; }
  /// Size along a 1-based mode.
  Index dim(int mode) const;
  Index size() const noexcept { return data_.size(); }

  cplx& operator()(Index i1, Index i2, Index i3) {
    return data_[i1 + dims_[0] * (i2 + dims_[1] * i3)];
  }
  const cplx& operator()(Index i1, Index i2, Index i3) const {
    return data_[i1 + dims_[0] * (i2 + dims_[1] * i3)];
  }

  const CVector& data() const noexcept { return data_; }
  CVector& data() noexcept { return data_; }

  double squared_norm() const { return data_.squaredNorm(); }

  Tensor3C& operator+=(const Tensor3C& other);
  Tensor3C& operator-=(const Tensor3C& other);
  Tensor3C& operator*=(cplx s);

  friend bool operator==(const Tensor3C& a, const Tensor3C& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Dims dims_{0, 0, 0};
  CVector data_;
};

Tensor3C operator+(Tensor3C a, const Tensor3C& b);
Tensor3C operator-(Tensor3C a, const Tensor3C& b);
Tensor3C operator*(cplx s, Tensor3C a);

/// Mode-n matricization, n in {1,2,3}. Throws ArgumentError otherwise.
CMatrix unfold(const Tensor3C& t, int mode);

/// Inverse of unfold for the same mode and dims.
Tensor3C fold(const CMatrix& m, int mode, const Tensor3C::Dims& dims);

/// Column-wise Kronecker product: column r is x_r (x) y_r, row of x_p*y_q is
/// q + p*Q (0-based).
CMatrix khatri_rao(const CMatrix& x, const CMatrix& y);

/// Rank-R CP model. Component weights are folded into the factor columns.
struct CPModel {
  CMatrix a;  // I1 x R
  CMatrix b;  // I2 x R
  CMatrix c;  // I3 x R

  Index rank() const noexcept { return a.cols(); }
  Tensor3C::Dims dims() const noexcept { return {a.rows(), b.rows(), c.rows()}; }
  /// Throws ArgumentError if the column counts disagree or R == 0.
  void validate() const;
  /// Model restricted to the listed components, in order.
  CPModel select(const std::vector<Index>& components) const;
};

Tensor3C cp_reconstruct(const CPModel& m);

double frob_norm(const Tensor3C& t);

struct FitResult {
  double value = 0.0;
  /// True when ||t|| == 0 and `value` is the absolute residual norm instead.
  bool absolute = false;
};

/// ||t - cp_reconstruct(m)||_F / ||t||_F.
FitResult relative_fit(const CPModel& m, const Tensor3C& t);

/// Largest column count handled by the exhaustive k-rank search.
inline constexpr Index kKRankMaxColumns = 8;
/// Subset is full rank if its smallest singular value exceeds this times the
/// largest singular value of the whole matrix.
inline constexpr double kKRankRelTol = 1e-10;

/// Kruskal rank by exhaustive subset enumeration. Throws CapabilityError above
/// kKRankMaxColumns columns; use k_rank_sampled there.
int k_rank(const CMatrix& m, double rel_tol = kKRankRelTol);

/// Upper estimate of the k-rank testing `samples` random subsets per size.
int k_rank_sampled(const CMatrix& m, int samples, std::mt19937_64& rng,
                   double rel_tol = kKRankRelTol);

/// Kruskal's uniqueness condition k_A + k_B + k_C >= 2R + 2.
bool kruskal_ok(const CMatrix& a, const CMatrix& b, const CMatrix& c, Index rank);

}  // namespace cpest
