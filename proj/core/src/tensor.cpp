#include "cpest/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace cpest {

namespace {

void check_mode(int mode) {
  if (mode < 1 || mode > 3) {
    throw ArgumentError("tensor mode must be 1, 2 or 3, got " + std::to_string(mode));
  }
}

void check_same_dims(const Tensor3C& a, const Tensor3C& b) {
  if (a.dims() != b.dims()) throw ArgumentError("tensor dimensions differ");
}

// Smallest singular value of the selected columns.
double min_singular_value(const CMatrix& m, const std::vector<Index>& cols) {
  CMatrix sub(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) sub.col(static_cast<Index>(j)) = m.col(cols[j]);
  if (sub.cols() > sub.rows()) return 0.0;
  Eigen::JacobiSVD<CMatrix> svd(sub);
  return svd.singularValues().minCoeff();
}

double max_singular_value(const CMatrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<CMatrix> svd(m);
  return svd.singularValues()(0);
}

}  // namespace

Tensor3C::Tensor3C(const Dims& dims) : dims_(dims) {
  for (Index d : dims) {
    if (d < 1) throw ArgumentError("tensor dimensions must be positive");
  }
  data_ = CVector::Zero(dims[0] * dims[1] * dims[2]);
}

Tensor3C::Tensor3C(const Dims& dims, CVector data) : dims_(dims), data_(std::move(data)) {
  for (Index d : dims) {
    if (d < 1) throw ArgumentError("tensor dimensions must be positive");
  }
  if (data_.size() != dims[0] * dims[1] * dims[2]) {
    throw ArgumentError("tensor data length does not match I1*I2*I3");
  }
}

Index Tensor3C::dim(int mode) const {
  check_mode(mode);
  return dims_[static_cast<std::size_t>(mode - 1)];
}

Tensor3C& Tensor3C::operator+=(const Tensor3C& other) {
  check_same_dims(*this, other);
  data_ += other.data_;
  return *this;
}

Tensor3C& Tensor3C::operator-=(const Tensor3C& other) {
  check_same_dims(*this, other);
  data_ -= other.data_;
  return *this;
}

Tensor3C& Tensor3C::operator*=(cplx s) {
  data_ *= s;
  return *this;
}

Tensor3C operator+(Tensor3C a, const Tensor3C& b) { return a += b; }
Tensor3C operator-(Tensor3C a, const Tensor3C& b) { return a -= b; }
Tensor3C operator*(cplx s, Tensor3C a) { return a *= s; }

CMatrix unfold(const Tensor3C& t, int mode) {
  check_mode(mode);
  const auto [n1, n2, n3] = t.dims();
  switch (mode) {
    case 1:
      return Eigen::Map<const CMatrix>(t.data().data(), n1, n2 * n3);
    case 2: {
      CMatrix out(n2, n1 * n3);
      for (Index k = 0; k < n3; ++k)
        for (Index j = 0; j < n2; ++j)
          for (Index i = 0; i < n1; ++i) out(j, i + n1 * k) = t(i, j, k);
      return out;
    }
    default:
      return Eigen::Map<const CMatrix>(t.data().data(), n1 * n2, n3).transpose();
  }
}

Tensor3C fold(const CMatrix& m, int mode, const Tensor3C::Dims& dims) {
  check_mode(mode);
  const auto [n1, n2, n3] = dims;
  if (n1 < 1 || n2 < 1 || n3 < 1) throw ArgumentError("tensor dimensions must be positive");
  const Index rows = dims[static_cast<std::size_t>(mode - 1)];
  const Index cols = n1 * n2 * n3 / rows;
  if (m.rows() != rows || m.cols() != cols) {
    throw ArgumentError("fold: matrix is " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                        std::to_string(cols));
  }
  Tensor3C t(dims);
  switch (mode) {
    case 1:
      t.data() = Eigen::Map<const CVector>(m.data(), m.size());
      break;
    case 2:
      for (Index k = 0; k < n3; ++k)
        for (Index j = 0; j < n2; ++j)
          for (Index i = 0; i < n1; ++i) t(i, j, k) = m(j, i + n1 * k);
      break;
    default: {
      const CMatrix mt = m.transpose();
      t.data() = Eigen::Map<const CVector>(mt.data(), mt.size());
      break;
    }
  }
  return t;
}

CMatrix khatri_rao(const CMatrix& x, const CMatrix& y) {
  if (x.cols() != y.cols()) {
    throw ArgumentError("khatri_rao: column counts differ (" + std::to_string(x.cols()) +
                        " vs " + std::to_string(y.cols()) + ")");
  }
  const Index p = x.rows();
  const Index q = y.rows();
  CMatrix out(p * q, x.cols());
  for (Index r = 0; r < x.cols(); ++r)
    for (Index i = 0; i < p; ++i) out.col(r).segment(i * q, q) = x(i, r) * y.col(r);
  return out;
}

void CPModel::validate() const {
  if (a.cols() < 1) throw ArgumentError("CP model rank must be at least 1");
  if (b.cols() != a.cols() || c.cols() != a.cols()) {
    throw ArgumentError("CP factor matrices must share the column count");
  }
  if (a.rows() < 1 || b.rows() < 1 || c.rows() < 1) {
    throw ArgumentError("CP factor matrices must have at least one row");
  }
}

CPModel CPModel::select(const std::vector<Index>& components) const {
  CPModel out;
  const auto n = static_cast<Index>(components.size());
  out.a.resize(a.rows(), n);
  out.b.resize(b.rows(), n);
  out.c.resize(c.rows(), n);
  for (Index j = 0; j < n; ++j) {
    const Index r = components[static_cast<std::size_t>(j)];
    if (r < 0 || r >= rank()) throw ArgumentError("CPModel::select: component out of range");
    out.a.col(j) = a.col(r);
    out.b.col(j) = b.col(r);
    out.c.col(j) = c.col(r);
  }
  return out;
}

Tensor3C cp_reconstruct(const CPModel& m) {
  m.validate();
  // X_(1) = A (C kr B)^T, and the mode-1 unfolding is the storage layout.
  const CMatrix x1 = m.a * khatri_rao(m.c, m.b).transpose();
  return Tensor3C(m.dims(), Eigen::Map<const CVector>(x1.data(), x1.size()));
}

double frob_norm(const Tensor3C& t) { return t.data().norm(); }

FitResult relative_fit(const CPModel& m, const Tensor3C& t) {
  const Tensor3C model = cp_reconstruct(m);
  if (model.dims() != t.dims()) throw ArgumentError("relative_fit: model and tensor dims differ");
  const double residual = (t.data() - model.data()).norm();
  const double denom = t.data().norm();
  if (denom == 0.0) return {residual, true};
  return {residual / denom, false};
}

int k_rank(const CMatrix& m, double rel_tol) {
  if (m.size() == 0) throw ArgumentError("k_rank: empty matrix");
  if (m.cols() > kKRankMaxColumns) {
    throw CapabilityError("k_rank: " + std::to_string(m.cols()) +
                          " columns exceed the exhaustive limit of " +
                          std::to_string(kKRankMaxColumns) + "; use k_rank_sampled");
  }
  const double threshold = rel_tol * max_singular_value(m);
  if (threshold == 0.0) return 0;
  const Index n = m.cols();
  const Index kmax = std::min(m.rows(), n);
  int result = 0;
  for (Index k = 1; k <= kmax; ++k) {
    // Enumerate all k-subsets through a selection mask.
    std::vector<char> mask(static_cast<std::size_t>(n), 0);
    std::fill(mask.begin(), mask.begin() + k, 1);
    bool all_full = true;
    do {
      std::vector<Index> cols;
      for (Index j = 0; j < n; ++j)
        if (mask[static_cast<std::size_t>(j)]) cols.push_back(j);
      if (min_singular_value(m, cols) <= threshold) {
        all_full = false;
        break;
      }
    } while (std::prev_permutation(mask.begin(), mask.end()));
    if (!all_full) break;
    result = static_cast<int>(k);
  }
  return result;
}

int k_rank_sampled(const CMatrix& m, int samples, std::mt19937_64& rng, double rel_tol) {
  if (m.size() == 0) throw ArgumentError("k_rank_sampled: empty matrix");
  if (samples < 1) throw ArgumentError("k_rank_sampled: samples must be positive");
  const double threshold = rel_tol * max_singular_value(m);
  if (threshold == 0.0) return 0;
  const Index n = m.cols();
  const Index kmax = std::min(m.rows(), n);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  int result = 0;
  for (Index k = 1; k <= kmax; ++k) {
    for (int s = 0; s < samples; ++s) {
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<Index> cols(perm.begin(), perm.begin() + k);
      if (min_singular_value(m, cols) <= threshold) return result;
    }
    result = static_cast<int>(k);
  }
  return result;
}

bool kruskal_ok(const CMatrix& a, const CMatrix& b, const CMatrix& c, Index rank) {
  return k_rank(a) + k_rank(b) + k_rank(c) >= 2 * rank + 2;
}

}  // namespace cpest
