#include "sbglm/sparse.hpp"

#include <algorithm>
#include <cmath>

#include "sbglm/error.hpp"

namespace sbglm {

bool is_symmetric(const SpMat& a, double rel_tol) {
  if (a.rows() != a.cols()) return false;
  const SpMat diff = a - SpMat(a.transpose());
  double scale = 0.0;
  for (int k = 0; k < a.outerSize(); ++k)
    for (SpMat::InnerIterator it(a, k); it; ++it) scale = std::max(scale, std::abs(it.value()));
  double worst = 0.0;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (SpMat::InnerIterator it(diff, k); it; ++it) worst = std::max(worst, std::abs(it.value()));
  return worst <= rel_tol * std::max(scale, 1e-300);
}

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> dense_pattern(const SpMat& a) {
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> p =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(a.rows(), a.cols(), false);
  for (int k = 0; k < a.outerSize(); ++k)
    for (SpMat::InnerIterator it(a, k); it; ++it) p(it.row(), it.col()) = true;
  return p;
}

SpMat block_diagonal(std::span<const SpMat> blocks) {
  Eigen::Index n = 0;
  std::size_t nnz = 0;
  for (const auto& b : blocks) {
    if (b.rows() != b.cols()) throw Error(Errc::DimensionMismatch, "block_diagonal: non-square block");
    n += b.rows();
    nnz += static_cast<std::size_t>(b.nonZeros());
  }
  std::vector<Triplet> trips;
  trips.reserve(nnz);
  Eigen::Index offset = 0;
  for (const auto& b : blocks) {
    for (int k = 0; k < b.outerSize(); ++k)
      for (SpMat::InnerIterator it(b, k); it; ++it)
        trips.emplace_back(static_cast<int>(offset + it.row()), static_cast<int>(offset + it.col()),
                           it.value());
    offset += b.rows();
  }
  SpMat out(n, n);
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

void SparseCholesky::analyze(const SpMat& pattern) {
  if (pattern.rows() != pattern.cols())
    throw Error(Errc::DimensionMismatch, "SparseCholesky: matrix is not square");
  llt_.analyzePattern(pattern);
  n_ = pattern.rows();
  analyzed_ = true;
  factorized_ = false;
}

void SparseCholesky::factorize(const SpMat& q) {
  if (!analyzed_) analyze(q);
  if (q.rows() != n_ || q.cols() != n_)
    throw Error(Errc::DimensionMismatch, "SparseCholesky: size differs from analyzed pattern");
  llt_.factorize(q);
  if (llt_.info() != Eigen::Success) {
    factorized_ = false;
    throw Error(Errc::NotPositiveDefinite, "sparse Cholesky factorization failed");
  }
  factorized_ = true;
}

double SparseCholesky::log_det() const {
  const auto& l = llt_.matrixL().nestedExpression();
  double s = 0.0;
  for (Eigen::Index j = 0; j < n_; ++j) s += std::log(l.coeff(j, j));
  return 2.0 * s;
}

Vec SparseCholesky::solve(const Vec& b) const {
  if (b.size() != n_) throw Error(Errc::DimensionMismatch, "SparseCholesky::solve: rhs size");
  return llt_.solve(b);
}

Mat SparseCholesky::solve(const Mat& b) const {
  if (b.rows() != n_) throw Error(Errc::DimensionMismatch, "SparseCholesky::solve: rhs rows");
  return llt_.solve(b);
}

Vec SparseCholesky::sample_zero_mean(const Vec& z) const {
  if (z.size() != n_) throw Error(Errc::DimensionMismatch, "SparseCholesky::sample: size");
  // x = P' L^{-T} P z, so an identity precision returns z itself
  Vec pz = llt_.permutationP() * z;
  Vec v = llt_.matrixU().solve(pz);
  return llt_.permutationPinv() * v;
}

Mat SparseCholesky::sample_columns(const Mat& z) const {
  if (z.rows() != n_) throw Error(Errc::DimensionMismatch, "SparseCholesky::sample: size");
  Mat pz = llt_.permutationP() * z;
  Mat v = llt_.matrixU().solve(pz);
  return llt_.permutationPinv() * v;
}

Eigen::Index SparseCholesky::factor_nonzeros() const {
  return llt_.matrixL().nestedExpression().nonZeros();
}

std::vector<double> SparseCholesky::takahashi_values() const {
  const auto& l = llt_.matrixL().nestedExpression();
  const int* outer = l.outerIndexPtr();
  const int* inner = l.innerIndexPtr();
  const double* val = l.valuePtr();
  // Eigen stores each column with the diagonal first and row indices ascending.
  // For column j, Z(i, j) = -(sum_k L(k, j) Z(i, k)) / L(j, j) over the column
  // pattern S; every pair (i, k) in S with i >= k is read once from column k of
  // Z, located through a scatter map of S.
  std::vector<double> z(static_cast<std::size_t>(outer[n_]), 0.0);
  std::vector<int> local(static_cast<std::size_t>(n_), -1);
  std::vector<double> acc;

  for (int j = static_cast<int>(n_) - 1; j >= 0; --j) {
    const int begin = outer[j] + 1;
    const int end = outer[j + 1];
    const int m = end - begin;
    const double ljj = val[outer[j]];
    acc.assign(static_cast<std::size_t>(m), 0.0);
    for (int t = 0; t < m; ++t) local[static_cast<std::size_t>(inner[begin + t])] = t;
    for (int t = 0; t < m; ++t) {
      const int k = inner[begin + t];
      const double lkj = val[begin + t];
      acc[static_cast<std::size_t>(t)] += lkj * z[static_cast<std::size_t>(outer[k])];
      for (int p = outer[k] + 1; p < outer[k + 1]; ++p) {
        const int u = local[static_cast<std::size_t>(inner[p])];
        if (u < 0) continue;
        const double zik = z[static_cast<std::size_t>(p)];
        acc[static_cast<std::size_t>(u)] += lkj * zik;
        acc[static_cast<std::size_t>(t)] += val[begin + u] * zik;
      }
    }
    double s = 0.0;
    for (int t = 0; t < m; ++t) {
      const double zij = -acc[static_cast<std::size_t>(t)] / ljj;
      z[static_cast<std::size_t>(begin + t)] = zij;
      s += val[begin + t] * zij;
      local[static_cast<std::size_t>(inner[begin + t])] = -1;
    }
    z[static_cast<std::size_t>(outer[j])] = 1.0 / (ljj * ljj) - s / ljj;
  }
  return z;
}

std::vector<double> SparseCholesky::selected_inverse_values() const {
  if (!factorized_) throw Error(Errc::FactorizationFailure, "selected inverse before factorize");
  return takahashi_values();
}

std::vector<int> SparseCholesky::positions(const SpMat& pattern) const {
  if (!factorized_) throw Error(Errc::FactorizationFailure, "positions before factorize");
  const auto& l = llt_.matrixL().nestedExpression();
  const auto& perm = llt_.permutationP().indices();
  std::vector<int> pos;
  pos.reserve(static_cast<std::size_t>(pattern.nonZeros()));
  for (int k = 0; k < pattern.outerSize(); ++k)
    for (SpMat::InnerIterator it(pattern, k); it; ++it) {
      int i = perm.size() > 0 ? perm[it.row()] : static_cast<int>(it.row());
      int j = perm.size() > 0 ? perm[it.col()] : static_cast<int>(it.col());
      if (i < j) std::swap(i, j);
      const int* first = l.innerIndexPtr() + l.outerIndexPtr()[j];
      const int* last = l.innerIndexPtr() + l.outerIndexPtr()[j + 1];
      const int* hit = std::lower_bound(first, last, i);
      pos.push_back(hit != last && *hit == i ? static_cast<int>(hit - l.innerIndexPtr()) : -1);
    }
  return pos;
}

Vec SparseCholesky::inverse_diagonal() const {
  if (!factorized_) throw Error(Errc::FactorizationFailure, "inverse_diagonal before factorize");
  const auto& l = llt_.matrixL().nestedExpression();
  const std::vector<double> z = takahashi_values();
  const auto& perm = llt_.permutationP().indices();
  Vec d(n_);
  for (Eigen::Index i = 0; i < n_; ++i) {
    const int pi = perm.size() > 0 ? perm[i] : static_cast<int>(i);
    d[i] = z[static_cast<std::size_t>(l.outerIndexPtr()[pi])];
  }
  return d;
}

SpMat SparseCholesky::selected_inverse() const {
  if (!factorized_) throw Error(Errc::FactorizationFailure, "selected_inverse before factorize");
  const auto& l = llt_.matrixL().nestedExpression();
  const std::vector<double> z = takahashi_values();
  const auto& perm = llt_.permutationP().indices();
  // permuted index -> original index
  std::vector<int> orig(static_cast<std::size_t>(n_));
  for (Eigen::Index i = 0; i < n_; ++i)
    orig[static_cast<std::size_t>(perm.size() > 0 ? perm[i] : i)] = static_cast<int>(i);
  std::vector<Triplet> trips;
  trips.reserve(2 * z.size());
  for (int j = 0; j < n_; ++j) {
    for (int p = l.outerIndexPtr()[j]; p < l.outerIndexPtr()[j + 1]; ++p) {
      const int i = l.innerIndexPtr()[p];
      const int oi = orig[static_cast<std::size_t>(i)];
      const int oj = orig[static_cast<std::size_t>(j)];
      trips.emplace_back(oi, oj, z[static_cast<std::size_t>(p)]);
      if (i != j) trips.emplace_back(oj, oi, z[static_cast<std::size_t>(p)]);
    }
  }
  SpMat s(n_, n_);
  s.setFromTriplets(trips.begin(), trips.end());
  return s;
}

}  // namespace sbglm
