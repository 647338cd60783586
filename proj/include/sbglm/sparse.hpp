#pragma once

#include <span>
#include <vector>

#include <Eigen/SparseCholesky>

#include "sbglm/types.hpp"

namespace sbglm {

/// True when |A - A'| <= rel_tol * max|A| entrywise.
bool is_symmetric(const SpMat& a, double rel_tol = 1e-12);

/// Dense copy of the pattern of `a` as a 0/1 boolean matrix (small sizes only).
Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> dense_pattern(const SpMat& a);

/// Block-diagonal assembly of square sparse blocks.
SpMat block_diagonal(std::span<const SpMat> blocks);

/// Sparse Cholesky factorization Q = P' L L' P with a fill-reducing (AMD)
/// ordering. The symbolic analysis is done once by analyze() and reused by
/// every subsequent factorize() on a matrix with the same pattern.
class SparseCholesky {
 public:
  SparseCholesky() = default;
  explicit SparseCholesky(const SpMat& q) { compute(q); }

  void analyze(const SpMat& pattern);
  /// Throws Error(NotPositiveDefinite) when the numeric factorization fails.
  void factorize(const SpMat& q);
  void compute(const SpMat& q) {
    analyze(q);
    factorize(q);
  }

  bool analyzed() const { return analyzed_; }
  bool factorized() const { return factorized_; }
  Eigen::Index size() const { return n_; }

  double log_det() const;
  Vec solve(const Vec& b) const;
  Mat solve(const Mat& b) const;

  /// Maps iid standard normals z to a draw from N(0, Q^{-1}) as P' L^{-T} P z.
  Vec sample_zero_mean(const Vec& z) const;
  /// Column-wise version for a block of draws.
  Mat sample_columns(const Mat& z) const;

  /// Diagonal of Q^{-1} by the Takahashi recursions on the factor pattern.
  Vec inverse_diagonal() const;

  /// Entries of Q^{-1} on the pattern of L (+ transpose), in the original
  /// (unpermuted) index space. The returned matrix stores both triangles.
  SpMat selected_inverse() const;

  /// Raw Takahashi values, aligned with the nonzeros of the permuted factor.
  /// Combine with positions() to read entries of Q^{-1}.
  std::vector<double> selected_inverse_values() const;

  /// For each stored entry of `pattern` (in its value order), the index of the
  /// matching entry in selected_inverse_values(), or -1 when (i, j) is not on
  /// the factor pattern. Valid for every factorization sharing the analysis.
  std::vector<int> positions(const SpMat& pattern) const;

  /// Number of nonzeros in the factor, mostly for diagnostics.
  Eigen::Index factor_nonzeros() const;

 private:
  using Llt = Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>>;

  // Takahashi values on the permuted factor pattern (lower triangle, column-major).
  std::vector<double> takahashi_values() const;

  Llt llt_;
  Eigen::Index n_ = 0;
  bool analyzed_ = false;
  bool factorized_ = false;
};

}  // namespace sbglm
