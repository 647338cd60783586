#pragma once

#include <vector>

#include "sbglm/types.hpp"

namespace sbglm {

/// Task regressors (T x K, shared across locations) and nuisance columns
/// (T x J). When the baseline is modeled as a spatial field, tasks.col(0)
/// is the constant column; otherwise the constant is one of the nuisance
/// columns.
struct TaskDesign {
  Mat tasks;
  Mat nuisance;
  double tr = 1.0;

  int n_time() const { return static_cast<int>(tasks.rows()); }
  /// Throws DimensionMismatch / InvalidArgument on ragged or non-finite input,
  /// or when no constant column is present in either block.
  void validate() const;
};

struct StimulusBlock {
  double onset = 0.0;     // seconds
  double duration = 0.0;  // seconds
};

/// Double-gamma canonical HRF sampled at 0, tr, 2 tr, ... < duration, scaled
/// to a peak value of 1 (response delay 6 s, undershoot delay 16 s, unit
/// dispersions, undershoot ratio 1/6).
Vec canonical_hrf(double tr, double duration = 32.0);

/// Binary stimulus of length T: 1 at scan times t * tr inside any block.
Vec block_stimulus(int n_time, double tr, const std::vector<StimulusBlock>& blocks);

/// Causal discrete convolution, truncated to the stimulus length.
Vec convolve_stimulus(const Vec& stimulus, const Vec& kernel);

struct Residualized {
  Mat y;  // T x N
  Mat x;  // T x K
};

/// Projects y and x onto the orthogonal complement of span(z).
/// Throws RankDeficientNuisance when z is not of full column rank.
Residualized residualize(const Mat& y, const Mat& x, const Mat& z);

/// AR(p) noise: y_t = sum_i phi_i y_{t-i} + e_t.
struct ArNoise {
  std::vector<double> phi;
  double xi = 1.0;              // marginal precision 1 / var(y_t)
  double innovation_var = 1.0;  // var(e_t)

  int order() const { return static_cast<int>(phi.size()); }
};

/// Biased (1/T) autocovariances of the demeaned series at lags 0..max_lag.
Vec sample_autocovariance(const Vec& series, int max_lag);

/// Exact autocovariances at lags 0..max_lag of a stationary AR process.
Vec ar_autocovariance(const std::vector<double>& phi, double innovation_var, int max_lag);

bool is_stationary(const std::vector<double>& phi);

/// Solves the Yule-Walker system from autocovariances acov[0..p].
/// Throws NonStationaryEstimate when the solution is not stationary.
ArNoise yule_walker_acov(const Vec& acov, int p);
ArNoise yule_walker(const Vec& series, int p);

/// Averages coefficients and precisions over locations.
ArNoise average_ar(const std::vector<ArNoise>& fits);

enum class InitialRows {
  Drop,   // the first p rows are removed after filtering
  Exact,  // the first p rows are whitened by the stationary covariance
};

struct Whitened {
  Mat y;
  Mat x;
};

/// Applies the AR filter a(L) = 1 - sum phi_i L^i to every column.
Mat ar_filter(const Mat& a, const ArNoise& ar, InitialRows mode = InitialRows::Drop);

/// Same transform applied to the data and to every design column.
Whitened prewhiten(const Mat& y, const Mat& x, const ArNoise& ar, InitialRows mode = InitialRows::Drop);

}  // namespace sbglm
