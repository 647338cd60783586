#pragma once

#include <vector>

#include "sbglm/design.hpp"
#include "sbglm/mesh.hpp"
#include "sbglm/types.hpp"

namespace sbglm {

/// sigma = fwhm / sqrt(8 ln 2).
double fwhm_to_sigma(double fwhm);

/// Row-stochastic Gaussian kernel over points with Euclidean distances,
/// truncated at 6 sigma. fwhm = 0 gives the identity.
SpMat smoothing_kernel(const std::vector<Eigen::Vector3d>& points, double fwhm);

/// As above with graph-geodesic distances (shortest paths along mesh edges)
/// between the data locations of `mesh`.
SpMat smoothing_kernel(const TriMesh& mesh, double fwhm);

/// Lattice data locations (in-mask cell centers) with Euclidean distances.
SpMat smoothing_kernel(const LatticeMask& mask, double fov_mm, double fwhm);

/// Smooths every row (time point) of a T x N data matrix: Y K'.
Mat gaussian_smooth(const Mat& data, const SpMat& kernel);

struct VoxelwiseFit {
  Mat beta;  // N x K
  Mat se;
  Mat t;
  Mat p;     // two-sided
  double dof = 0.0;
  std::vector<ArNoise> ar;  // per-location noise estimate (empty without prewhitening)

  int n_locations() const { return static_cast<int>(beta.rows()); }
};

/// Two-sided p-value of a t statistic (dof = inf: normal).
double t_pvalue(double t, double dof);

/// Per-location OLS of y (T x N) on [X Z] after prewhitening with an AR(p)
/// model estimated from each location's OLS residuals (ar_order = 0: none).
/// Statistics are reported for the K task columns. Throws RankDeficientDesign.
VoxelwiseFit fit_voxelwise(const Mat& y, const Mat& x, const Mat& z, int ar_order = 1);

/// Same, with one noise model for every location.
VoxelwiseFit fit_voxelwise(const Mat& y, const Mat& x, const Mat& z, const ArNoise& ar);

/// Benjamini-Yekutieli (dependent tests) and Benjamini-Hochberg step-up sets.
std::vector<bool> fdr_by(const Vec& pvalues, double q);
std::vector<bool> fdr_bh(const Vec& pvalues, double q);

struct MaxTResult {
  double threshold = 0.0;
  std::vector<double> null_max;   // permutation distribution of max |t|
  std::vector<bool> rejected;     // |t| > threshold
};

/// (1 - alpha) quantile of a sample: the value at index ceil((1 - alpha) n) - 1
/// of the sorted sample.
double upper_quantile(std::vector<double> sample, double alpha);

/// Max-|t| permutation FWER control for task column k. Each iteration
/// reorders the prewhitened reduced-model residuals (nuisance-only fit) of
/// every location with one shared permutation and refits.
MaxTResult fwer_maxt(const Mat& y, const Mat& x, const Mat& z, int field, int n_perm, double alpha, Seed seed,
                     int ar_order = 1);

MaxTResult fwer_maxt(const Mat& y, const Mat& x, const Mat& z, int field, int n_perm, double alpha, Seed seed,
                     const ArNoise& ar);

/// Yule-Walker AR(p) of each location's OLS residuals on [X Z], averaged
/// over locations.
ArNoise pooled_ar(const Mat& y, const Mat& x, const Mat& z, int ar_order = 1);

/// Fixed-effects group fit: per location the inverse-variance weighted mean
/// of subject estimates (M x N), with normal p-values.
VoxelwiseFit group_voxelwise(const Mat& beta, const Mat& se);

/// Group max-|t| by sign flipping subjects (shared across locations).
MaxTResult fwer_maxt_group(const Mat& beta, const Mat& se, int n_perm, double alpha, Seed seed);

}  // namespace sbglm
