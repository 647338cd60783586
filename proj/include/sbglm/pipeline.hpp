#pragma once

#include <memory>
#include <vector>

#include "sbglm/classical.hpp"
#include "sbglm/design.hpp"
#include "sbglm/inla.hpp"
#include "sbglm/mesh.hpp"
#include "sbglm/types.hpp"

namespace sbglm {

/// T x 1 column of ones.
Mat intercept(int n_time);

/// Whitens y, X and Z with `ar` (first p rows dropped), projects out Z and
/// returns the sufficient statistics. The effective observation count is
/// (T - p - cols(Z)) N.
ModelData prepare_model_data(const Mat& y, const Mat& x, const Mat& z, const ArNoise& ar);

struct SubjectInput {
  Mat y;  // T x N
  Mat x;  // T x K
  Mat z;  // T x J nuisance
};

struct PreparedSubject {
  ArNoise ar;  // pooled estimate used for prewhitening
  ModelData data;
};

/// Pooled Yule-Walker AR(p) from per-location OLS residuals, then
/// prepare_model_data. ar_order = 0 skips prewhitening.
PreparedSubject prepare_subject(const SubjectInput& in, int ar_order = 1);

/// Mesh-level FEM operator shared by every subject on one geometry.
struct Geometry {
  TriMesh mesh;
  SpdeOperator spde;
  SpMat projector;  // data locations -> mesh vertices
};

Geometry make_geometry(TriMesh mesh);
Geometry lattice_geometry(const LatticeMask& mask, double fov_mm, int boundary_layers = 2);

std::shared_ptr<const LatentModel> make_model(const Geometry& geo, const PreparedSubject& subject,
                                              const HyperPrior& prior = {});

struct ClassicalOptions {
  double fwhm = 6.0;     // spatial smoothing before fitting
  int ar_order = 1;
  double q = 0.05;       // FDR level
  double alpha = 0.05;   // FWER level
  int n_perm = 1000;
  Seed seed = 1;
};

struct ClassicalResult {
  VoxelwiseFit fit;
  ArNoise ar;
  std::vector<std::vector<bool>> fdr;  // per task column
  std::vector<MaxTResult> fwer;        // per task column
};

/// Smooth, estimate a pooled AR model, fit every location with it, then BY
/// and max-t per task column. `kernel` may be empty (no smoothing).
ClassicalResult run_classical(const SubjectInput& in, const SpMat& kernel, const ClassicalOptions& opt = {});

}  // namespace sbglm
