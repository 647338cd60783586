#include "sbglm/pipeline.hpp"

#include "sbglm/error.hpp"
#include "sbglm/fem.hpp"

namespace sbglm {

Mat intercept(int n_time) { return Mat::Ones(n_time, 1); }

ModelData prepare_model_data(const Mat& y, const Mat& x, const Mat& z, const ArNoise& ar) {
  if (y.rows() != x.rows() || (z.size() > 0 && z.rows() != y.rows()))
    throw Error(Errc::DimensionMismatch, "y, X and Z must have the same number of rows");
  const Whitened w = prewhiten(y, x, ar, InitialRows::Drop);
  Mat yr = w.y, xr = w.x;
  Eigen::Index nz = 0;
  if (z.cols() > 0) {
    const Mat zw = ar_filter(z, ar, InitialRows::Drop);
    auto r = residualize(w.y, w.x, zw);
    yr = std::move(r.y);
    xr = std::move(r.x);
    nz = z.cols();
  }
  const double n_obs = static_cast<double>((yr.rows() - nz) * yr.cols());
  return summarize(yr, xr, n_obs);
}

PreparedSubject prepare_subject(const SubjectInput& in, int ar_order) {
  PreparedSubject out;
  if (ar_order > 0) out.ar = pooled_ar(in.y, in.x, in.z, ar_order);
  out.data = prepare_model_data(in.y, in.x, in.z, out.ar);
  return out;
}

Geometry make_geometry(TriMesh mesh) {
  Geometry g;
  g.spde = SpdeOperator(mass_matrix(mesh), stiffness_matrix(mesh));
  g.projector = mesh.data_projector();
  g.mesh = std::move(mesh);
  return g;
}

Geometry lattice_geometry(const LatticeMask& mask, double fov_mm, int boundary_layers) {
  return make_geometry(triangulate_lattice(mask, fov_mm, boundary_layers));
}

std::shared_ptr<const LatentModel> make_model(const Geometry& geo, const PreparedSubject& subject,
                                              const HyperPrior& prior) {
  std::vector<double> ar;
  for (double phi : subject.ar.phi) ar.push_back(ar_to_transform(phi));
  return std::make_shared<const LatentModel>(geo.spde, geo.projector, subject.data, prior, std::move(ar));
}

ClassicalResult run_classical(const SubjectInput& in, const SpMat& kernel, const ClassicalOptions& opt) {
  const Mat y = kernel.size() > 0 ? gaussian_smooth(in.y, kernel) : in.y;
  ClassicalResult res;
  if (opt.ar_order > 0) res.ar = pooled_ar(y, in.x, in.z, opt.ar_order);
  res.fit = fit_voxelwise(y, in.x, in.z, res.ar);
  for (Eigen::Index k = 0; k < in.x.cols(); ++k) {
    res.fdr.push_back(fdr_by(res.fit.p.col(k), opt.q));
    if (opt.n_perm > 0)
      res.fwer.push_back(
          fwer_maxt(y, in.x, in.z, static_cast<int>(k), opt.n_perm, opt.alpha, opt.seed + static_cast<Seed>(k), res.ar));
  }
  return res;
}

}  // namespace sbglm
