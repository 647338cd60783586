#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "sbglm/classical.hpp"
#include "sbglm/error.hpp"
#include "sbglm/mesh.hpp"

using namespace sbglm;

namespace {

Mat gaussian_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Mat m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

// Brute force: the largest k whose step-up threshold admits at least k p-values.
std::vector<bool> brute_force_by(const Vec& p, double q) {
  const auto m = p.size();
  double c = 0.0;
  for (int i = 1; i <= m; ++i) c += 1.0 / i;
  std::vector<bool> out(static_cast<std::size_t>(m), false);
  for (Eigen::Index k = m; k >= 1; --k) {
    const double thr = static_cast<double>(k) * q / (static_cast<double>(m) * c);
    if ((p.array() <= thr).count() >= k) {
      // reject the k smallest, which are exactly those at or below p_(k)
      std::vector<double> s(p.data(), p.data() + m);
      std::sort(s.begin(), s.end());
      for (Eigen::Index i = 0; i < m; ++i) out[static_cast<std::size_t>(i)] = p[i] <= s[static_cast<std::size_t>(k - 1)];
      return out;
    }
  }
  return out;
}

double ks_uniform(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) d = std::max({d, (i + 1) / n - u[i], u[i] - i / n});
  return d;
}

}  // namespace

TEST_CASE("smoothing kernel width and basic properties") {
  CHECK(fwhm_to_sigma(6.0) == doctest::Approx(2.5480).epsilon(1e-4));
  CHECK(fwhm_to_sigma(10.0) == doctest::Approx(4.2466).epsilon(1e-4));
  CHECK_THROWS_AS(fwhm_to_sigma(-1.0), Error);

  LatticeMask mask(6, 7, true);
  mask.set(0, 0, false);
  const SpMat id = smoothing_kernel(mask, 70.0, 0.0);
  CHECK(Mat(id).isIdentity());

  const SpMat k = smoothing_kernel(mask, 70.0, 15.0);
  const Mat kd(k);
  CHECK((kd.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(kd.minCoeff() >= 0.0);
  const Mat c = Mat::Constant(3, mask.count(), 2.5);
  CHECK((gaussian_smooth(c, k).array() - 2.5).abs().maxCoeff() < 1e-12);

  // repeated smoothing flattens a field on connected geometry
  std::mt19937_64 rng(1);
  Mat f = gaussian_matrix(1, mask.count(), rng);
  const double range0 = f.maxCoeff() - f.minCoeff();
  for (int i = 0; i < 300; ++i) f = gaussian_smooth(f, k);
  CHECK(f.maxCoeff() - f.minCoeff() < 1e-3 * range0);
}

TEST_CASE("Euclidean smoothing weights") {
  const std::vector<Eigen::Vector3d> pts{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
  const double fwhm = 2.0, s = fwhm_to_sigma(fwhm);
  const Mat k(smoothing_kernel(pts, fwhm));
  auto g = [&](double d) { return std::exp(-d * d / (2 * s * s)); };
  const double row0 = g(0) + g(1) + g(3);
  CHECK(k(0, 1) == doctest::Approx(g(1) / row0));
  CHECK(k(0, 2) == doctest::Approx(g(3) / row0));
  // 3 is beyond the 6 sigma support of fwhm 1
  const Mat narrow(smoothing_kernel(pts, 1.0));
  CHECK(narrow(0, 2) == 0.0);
}

TEST_CASE("graph-geodesic smoothing matches a shortest-path oracle") {
  LatticeMask mask(3, 3, true);
  mask.set(1, 1, false);  // ring: paths must go around the hole
  const TriMesh mesh = triangulate_lattice(mask, 30.0, 1);
  const double fwhm = 25.0, s = fwhm_to_sigma(fwhm);
  const Mat k(smoothing_kernel(mesh, fwhm));

  const int nv = mesh.n_vertices();
  Mat d = Mat::Constant(nv, nv, std::numeric_limits<double>::infinity());
  for (int i = 0; i < nv; ++i) d(i, i) = 0.0;
  for (const auto& e : mesh.edges()) {
    const double len = (mesh.vertices[e[0]] - mesh.vertices[e[1]]).norm();
    d(e[0], e[1]) = d(e[1], e[0]) = len;
  }
  for (int m = 0; m < nv; ++m)
    for (int i = 0; i < nv; ++i)
      for (int j = 0; j < nv; ++j) d(i, j) = std::min(d(i, j), d(i, m) + d(m, j));
  const auto data = mesh.interior_indices();
  const int n = static_cast<int>(data.size());
  Mat oracle(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double dij = d(data[i], data[j]);
      oracle(i, j) = dij <= 6 * s ? std::exp(-dij * dij / (2 * s * s)) : 0.0;
    }
  for (int i = 0; i < n; ++i) oracle.row(i) /= oracle.row(i).sum();
  CHECK((k - oracle).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("voxelwise regression examples") {
  Mat x(5, 1), y(5, 1);
  x << 1, 2, 3, 4, 5;
  y = 2.0 * x;
  const auto fit = fit_voxelwise(y, x, Mat(), 0);
  CHECK(fit.beta(0, 0) == doctest::Approx(2.0));
  CHECK(fit.se(0, 0) < 1e-12);
  CHECK(fit.dof == 4.0);

  // noiseless with an intercept and AR(1) estimation
  std::mt19937_64 rng(3);
  const Mat xs = gaussian_matrix(60, 2, rng);
  const Mat z = Mat::Ones(60, 1);
  Mat beta(2, 4);
  beta << 1, -2, 0.5, 0, 3, 1, 0, -1;
  const Mat ys = xs * beta + z * Mat::Constant(1, 4, 10.0);
  const auto exact = fit_voxelwise(ys, xs, z, 1);
  CHECK((exact.beta - beta.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(exact.se.maxCoeff() < 1e-8);

  CHECK_THROWS_AS(fit_voxelwise(ys, xs, xs.col(0), 1), Error);
  try {
    fit_voxelwise(ys, xs, xs.col(1), 0);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::RankDeficientDesign);
  }
}

TEST_CASE("voxelwise statistics match the textbook OLS formulas") {
  std::mt19937_64 rng(5);
  const Mat x = gaussian_matrix(40, 2, rng);
  const Mat z = Mat::Ones(40, 1);
  const Mat y = gaussian_matrix(40, 3, rng);
  const auto fit = fit_voxelwise(y, x, z, 0);
  Mat w(40, 3);
  w << x, z;
  const Mat g = (w.transpose() * w).inverse();
  for (int v = 0; v < 3; ++v) {
    const Vec b = g * w.transpose() * y.col(v);
    const double s2 = (y.col(v) - w * b).squaredNorm() / 37.0;
    for (int k = 0; k < 2; ++k) {
      CHECK(fit.beta(v, k) == doctest::Approx(b[k]).epsilon(1e-10));
      CHECK(fit.se(v, k) == doctest::Approx(std::sqrt(s2 * g(k, k))).epsilon(1e-10));
    }
  }
  CHECK(t_pvalue(0.0, 10.0) == doctest::Approx(1.0));
  CHECK(t_pvalue(2.228138852, 10.0) == doctest::Approx(0.05).epsilon(1e-6));
  CHECK(t_pvalue(1.959963985, std::numeric_limits<double>::infinity()) == doctest::Approx(0.05).epsilon(1e-6));

  // fixed AR model equals OLS on manually prewhitened data
  ArNoise ar;
  ar.phi = {0.4};
  const auto fixed = fit_voxelwise(y, x, z, ar);
  const Whitened wh = prewhiten(y.col(1), w, ar);
  const Vec b = wh.x.colPivHouseholderQr().solve(wh.y.col(0));
  CHECK(fixed.beta(1, 0) == doctest::Approx(b[0]).epsilon(1e-10));
  CHECK(fixed.dof == 40 - 1 - 3);
}

TEST_CASE("pure-noise p-values are uniform") {
  std::mt19937_64 rng(11);
  const int t = 100, n = 1000;
  Mat x(t, 1);
  for (int i = 0; i < t; ++i) x(i, 0) = (i / 10) % 2;
  Mat y = gaussian_matrix(t, n, rng);
  for (int i = 1; i < t; ++i) y.row(i) += 0.3 * y.row(i - 1);  // AR(1)-like noise
  const auto fit = fit_voxelwise(y, x, Mat::Ones(t, 1), 1);
  std::vector<double> p(fit.p.data(), fit.p.data() + n);
  for (double v : p) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(ks_uniform(p) < 1.63 / std::sqrt(static_cast<double>(n)));  // 1% critical value
}

TEST_CASE("Benjamini-Yekutieli examples and oracle") {
  const Vec p = (Vec(3) << 0.001, 0.02, 0.9).finished();
  CHECK(fdr_by(p, 0.05) == std::vector<bool>{true, false, false});
  CHECK(fdr_by(Vec::Ones(5), 0.05) == std::vector<bool>(5, false));
  CHECK(fdr_by(Vec::Constant(1, 0.04), 0.05) == std::vector<bool>{true});
  CHECK_THROWS_AS(fdr_by(p, 0.0), Error);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 2000; ++rep) {
    const int m = 1 + rep % 10;
    Vec pv(m);
    for (int i = 0; i < m; ++i) pv[i] = std::pow(u(rng), 4.0);  // skewed toward small values
    const auto by = fdr_by(pv, 0.1), bh = fdr_bh(pv, 0.1);
    CHECK(by == brute_force_by(pv, 0.1));
    for (int i = 0; i < m; ++i)
      if (by[i]) CHECK(bh[i]);
  }
}

TEST_CASE("upper quantile index") {
  CHECK(upper_quantile({3.0}, 0.05) == 3.0);
  std::vector<double> s;
  for (int i = 1; i <= 20; ++i) s.push_back(i);
  CHECK(upper_quantile(s, 0.05) == 19.0);
  CHECK(upper_quantile(s, 0.5) == 10.0);
}

TEST_CASE("max-t permutation threshold") {
  std::mt19937_64 rng(2);
  const int t = 40, n = 8;
  Mat x(t, 1);
  for (int i = 0; i < t; ++i) x(i, 0) = (i / 5) % 2;
  const Mat z = Mat::Ones(t, 1);
  const Mat y = gaussian_matrix(t, n, rng);
  const auto one = fwer_maxt(y, x, z, 0, 1, 0.05, 3);
  CHECK(one.null_max.size() == 1);
  CHECK(one.threshold == one.null_max[0]);

  const auto zero = fwer_maxt(Mat::Zero(t, n), x, z, 0, 20, 0.05, 3);
  for (bool r : zero.rejected) CHECK_FALSE(r);
  CHECK(zero.threshold == 0.0);

  // a strong signal is detected; determinism in the seed
  Mat ys = y;
  ys.col(2) += 3.0 * x.col(0);
  const auto a = fwer_maxt(ys, x, z, 0, 200, 0.05, 4);
  const auto b = fwer_maxt(ys, x, z, 0, 200, 0.05, 4);
  CHECK(a.rejected[2]);
  CHECK(a.null_max == b.null_max);
}

TEST_CASE("max-t family-wise error calibration on pure noise") {
  std::mt19937_64 rng(17);
  const int t = 50, n = 10, reps = 200;
  Mat x(t, 1);
  for (int i = 0; i < t; ++i) x(i, 0) = (i / 5) % 2;
  const Mat z = Mat::Ones(t, 1);
  int errors = 0;
  for (int r = 0; r < reps; ++r) {
    const Mat y = gaussian_matrix(t, n, rng);
    const auto res = fwer_maxt(y, x, z, 0, 200, 0.05, static_cast<Seed>(r + 1));
    errors += std::any_of(res.rejected.begin(), res.rejected.end(), [](bool v) { return v; });
  }
  const double rate = static_cast<double>(errors) / reps;
  CHECK(rate > 0.02);
  CHECK(rate < 0.10);
}

TEST_CASE("group precision weighting") {
  Mat b(2, 1), s(2, 1);
  b << 1, 3;
  s << 1, 1;
  const auto g = group_voxelwise(b, s);
  CHECK(g.beta(0, 0) == doctest::Approx(2.0));
  CHECK(g.se(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));

  Mat b3(3, 2), s3(3, 2);
  b3 << 1, 4, 2, 5, 6, 0;
  s3 << 2, 1, 2, 1, 2, std::numeric_limits<double>::infinity();
  const auto g3 = group_voxelwise(b3, s3);
  CHECK(g3.beta(0, 0) == doctest::Approx(3.0));  // equal variances: plain mean
  CHECK(g3.beta(1, 0) == doctest::Approx(4.5));  // infinite variance: zero weight
  CHECK_THROWS_AS(group_voxelwise(b.topRows(1), s.topRows(1)), Error);
  CHECK_THROWS_AS(group_voxelwise(b, s3.leftCols(1)), Error);

  const auto mt = fwer_maxt_group(b3, s3, 50, 0.05, 1);
  CHECK(mt.null_max.size() == 50);
  CHECK(mt.rejected.size() == 2);
}

TEST_CASE("pooled AR estimate and fixed-AR max-t") {
  std::mt19937_64 rng(23);
  const int t = 200, n = 300;
  Mat x(t, 1);
  for (int i = 0; i < t; ++i) x(i, 0) = (i / 10) % 2;
  const Mat z = Mat::Ones(t, 1);
  Mat e = gaussian_matrix(t, n, rng);
  for (int i = 1; i < t; ++i) e.row(i) += 0.3 * e.row(i - 1);
  const ArNoise ar = pooled_ar(e, x, z, 1);
  REQUIRE(ar.order() == 1);
  CHECK(ar.phi[0] == doctest::Approx(0.3).epsilon(0.1));
  const auto res = fwer_maxt(e, x, z, 0, 50, 0.05, 1, ar);
  CHECK(res.null_max.size() == 50);
  CHECK(res.threshold > 2.0);
}
