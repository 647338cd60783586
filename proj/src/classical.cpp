#include "sbglm/classical.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <random>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "sbglm/error.hpp"
#include "sbglm/parallel.hpp"

namespace sbglm {

namespace {

constexpr double kTruncation = 6.0;  // kernel support in sigmas

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ (stream * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

SpMat identity(Eigen::Index n) {
  SpMat k(n, n);
  k.setIdentity();
  return k;
}

// Row i holds exp(-d^2 / 2 sigma^2) for the listed (column, distance) pairs.
SpMat normalized_rows(Eigen::Index n, const std::vector<std::vector<std::pair<int, double>>>& nbrs, double sigma) {
  std::vector<Triplet> t;
  for (Eigen::Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const auto& [j, d] : nbrs[static_cast<std::size_t>(i)]) sum += std::exp(-d * d / (2 * sigma * sigma));
    for (const auto& [j, d] : nbrs[static_cast<std::size_t>(i)])
      t.emplace_back(static_cast<int>(i), j, std::exp(-d * d / (2 * sigma * sigma)) / sum);
  }
  SpMat k(n, n);
  k.setFromTriplets(t.begin(), t.end());
  return k;
}

ArNoise white_noise(double var) {
  ArNoise ar;
  ar.xi = var > 0 ? 1.0 / var : 1.0;
  ar.innovation_var = var;
  return ar;
}

// AR(p) estimate from the OLS residuals of y on w; white noise for exact fits.
ArNoise residual_ar(const Vec& y, const Mat& w, const Eigen::ColPivHouseholderQR<Mat>& qr, int p) {
  const Vec r = y - w * qr.solve(y);
  const Vec acov = sample_autocovariance(r, p);
  if (!(acov[0] > 1e-300)) {
    ArNoise ar = white_noise(0.0);
    ar.phi.assign(static_cast<std::size_t>(p), 0.0);
    return ar;
  }
  return yule_walker_acov(acov, p);
}

Eigen::ColPivHouseholderQR<Mat> checked_qr(const Mat& w) {
  Eigen::ColPivHouseholderQR<Mat> qr(w);
  qr.setThreshold(1e-10);
  if (qr.rank() < w.cols())
    throw Error(Errc::RankDeficientDesign, "design matrix has rank " + std::to_string(qr.rank()) + " < " +
                                               std::to_string(w.cols()));
  return qr;
}

Mat join(const Mat& x, const Mat& z) {
  if (z.size() == 0) return x;
  if (z.rows() != x.rows()) throw Error(Errc::DimensionMismatch, "task and nuisance designs differ in length");
  Mat w(x.rows(), x.cols() + z.cols());
  w << x, z;
  return w;
}

struct Ols {
  Vec beta, se;
  double rss = 0.0;
};

Ols ols(const Mat& w, const Vec& y, double dof) {
  const auto qr = checked_qr(w);
  Ols o;
  o.beta = qr.solve(y);
  o.rss = (y - w * o.beta).squaredNorm();
  const Mat g = (w.transpose() * w).ldlt().solve(Mat::Identity(w.cols(), w.cols()));
  o.se = (std::max(0.0, o.rss / dof) * g.diagonal()).cwiseSqrt();
  return o;
}

VoxelwiseFit fit_impl(const Mat& y, const Mat& x, const Mat& z, int ar_order, const ArNoise* fixed) {
  if (y.rows() != x.rows()) throw Error(Errc::DimensionMismatch, "data and design differ in length");
  if (ar_order < 0) throw Error(Errc::InvalidArgument, "AR order must be >= 0");
  const Mat w = join(x, z);
  const auto qr = checked_qr(w);
  const auto n = y.cols();
  const auto k = x.cols();
  const int p = fixed ? fixed->order() : ar_order;
  VoxelwiseFit fit;
  fit.dof = static_cast<double>(y.rows() - p - w.cols());
  if (!(fit.dof > 0)) throw Error(Errc::RankDeficientDesign, "no residual degrees of freedom");
  fit.beta.resize(n, k);
  fit.se.resize(n, k);
  fit.t.resize(n, k);
  fit.p.resize(n, k);
  if (p > 0) fit.ar.resize(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), 0, [&](std::size_t v) {
    const Vec yv = y.col(static_cast<Eigen::Index>(v));
    Ols o;
    if (p > 0) {
      const ArNoise ar = fixed ? *fixed : residual_ar(yv, w, qr, p);
      const Whitened wh = prewhiten(yv, w, ar);
      o = ols(wh.x, wh.y.col(0), fit.dof);
      fit.ar[v] = ar;
    } else {
      o = ols(w, yv, fit.dof);
    }
    const auto i = static_cast<Eigen::Index>(v);
    for (Eigen::Index c = 0; c < k; ++c) {
      fit.beta(i, c) = o.beta[c];
      fit.se(i, c) = o.se[c];
      fit.t(i, c) = o.se[c] > 0 ? o.beta[c] / o.se[c] : (o.beta[c] == 0 ? 0.0 : std::copysign(INFINITY, o.beta[c]));
      fit.p(i, c) = t_pvalue(fit.t(i, c), fit.dof);
    }
  });
  return fit;
}

std::vector<bool> step_up(const Vec& p, double q, double c) {
  if (!(q > 0.0 && q < 1.0)) throw Error(Errc::InvalidArgument, "q must lie in (0, 1)");
  const auto m = p.size();
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] < p[b]; });
  Eigen::Index last = 0;
  for (Eigen::Index i = 1; i <= m; ++i)
    if (p[order[static_cast<std::size_t>(i - 1)]] <= static_cast<double>(i) * q / (static_cast<double>(m) * c))
      last = i;
  std::vector<bool> out(static_cast<std::size_t>(m), false);
  for (Eigen::Index i = 0; i < last; ++i) out[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
  return out;
}

}  // namespace

double fwhm_to_sigma(double fwhm) {
  if (!(fwhm >= 0.0)) throw Error(Errc::InvalidArgument, "fwhm must be >= 0");
  return fwhm / std::sqrt(8.0 * std::log(2.0));
}

SpMat smoothing_kernel(const std::vector<Eigen::Vector3d>& points, double fwhm) {
  const double sigma = fwhm_to_sigma(fwhm);
  const auto n = static_cast<Eigen::Index>(points.size());
  if (sigma == 0.0) return identity(n);
  const double radius = kTruncation * sigma;
  std::vector<std::vector<std::pair<int, double>>> nbrs(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = 0; j < points.size(); ++j) {
      const double d = (points[i] - points[j]).norm();
      if (d <= radius) nbrs[i].emplace_back(static_cast<int>(j), d);
    }
  return normalized_rows(n, nbrs, sigma);
}

SpMat smoothing_kernel(const TriMesh& mesh, double fwhm) {
  const double sigma = fwhm_to_sigma(fwhm);
  const std::vector<int> data = mesh.interior_indices();
  const auto n = static_cast<Eigen::Index>(data.size());
  if (sigma == 0.0) return identity(n);
  const double radius = kTruncation * sigma;
  std::vector<std::vector<std::pair<int, double>>> adj(static_cast<std::size_t>(mesh.n_vertices()));
  for (const auto& e : mesh.edges()) {
    const double len = (mesh.vertices[static_cast<std::size_t>(e[0])] - mesh.vertices[static_cast<std::size_t>(e[1])]).norm();
    adj[static_cast<std::size_t>(e[0])].emplace_back(e[1], len);
    adj[static_cast<std::size_t>(e[1])].emplace_back(e[0], len);
  }
  std::vector<int> location(static_cast<std::size_t>(mesh.n_vertices()), -1);
  for (std::size_t i = 0; i < data.size(); ++i) location[static_cast<std::size_t>(data[i])] = static_cast<int>(i);

  std::vector<std::vector<std::pair<int, double>>> nbrs(data.size());
  parallel_for(data.size(), 0, [&](std::size_t i) {
    // bounded Dijkstra from data vertex i
    std::vector<double> dist(adj.size(), std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    std::vector<int> touched;
    dist[static_cast<std::size_t>(data[i])] = 0.0;
    heap.emplace(0.0, data[i]);
    while (!heap.empty()) {
      const auto [d, u] = heap.top();
      heap.pop();
      if (d > dist[static_cast<std::size_t>(u)]) continue;
      touched.push_back(u);
      for (const auto& [v, len] : adj[static_cast<std::size_t>(u)]) {
        const double nd = d + len;
        if (nd <= radius && nd < dist[static_cast<std::size_t>(v)]) {
          dist[static_cast<std::size_t>(v)] = nd;
          heap.emplace(nd, v);
        }
      }
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (int u : touched)
      if (location[static_cast<std::size_t>(u)] >= 0)
        nbrs[i].emplace_back(location[static_cast<std::size_t>(u)], dist[static_cast<std::size_t>(u)]);
  });
  return normalized_rows(n, nbrs, sigma);
}

SpMat smoothing_kernel(const LatticeMask& mask, double fov_mm, double fwhm) {
  const double h = mask.spacing(fov_mm);
  std::vector<Eigen::Vector3d> pts;
  for (const auto& rc : mask.in_mask_cells()) {
    const Eigen::Vector2d c = cell_center(mask, rc[0], rc[1], h);
    pts.emplace_back(c.x(), c.y(), 0.0);
  }
  return smoothing_kernel(pts, fwhm);
}

Mat gaussian_smooth(const Mat& data, const SpMat& kernel) {
  if (kernel.cols() != data.cols() || kernel.rows() != data.cols())
    throw Error(Errc::DimensionMismatch, "kernel does not match the number of locations");
  return (kernel * data.transpose()).transpose();
}

double t_pvalue(double t, double dof) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  const double a = std::abs(t);
  if (std::isinf(dof)) return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), a));
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(dof), a)));
}

VoxelwiseFit fit_voxelwise(const Mat& y, const Mat& x, const Mat& z, int ar_order) {
  return fit_impl(y, x, z, ar_order, nullptr);
}

VoxelwiseFit fit_voxelwise(const Mat& y, const Mat& x, const Mat& z, const ArNoise& ar) {
  return fit_impl(y, x, z, 0, &ar);
}

std::vector<bool> fdr_by(const Vec& pvalues, double q) {
  double c = 0.0;
  for (Eigen::Index i = 1; i <= pvalues.size(); ++i) c += 1.0 / static_cast<double>(i);
  return step_up(pvalues, q, std::max(c, 1.0));
}

std::vector<bool> fdr_bh(const Vec& pvalues, double q) { return step_up(pvalues, q, 1.0); }

double upper_quantile(std::vector<double> sample, double alpha) {
  if (sample.empty()) throw Error(Errc::InvalidArgument, "empty sample");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(Errc::InvalidArgument, "alpha must lie in (0, 1)");
  std::sort(sample.begin(), sample.end());
  const auto n = static_cast<double>(sample.size());
  const auto idx = static_cast<std::size_t>(std::max(0.0, std::ceil((1.0 - alpha) * n - 1e-9) - 1.0));
  return sample[std::min(idx, sample.size() - 1)];
}

namespace {

MaxTResult maxt_impl(const Mat& y, const Mat& x, const Mat& z, int field, int n_perm, double alpha, Seed seed,
                     const VoxelwiseFit& obs) {
  if (n_perm < 1) throw Error(Errc::InvalidArgument, "n_perm must be >= 1");
  if (field < 0 || field >= x.cols()) throw Error(Errc::IndexOutOfRange, "task column out of range");
  const int ar_order = obs.ar.empty() ? 0 : obs.ar.front().order();
  const Mat w = join(x, z);
  const auto n = y.cols();
  const Eigen::Index t_eff = y.rows() - ar_order;
  const auto pcols = w.cols();

  // whitened designs, (W'W)^{-1} and reduced-model residuals per location
  std::vector<Mat> wd(static_cast<std::size_t>(n));
  std::vector<Mat> ginv(static_cast<std::size_t>(n));
  Mat resid(t_eff, n);
  parallel_for(static_cast<std::size_t>(n), 0, [&](std::size_t v) {
    const auto i = static_cast<Eigen::Index>(v);
    Whitened wh{y.col(i), w};
    if (ar_order > 0) wh = prewhiten(Mat(y.col(i)), w, obs.ar[v]);
    wd[v] = wh.x;
    ginv[v] = (wh.x.transpose() * wh.x).ldlt().solve(Mat::Identity(pcols, pcols));
    Vec r = wh.y.col(0);
    if (z.size() > 0) {
      const Mat zw = wh.x.rightCols(z.cols());
      r -= zw * zw.colPivHouseholderQr().solve(r);
    }
    resid.col(i) = r;
  });

  MaxTResult res;
  res.null_max.resize(static_cast<std::size_t>(n_perm));
  parallel_for(static_cast<std::size_t>(n_perm), 0, [&](std::size_t it) {
    std::vector<int> perm(static_cast<std::size_t>(t_eff));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, it));
    std::shuffle(perm.begin(), perm.end(), rng);
    double mx = 0.0;
    Vec ys(t_eff);
    for (Eigen::Index v = 0; v < n; ++v) {
      for (Eigen::Index s = 0; s < t_eff; ++s) ys[s] = resid(perm[static_cast<std::size_t>(s)], v);
      const auto vi = static_cast<std::size_t>(v);
      const Vec c = wd[vi].transpose() * ys;
      const Vec b = ginv[vi] * c;
      const double rss = std::max(0.0, ys.squaredNorm() - b.dot(c));
      const double se = std::sqrt(rss / obs.dof * ginv[vi](field, field));
      const double tv = se > 0 ? std::abs(b[field]) / se : 0.0;
      mx = std::max(mx, tv);
    }
    res.null_max[it] = mx;
  });
  res.threshold = upper_quantile(res.null_max, alpha);
  res.rejected.resize(static_cast<std::size_t>(n));
  for (Eigen::Index v = 0; v < n; ++v) res.rejected[static_cast<std::size_t>(v)] = std::abs(obs.t(v, field)) > res.threshold;
  return res;
}

}  // namespace

MaxTResult fwer_maxt(const Mat& y, const Mat& x, const Mat& z, int field, int n_perm, double alpha, Seed seed,
                     int ar_order) {
  return maxt_impl(y, x, z, field, n_perm, alpha, seed, fit_voxelwise(y, x, z, ar_order));
}

MaxTResult fwer_maxt(const Mat& y, const Mat& x, const Mat& z, int field, int n_perm, double alpha, Seed seed,
                     const ArNoise& ar) {
  return maxt_impl(y, x, z, field, n_perm, alpha, seed, fit_voxelwise(y, x, z, ar));
}

ArNoise pooled_ar(const Mat& y, const Mat& x, const Mat& z, int ar_order) {
  if (ar_order < 1) throw Error(Errc::InvalidArgument, "AR order must be >= 1");
  const Mat w = join(x, z);
  const auto qr = checked_qr(w);
  std::vector<ArNoise> fits(static_cast<std::size_t>(y.cols()));
  parallel_for(fits.size(), 0, [&](std::size_t v) {
    fits[v] = residual_ar(y.col(static_cast<Eigen::Index>(v)), w, qr, ar_order);
  });
  return average_ar(fits);
}

VoxelwiseFit group_voxelwise(const Mat& beta, const Mat& se) {
  if (beta.rows() != se.rows() || beta.cols() != se.cols())
    throw Error(Errc::DimensionMismatch, "estimates and standard errors differ in shape");
  if (beta.rows() < 2) throw Error(Errc::DimensionMismatch, "group fit needs at least two subjects");
  const auto n = beta.cols();
  VoxelwiseFit g;
  g.dof = std::numeric_limits<double>::infinity();
  g.beta.resize(n, 1);
  g.se.resize(n, 1);
  g.t.resize(n, 1);
  g.p.resize(n, 1);
  for (Eigen::Index v = 0; v < n; ++v) {
    double sw = 0.0, swb = 0.0;
    for (Eigen::Index m = 0; m < beta.rows(); ++m) {
      if (!(se(m, v) > 0.0)) throw Error(Errc::InvalidArgument, "standard errors must be positive");
      const double w = std::isinf(se(m, v)) ? 0.0 : 1.0 / (se(m, v) * se(m, v));
      sw += w;
      swb += w * beta(m, v);
    }
    if (!(sw > 0.0)) throw Error(Errc::InvalidArgument, "every subject has infinite variance");
    g.beta(v, 0) = swb / sw;
    g.se(v, 0) = 1.0 / std::sqrt(sw);
    g.t(v, 0) = g.beta(v, 0) / g.se(v, 0);
    g.p(v, 0) = t_pvalue(g.t(v, 0), g.dof);
  }
  return g;
}

MaxTResult fwer_maxt_group(const Mat& beta, const Mat& se, int n_perm, double alpha, Seed seed) {
  if (n_perm < 1) throw Error(Errc::InvalidArgument, "n_perm must be >= 1");
  const VoxelwiseFit obs = group_voxelwise(beta, se);
  MaxTResult res;
  res.null_max.resize(static_cast<std::size_t>(n_perm));
  for (int it = 0; it < n_perm; ++it) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(it)));
    std::bernoulli_distribution coin(0.5);
    Mat flipped = beta;
    for (Eigen::Index m = 0; m < beta.rows(); ++m)
      if (coin(rng)) flipped.row(m) *= -1.0;
    res.null_max[static_cast<std::size_t>(it)] = group_voxelwise(flipped, se).t.cwiseAbs().maxCoeff();
  }
  res.threshold = upper_quantile(res.null_max, alpha);
  res.rejected.resize(static_cast<std::size_t>(beta.cols()));
  for (Eigen::Index v = 0; v < beta.cols(); ++v) res.rejected[static_cast<std::size_t>(v)] = std::abs(obs.t(v, 0)) > res.threshold;
  return res;
}

}  // namespace sbglm
