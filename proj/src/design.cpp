#include "sbglm/design.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "sbglm/error.hpp"

namespace sbglm {

void TaskDesign::validate() const {
  const auto t = tasks.rows();
  if (t == 0) throw Error(Errc::InvalidArgument, "design has no time points");
  if (nuisance.size() > 0 && nuisance.rows() != t)
    throw Error(Errc::DimensionMismatch, "nuisance columns differ in length from task columns");
  if (!tasks.allFinite() || !nuisance.allFinite())
    throw Error(Errc::InvalidArgument, "design contains non-finite values");
  auto has_constant = [](const Mat& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double first = m(0, j);
      if (first != 0.0 && (m.col(j).array() == first).all()) return true;
    }
    return false;
  };
  if (!has_constant(tasks) && !has_constant(nuisance))
    throw Error(Errc::InvalidArgument, "design has no baseline (constant) column");
}

namespace {
double gamma_pdf(double t, double shape) {
  if (t <= 0.0) return 0.0;
  return std::exp((shape - 1.0) * std::log(t) - t - std::lgamma(shape));
}
}  // namespace

Vec canonical_hrf(double tr, double duration) {
  if (!(tr > 0)) throw Error(Errc::InvalidArgument, "TR must be positive");
  const auto n = static_cast<Eigen::Index>(std::ceil(duration / tr - 1e-9));
  Vec h(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * tr;
    h[i] = gamma_pdf(t, 6.0) - gamma_pdf(t, 16.0) / 6.0;
  }
  const double peak = h.maxCoeff();
  if (peak > 0) h /= peak;
  return h;
}

Vec block_stimulus(int n_time, double tr, const std::vector<StimulusBlock>& blocks) {
  Vec s = Vec::Zero(n_time);
  for (int t = 0; t < n_time; ++t) {
    const double time = t * tr;
    for (const auto& b : blocks)
      if (time >= b.onset - 1e-9 && time < b.onset + b.duration - 1e-9) s[t] = 1.0;
  }
  return s;
}

Vec convolve_stimulus(const Vec& stimulus, const Vec& kernel) {
  const auto n = stimulus.size();
  Vec out = Vec::Zero(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    if (stimulus[t] == 0.0) continue;
    for (Eigen::Index k = 0; k < kernel.size() && t + k < n; ++k) out[t + k] += stimulus[t] * kernel[k];
  }
  return out;
}

Residualized residualize(const Mat& y, const Mat& x, const Mat& z) {
  if (y.rows() != z.rows() || (x.size() > 0 && x.rows() != z.rows()))
    throw Error(Errc::DimensionMismatch, "residualize: row counts differ");
  if (z.cols() == 0) return {y, x};
  Eigen::ColPivHouseholderQR<Mat> qr(z);
  qr.setThreshold(1e-10);
  if (qr.rank() < z.cols())
    throw Error(Errc::RankDeficientNuisance, "nuisance matrix has rank " + std::to_string(qr.rank()) +
                                                 " < " + std::to_string(z.cols()));
  // residual = y - Z (Z'Z)^{-1} Z' y, via the thin Q factor
  const Mat q = qr.householderQ() * Mat::Identity(z.rows(), z.cols());
  Residualized r;
  r.y = y - q * (q.transpose() * y);
  r.x = x.size() > 0 ? Mat(x - q * (q.transpose() * x)) : x;
  return r;
}

Vec sample_autocovariance(const Vec& series, int max_lag) {
  const auto n = series.size();
  if (n <= max_lag) throw Error(Errc::InvalidArgument, "series shorter than the requested lag");
  const Vec d = series.array() - series.mean();
  Vec acov(max_lag + 1);
  for (int k = 0; k <= max_lag; ++k)
    acov[k] = d.head(n - k).dot(d.tail(n - k)) / static_cast<double>(n);
  return acov;
}

Vec ar_autocovariance(const std::vector<double>& phi, double innovation_var, int max_lag) {
  const int p = static_cast<int>(phi.size());
  // unknowns gamma_0..gamma_p
  Mat a = Mat::Identity(p + 1, p + 1);
  Vec b = Vec::Zero(p + 1);
  b[0] = innovation_var;
  for (int k = 0; k <= p; ++k)
    for (int i = 1; i <= p; ++i) a(k, std::abs(k - i)) -= phi[static_cast<std::size_t>(i - 1)];
  const Vec head = a.fullPivLu().solve(b);
  Vec g(std::max(max_lag, p) + 1);
  g.head(p + 1) = head;
  for (int k = p + 1; k < g.size(); ++k) {
    double s = 0.0;
    for (int i = 1; i <= p; ++i) s += phi[static_cast<std::size_t>(i - 1)] * g[k - i];
    g[k] = s;
  }
  return g.head(max_lag + 1);
}

bool is_stationary(const std::vector<double>& phi) {
  const int p = static_cast<int>(phi.size());
  if (p == 0) return true;
  Mat companion = Mat::Zero(p, p);
  for (int i = 0; i < p; ++i) companion(0, i) = phi[static_cast<std::size_t>(i)];
  for (int i = 1; i < p; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Mat> es(companion, false);
  return (es.eigenvalues().array().abs() < 1.0).all();
}

ArNoise yule_walker_acov(const Vec& acov, int p) {
  if (p < 1) throw Error(Errc::InvalidArgument, "AR order must be >= 1");
  if (acov.size() < p + 1) throw Error(Errc::DimensionMismatch, "need autocovariances at lags 0..p");
  if (!(acov[0] > 0)) throw Error(Errc::InvalidArgument, "lag-0 autocovariance must be positive");
  Mat r(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) r(i, j) = acov[std::abs(i - j)];
  const Vec rhs = acov.segment(1, p);
  const Vec phi = r.ldlt().solve(rhs);
  ArNoise ar;
  ar.phi.assign(phi.data(), phi.data() + p);
  if (!phi.allFinite() || !is_stationary(ar.phi))
    throw Error(Errc::NonStationaryEstimate, "Yule-Walker solution is not stationary");
  ar.xi = 1.0 / acov[0];
  ar.innovation_var = acov[0] - phi.dot(rhs);
  return ar;
}

ArNoise yule_walker(const Vec& series, int p) {
  if (series.size() <= 2 * p) throw Error(Errc::InvalidArgument, "not enough samples for the AR order");
  return yule_walker_acov(sample_autocovariance(series, p), p);
}

ArNoise average_ar(const std::vector<ArNoise>& fits) {
  if (fits.empty()) throw Error(Errc::InvalidArgument, "average_ar of an empty set");
  ArNoise out;
  const int p = fits.front().order();
  out.phi.assign(static_cast<std::size_t>(p), 0.0);
  out.xi = 0.0;
  out.innovation_var = 0.0;
  for (const auto& f : fits) {
    if (f.order() != p) throw Error(Errc::DimensionMismatch, "AR orders differ");
    for (int i = 0; i < p; ++i) out.phi[static_cast<std::size_t>(i)] += f.phi[static_cast<std::size_t>(i)];
    out.xi += f.xi;
    out.innovation_var += f.innovation_var;
  }
  const double m = static_cast<double>(fits.size());
  for (auto& v : out.phi) v /= m;
  out.xi /= m;
  out.innovation_var /= m;
  return out;
}

Mat ar_filter(const Mat& a, const ArNoise& ar, InitialRows mode) {
  const int p = ar.order();
  const auto t = a.rows();
  if (t <= p) throw Error(Errc::InvalidArgument, "series shorter than the AR order");
  if (p == 0) return a;
  Mat out(mode == InitialRows::Drop ? t - p : t, a.cols());
  const Eigen::Index offset = mode == InitialRows::Drop ? 0 : p;
  for (Eigen::Index row = p; row < t; ++row) {
    auto dst = out.row(row - p + offset);
    dst = a.row(row);
    for (int i = 1; i <= p; ++i) dst -= ar.phi[static_cast<std::size_t>(i - 1)] * a.row(row - i);
  }
  if (mode == InitialRows::Exact) {
    // stationary covariance of the first p values with unit innovations
    const Vec g = ar_autocovariance(ar.phi, 1.0, p);
    Mat gamma(p, p);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) gamma(i, j) = g[std::abs(i - j)];
    const Eigen::LLT<Mat> llt(gamma);
    out.topRows(p) = llt.matrixL().solve(a.topRows(p));
  }
  return out;
}

Whitened prewhiten(const Mat& y, const Mat& x, const ArNoise& ar, InitialRows mode) {
  if (x.size() > 0 && x.rows() != y.rows()) throw Error(Errc::DimensionMismatch, "prewhiten: row counts differ");
  if (!is_stationary(ar.phi)) throw Error(Errc::NonStationaryEstimate, "prewhiten: AR model is not stationary");
  return {ar_filter(y, ar, mode), x.size() > 0 ? ar_filter(x, ar, mode) : x};
}

}  // namespace sbglm
