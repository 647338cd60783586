#include "sbglm/inla.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <mutex>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "sbglm/error.hpp"
#include "sbglm/parallel.hpp"

namespace sbglm {

ModelData summarize(const Mat& y, const Mat& x, double n_obs) {
  if (y.rows() != x.rows()) throw Error(Errc::DimensionMismatch, "summarize: y and X differ in length");
  ModelData d;
  d.gram = {x.transpose() * x};
  d.xty = (x.transpose() * y).transpose();
  d.yty = y.squaredNorm();
  d.n_obs = n_obs < 0 ? static_cast<double>(y.size()) : n_obs;
  return d;
}

ModelData stack(const ModelData& a, const ModelData& b) {
  if (a.n_locations() != b.n_locations() || a.n_fields() != b.n_fields())
    throw Error(Errc::DimensionMismatch, "stack: datasets differ in shape");
  ModelData d;
  const std::size_t n = std::max(a.gram.size(), b.gram.size());
  for (std::size_t v = 0; v < n; ++v)
    d.gram.push_back(a.gram[std::min(v, a.gram.size() - 1)] + b.gram[std::min(v, b.gram.size() - 1)]);
  d.xty = a.xty + b.xty;
  d.yty = a.yty + b.yty;
  d.n_obs = a.n_obs + b.n_obs;
  return d;
}

namespace {

int find_entry(const SpMat& m, Eigen::Index i, Eigen::Index j) {
  const int* first = m.innerIndexPtr() + m.outerIndexPtr()[j];
  const int* last = m.innerIndexPtr() + m.outerIndexPtr()[j + 1];
  const int* hit = std::lower_bound(first, last, static_cast<int>(i));
  if (hit == last || *hit != i) throw Error(Errc::InvalidArgument, "entry outside the precision pattern");
  return static_cast<int>(hit - m.innerIndexPtr());
}

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

LatentModel::LatentModel(SpdeOperator prior, SpMat psi, ModelData data, HyperPrior hyperprior,
                         std::vector<double> ar_transform)
    : prior_(std::move(prior)),
      psi_(std::move(psi)),
      data_(std::move(data)),
      hyperprior_(hyperprior),
      ar_transform_(std::move(ar_transform)) {
  k_ = data_.n_fields();
  n_ = prior_.size();
  if (k_ < 1) throw Error(Errc::InvalidArgument, "model needs at least one field");
  if (psi_.cols() != n_) throw Error(Errc::DimensionMismatch, "projector columns differ from mesh size");
  if (psi_.rows() != data_.n_locations()) throw Error(Errc::DimensionMismatch, "projector rows differ from locations");
  if (data_.gram.size() != 1 && static_cast<int>(data_.gram.size()) != data_.n_locations())
    throw Error(Errc::DimensionMismatch, "gram matrices must be shared or one per location");
  for (const auto& g : data_.gram)
    if (g.rows() != k_ || g.cols() != k_) throw Error(Errc::DimensionMismatch, "gram matrix has wrong size");
  psi_.makeCompressed();

  const SpMat& c = prior_.mass();
  const SpMat& g = prior_.stiffness();
  const SpMat gcg = g * (c.diagonal().cwiseInverse().asDiagonal() * g);

  // data block H_kl = Psi' diag(gram_v(k, l)) Psi
  const int nloc = data_.n_locations();
  std::vector<Triplet> h_trips;
  for (int a = 0; a < k_; ++a)
    for (int b = 0; b < k_; ++b) {
      Vec d(nloc);
      for (int v = 0; v < nloc; ++v) d[v] = data_.gram[data_.gram.size() == 1 ? 0 : static_cast<std::size_t>(v)](a, b);
      const SpMat hab = psi_.transpose() * d.asDiagonal() * psi_;
      for (int col = 0; col < hab.outerSize(); ++col)
        for (SpMat::InnerIterator it(hab, col); it; ++it)
          h_trips.emplace_back(static_cast<int>(a * n_ + it.row()), static_cast<int>(b * n_ + it.col()), it.value());
    }
  const Eigen::Index nl = n_latent();
  SpMat h(nl, nl);
  h.setFromTriplets(h_trips.begin(), h_trips.end());

  std::vector<Triplet> pat;
  for (int f = 0; f < k_; ++f)
    for (const SpMat* m : std::initializer_list<const SpMat*>{&c, &g, &gcg})
      for (int col = 0; col < m->outerSize(); ++col)
        for (SpMat::InnerIterator it(*m, col); it; ++it)
          pat.emplace_back(static_cast<int>(f * n_ + it.row()), static_cast<int>(f * n_ + it.col()), 1.0);
  for (int col = 0; col < h.outerSize(); ++col)
    for (SpMat::InnerIterator it(h, col); it; ++it) pat.emplace_back(it.row(), it.col(), 1.0);
  pattern_.resize(nl, nl);
  pattern_.setFromTriplets(pat.begin(), pat.end());
  pattern_.makeCompressed();

  const auto nnz = static_cast<std::size_t>(pattern_.nonZeros());
  field_.assign(nnz, -1);
  c_.assign(nnz, 0.0);
  g_.assign(nnz, 0.0);
  gcg_.assign(nnz, 0.0);
  h_.assign(nnz, 0.0);
  rows_.resize(nnz);
  cols_.resize(nnz);
  for (int col = 0; col < pattern_.outerSize(); ++col)
    for (SpMat::InnerIterator it(pattern_, col); it; ++it) {
      const auto p = static_cast<std::size_t>(&it.value() - pattern_.valuePtr());
      rows_[p] = static_cast<int>(it.row());
      cols_[p] = col;
    }
  auto scatter = [&](const SpMat& m, std::vector<double>& dst, int f) {
    for (int col = 0; col < m.outerSize(); ++col)
      for (SpMat::InnerIterator it(m, col); it; ++it) {
        const auto p = static_cast<std::size_t>(find_entry(pattern_, f * n_ + it.row(), f * n_ + col));
        dst[p] += it.value();
        field_[p] = f;
      }
  };
  for (int f = 0; f < k_; ++f) {
    scatter(c, c_, f);
    scatter(g, g_, f);
    scatter(gcg, gcg_, f);
  }
  for (int col = 0; col < h.outerSize(); ++col)
    for (SpMat::InnerIterator it(h, col); it; ++it)
      h_[static_cast<std::size_t>(find_entry(pattern_, it.row(), col))] += it.value();

  b_.resize(nl);
  for (int f = 0; f < k_; ++f) b_.segment(f * n_, n_) = psi_.transpose() * data_.xty.col(f);
}

HyperState LatentModel::state(const Vec& theta) const {
  if (theta.size() != n_theta())
    throw Error(Errc::DimensionMismatch, "theta has " + std::to_string(theta.size()) + " entries, expected " +
                                             std::to_string(n_theta()));
  if (!theta.allFinite()) throw Error(Errc::InvalidArgument, "theta is not finite");
  return HyperState::from_free(theta, ar_transform_);
}

SpMat LatentModel::prior_precision(const Vec& theta) const {
  const HyperState s = state(theta);
  std::vector<SpMat> blocks;
  for (int f = 0; f < k_; ++f)
    blocks.push_back(prior_.precision(std::exp(s.log_kappa[static_cast<std::size_t>(f)]),
                                      std::exp(s.log_tau[static_cast<std::size_t>(f)])));
  return block_diagonal(blocks);
}

void LatentModel::factorize(const Vec& theta, Workspace& ws, std::vector<double>& values) const {
  const HyperState s = state(theta);
  const double xi = std::exp(s.log_xi);
  std::vector<double> a(static_cast<std::size_t>(k_)), b(a.size()), cc(a.size());
  for (std::size_t f = 0; f < a.size(); ++f) {
    const double kappa = std::exp(s.log_kappa[f]), tau2 = std::exp(2.0 * s.log_tau[f]);
    a[f] = tau2 * kappa * kappa * kappa * kappa;
    b[f] = 2.0 * tau2 * kappa * kappa;
    cc[f] = tau2;
  }
  values.resize(c_.size());
  for (std::size_t p = 0; p < c_.size(); ++p) {
    double v = xi * h_[p];
    if (field_[p] >= 0) {
      const auto f = static_cast<std::size_t>(field_[p]);
      v += a[f] * c_[p] + b[f] * g_[p] + cc[f] * gcg_[p];
    }
    values[p] = v;
  }
  SpMat q = pattern_;
  std::copy(values.begin(), values.end(), q.valuePtr());
  if (!ws.post.analyzed() || ws.post.size() != q.rows()) {
    ws.post.analyze(q);
    ws.post_positions.clear();
  }
  try {
    ws.post.factorize(q);
  } catch (const Error& e) {
    throw Error(Errc::FactorizationFailure, std::string("posterior precision: ") + e.what());
  }
  if (ws.post_positions.empty()) ws.post_positions = ws.post.positions(pattern_);
}

SpMat LatentModel::posterior_precision(const Vec& theta) const {
  const HyperState s = state(theta);
  SpMat q = prior_precision(theta);
  SpMat h = pattern_;
  std::copy(h_.begin(), h_.end(), h.valuePtr());
  SpMat out = q + std::exp(s.log_xi) * h;
  return out;
}

Conditional LatentModel::conditional(const Vec& theta, Workspace& ws, bool variances) const {
  std::vector<double> values;
  factorize(theta, ws, values);
  Conditional out;
  out.mean = ws.post.solve(Vec(std::exp(theta[0]) * b_));
  out.precision = pattern_;
  std::copy(values.begin(), values.end(), out.precision.valuePtr());
  if (variances) out.variance = ws.post.inverse_diagonal();
  return out;
}

void LatentModel::factorize_posterior(const Vec& theta, Workspace& ws) const {
  std::vector<double> values;
  factorize(theta, ws, values);
}

Mat LatentModel::posterior_solve(const Vec& theta, Workspace& ws, const Mat& rhs) const {
  std::vector<double> values;
  factorize(theta, ws, values);
  return ws.post.solve(rhs);
}

Conditional LatentModel::conditional(const Vec& theta, bool variances) const {
  Workspace ws;
  return conditional(theta, ws, variances);
}

Evaluation LatentModel::evaluate(const Vec& theta, Workspace& ws, bool gradient) const {
  const HyperState s = state(theta);
  const double xi = std::exp(s.log_xi);
  std::vector<double> values;
  factorize(theta, ws, values);
  const Vec mu = ws.post.solve(Vec(xi * b_));
  const double mub = mu.dot(b_);

  Evaluation ev;
  double prior_logdet = 0.0;
  const Vec cdiag = prior_.mass().diagonal();
  std::vector<double> tr_kinv_c(static_cast<std::size_t>(k_), 0.0);
  for (std::size_t f = 0; f < static_cast<std::size_t>(k_); ++f) {
    const double kappa = std::exp(s.log_kappa[f]), tau = std::exp(s.log_tau[f]);
    prior_logdet += prior_.log_det(kappa, tau, ws.k_factor);
    if (gradient) tr_kinv_c[f] = cdiag.dot(ws.k_factor.inverse_diagonal());
  }
  ev.log_likelihood = 0.5 * data_.n_obs * (s.log_xi - kLog2Pi) - 0.5 * xi * data_.yty + 0.5 * xi * mub +
                      0.5 * prior_logdet - 0.5 * ws.post.log_det();
  ev.log_posterior = log_hyperprior(s, hyperprior_) + ev.log_likelihood;
  if (!gradient) return ev;

  const std::vector<double> z = ws.post.selected_inverse_values();
  const auto kk = static_cast<std::size_t>(k_);
  std::vector<double> qc(kk, 0), qg(kk, 0), qm(kk, 0), tc(kk, 0), tg(kk, 0), tm(kk, 0);
  double qh = 0.0, th = 0.0;
  for (std::size_t p = 0; p < c_.size(); ++p) {
    const double w = mu[rows_[p]] * mu[cols_[p]];
    const int zp = ws.post_positions[p];
    const double sig = zp >= 0 ? z[static_cast<std::size_t>(zp)] : 0.0;
    qh += h_[p] * w;
    th += h_[p] * sig;
    if (field_[p] >= 0) {
      const auto f = static_cast<std::size_t>(field_[p]);
      qc[f] += c_[p] * w;
      qg[f] += g_[p] * w;
      qm[f] += gcg_[p] * w;
      tc[f] += c_[p] * sig;
      tg[f] += g_[p] * sig;
      tm[f] += gcg_[p] * sig;
    }
  }
  ev.gradient.resize(n_theta());
  const double rss = data_.yty - 2.0 * mub + qh;
  ev.gradient[0] = hyperprior_.xi_shape - hyperprior_.xi_rate * xi + 0.5 * data_.n_obs - 0.5 * xi * rss - 0.5 * xi * th;
  const double n = static_cast<double>(n_);
  for (std::size_t f = 0; f < kk; ++f) {
    const double kappa = std::exp(s.log_kappa[f]), tau2 = std::exp(2.0 * s.log_tau[f]);
    const double a = tau2 * kappa * kappa * kappa * kappa, b = 2.0 * tau2 * kappa * kappa, cc = tau2;
    const double quad_q = a * qc[f] + b * qg[f] + cc * qm[f];
    const double tr_q = a * tc[f] + b * tg[f] + cc * tm[f];
    const double quad_d = 4.0 * a * qc[f] + 2.0 * b * qg[f];
    const double tr_d = 4.0 * a * tc[f] + 2.0 * b * tg[f];
    const double lk = s.log_kappa[f], lt = s.log_tau[f];
    const double sk2 = hyperprior_.log_kappa_sd * hyperprior_.log_kappa_sd;
    const double st2 = hyperprior_.log_tau_sd * hyperprior_.log_tau_sd;
    ev.gradient[static_cast<Eigen::Index>(1 + 2 * f)] =
        -(lk - hyperprior_.log_kappa_mean) / sk2 + 2.0 * kappa * kappa * tr_kinv_c[f] - 0.5 * quad_d - 0.5 * tr_d;
    ev.gradient[static_cast<Eigen::Index>(2 + 2 * f)] = -(lt - hyperprior_.log_tau_mean) / st2 + n - quad_q - tr_q;
  }
  return ev;
}

double LatentModel::log_posterior(const Vec& theta) const {
  Workspace ws;
  return evaluate(theta, ws).log_posterior;
}

Vec LatentModel::default_init() const {
  Vec theta = Vec::Zero(n_theta());
  theta[0] = data_.yty > 0 && data_.n_obs > 0 ? std::log(data_.n_obs / data_.yty) : 0.0;
  for (int f = 0; f < k_; ++f) {
    theta[1 + 2 * f] = hyperprior_.log_kappa_mean;
    theta[2 + 2 * f] = hyperprior_.log_tau_mean;
  }
  return theta;
}

// ---------------------------------------------------------------------------
// optimization

Mat fd_hessian(const Objective& f, const Vec& x, double step) {
  const auto d = x.size();
  Mat h(d, d);
  Vec gp, gm;
  for (Eigen::Index i = 0; i < d; ++i) {
    Vec xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    f(xp, &gp);
    f(xm, &gm);
    h.col(i) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

OptimResult maximize(const Objective& f, const Vec& init, const OptimOptions& opt) {
  if (!init.allFinite()) throw Error(Errc::InvalidArgument, "optimizer start is not finite");
  OptimResult res;
  Vec x = init, grad;
  double fx = f(x, &grad);
  int iter = 0;

  // Modified Newton on the finite-difference Hessian: eigenvalues are
  // reflected and floored so indefinite regions (kappa/tau ridges) still give
  // an ascent direction, and steps are capped at max_step.
  while (grad.norm() >= opt.grad_tol && iter < opt.max_iter) {
    ++iter;
    const Mat neg_h = -fd_hessian(f, x, opt.hessian_step);
    Eigen::SelfAdjointEigenSolver<Mat> es(neg_h);
    Vec lam = es.eigenvalues().cwiseAbs();
    const double floor = std::max(1e-8 * lam.maxCoeff(), 1e-12);
    lam = lam.cwiseMax(floor);
    Vec step = es.eigenvectors() * (es.eigenvectors().transpose() * grad).cwiseQuotient(lam);
    if (!step.allFinite()) step = grad;
    if (step.norm() > opt.max_step) step *= opt.max_step / step.norm();
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      Vec g2;
      const Vec xn = x + t * step;
      double fn;
      try {
        fn = f(xn, &g2);
      } catch (const Error&) {
        continue;
      }
      // near the optimum f stalls at round-off; a smaller gradient still counts
      if (fn > fx || (fn >= fx - 1e-12 * std::abs(fx) && g2.norm() < grad.norm())) {
        x = xn;
        fx = fn;
        grad = g2;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  res.iterations = iter;
  res.grad_norm = grad.norm();
  if (!(res.grad_norm < opt.grad_tol))
    throw Error(Errc::NonConvergence, "gradient norm " + std::to_string(res.grad_norm) + " after " +
                                          std::to_string(iter) + " iterations");
  res.mode = x;
  res.value = fx;
  res.neg_hessian = -fd_hessian(f, x, opt.hessian_step);
  return res;
}

OptimResult optimize_theta(const LatentModel& model, const Vec& init, const OptimOptions& opt) {
  LatentModel::Workspace ws;
  const Objective f = [&](const Vec& theta, Vec* grad) {
    const Evaluation ev = model.evaluate(theta, ws, grad != nullptr);
    if (grad) *grad = ev.gradient;
    return ev.log_posterior;
  };
  return maximize(f, init, opt);
}

// ---------------------------------------------------------------------------
// integration grid

GridStrategy parse_strategy(const std::string& s) {
  if (s == "grid") return GridStrategy::Grid;
  if (s == "eb") return GridStrategy::EmpiricalBayes;
  throw Error(Errc::InvalidArgument, "unknown integration strategy '" + s + "' (grid | eb)");
}

std::string to_string(GridStrategy s) { return s == GridStrategy::Grid ? "grid" : "eb"; }

std::vector<double> normalized_weights(const std::vector<double>& log_values) {
  if (log_values.empty()) throw Error(Errc::DegenerateWeights, "no weights");
  double top = -std::numeric_limits<double>::infinity();
  for (double v : log_values)
    if (std::isfinite(v)) top = std::max(top, v);
  if (!std::isfinite(top)) throw Error(Errc::DegenerateWeights, "all log weights are non-finite");
  std::vector<double> w(log_values.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::isfinite(log_values[i]) ? std::exp(log_values[i] - top) : 0.0;
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

ThetaGrid theta_grid(const std::function<double(const Vec&)>& log_post, const Vec& mode, const Mat& neg_hessian,
                     const GridOptions& opt, unsigned workers) {
  const auto d = mode.size();
  if (neg_hessian.rows() != d || neg_hessian.cols() != d)
    throw Error(Errc::DimensionMismatch, "Hessian does not match the mode");
  ThetaGrid grid;
  if (opt.strategy == GridStrategy::EmpiricalBayes) {
    grid.points = {mode};
    grid.log_post = {log_post(mode)};
    grid.weights = {1.0};
    grid.z = {Eigen::VectorXi::Zero(d)};
    return grid;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (neg_hessian + neg_hessian.transpose()));
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw Error(Errc::NotPositiveDefinite, "negative Hessian at the mode is not positive definite");
  const Mat scale = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() * opt.step;

  using Key = std::vector<int>;
  std::map<Key, double> evaluated;
  std::map<Key, double> kept;
  auto to_theta = [&](const Key& k) {
    Vec zz(d);
    for (Eigen::Index i = 0; i < d; ++i) zz[i] = k[static_cast<std::size_t>(i)];
    return Vec(mode + scale * zz);
  };
  const Key origin(static_cast<std::size_t>(d), 0);
  const double f0 = log_post(mode);
  evaluated[origin] = f0;
  kept[origin] = f0;
  std::vector<Key> frontier{origin};
  while (!frontier.empty()) {
    std::vector<Key> candidates;
    for (const auto& k : frontier)
      for (Eigen::Index i = 0; i < d; ++i)
        for (int sgn : {-1, 1}) {
          Key nb = k;
          nb[static_cast<std::size_t>(i)] += sgn;
          if (!evaluated.count(nb) && std::find(candidates.begin(), candidates.end(), nb) == candidates.end())
            candidates.push_back(nb);
        }
    std::sort(candidates.begin(), candidates.end());
    std::vector<double> vals(candidates.size());
    parallel_for(candidates.size(), workers, [&](std::size_t i) {
      try {
        vals[i] = log_post(to_theta(candidates[i]));
      } catch (const Error&) {
        vals[i] = -std::numeric_limits<double>::infinity();
      }
    });
    frontier.clear();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      evaluated[candidates[i]] = vals[i];
      if (f0 - vals[i] < opt.drop) {
        kept[candidates[i]] = vals[i];
        frontier.push_back(candidates[i]);
      }
    }
    if (static_cast<int>(kept.size()) > opt.max_points)
      throw Error(Errc::NonConvergence, "integration grid exceeded " + std::to_string(opt.max_points) + " points");
  }
  for (const auto& [k, v] : kept) {
    grid.points.push_back(to_theta(k));
    grid.log_post.push_back(v);
    Eigen::VectorXi zi(d);
    for (Eigen::Index i = 0; i < d; ++i) zi[i] = k[static_cast<std::size_t>(i)];
    grid.z.push_back(zi);
  }
  grid.weights = normalized_weights(grid.log_post);
  return grid;
}

// ---------------------------------------------------------------------------
// subject fit

void mixture_moments(const std::vector<double>& w, const std::vector<Vec>& means, const std::vector<Vec>& vars,
                     Vec& mean, Vec& var) {
  if (w.empty() || w.size() != means.size() || w.size() != vars.size())
    throw Error(Errc::DimensionMismatch, "mixture_moments: inconsistent inputs");
  mean = Vec::Zero(means.front().size());
  Vec second = Vec::Zero(mean.size());
  for (std::size_t l = 0; l < w.size(); ++l) {
    mean += w[l] * means[l];
    second += w[l] * (vars[l] + means[l].cwiseAbs2());
  }
  var = (second - mean.cwiseAbs2()).cwiseMax(0.0);
  // guard round-off: never below the smallest component variance
  for (Eigen::Index i = 0; i < var.size(); ++i) {
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& v : vars) lo = std::min(lo, v[i]);
    var[i] = std::max(var[i], lo);
  }
}

namespace {

std::vector<Vec> collect(const std::vector<GridPoint>& pts, bool means) {
  std::vector<Vec> out;
  for (const auto& p : pts) out.push_back(means ? p.mean : p.variance);
  return out;
}

std::vector<double> weights_of(const std::vector<GridPoint>& pts) {
  std::vector<double> w;
  for (const auto& p : pts) w.push_back(p.weight);
  return w;
}

bool is_selection(const SpMat& psi) {
  Eigen::VectorXi count = Eigen::VectorXi::Zero(psi.rows());
  for (int k = 0; k < psi.outerSize(); ++k)
    for (SpMat::InnerIterator it(psi, k); it; ++it)
      if (it.value() != 0.0) ++count[it.row()];
  return (count.array() <= 1).all();
}

}  // namespace

Vec SubjectFit::latent_mean() const {
  Vec m, v;
  mixture_moments(weights_of(points), collect(points, true), collect(points, false), m, v);
  return m;
}

Vec SubjectFit::latent_variance() const {
  Vec m, v;
  mixture_moments(weights_of(points), collect(points, true), collect(points, false), m, v);
  return v;
}

Vec SubjectFit::point_field_mean(std::size_t point, int k) const {
  return model->projector() * points.at(point).mean.segment(k * model->n_mesh(), model->n_mesh());
}

Vec SubjectFit::point_field_variance(std::size_t point, int k) const {
  if (!is_selection(model->projector()))
    throw Error(Errc::InvalidArgument, "field variances need a selection projector");
  return model->projector().cwiseAbs2() * points.at(point).variance.segment(k * model->n_mesh(), model->n_mesh());
}

Vec SubjectFit::field_mean(int k) const {
  Vec out = Vec::Zero(model->n_locations());
  for (std::size_t l = 0; l < points.size(); ++l) out += points[l].weight * point_field_mean(l, k);
  return out;
}

Vec SubjectFit::field_variance(int k) const {
  std::vector<Vec> means, vars;
  for (std::size_t l = 0; l < points.size(); ++l) {
    means.push_back(point_field_mean(l, k));
    vars.push_back(point_field_variance(l, k));
  }
  Vec m, v;
  mixture_moments(weights_of(points), means, vars, m, v);
  return v;
}

namespace {

// Workspaces handed out to concurrent callers so symbolic analyses are reused.
class WorkspacePool {
 public:
  LatentModel::Workspace* acquire() {
    std::lock_guard<std::mutex> lock(mutex_);
    if (free_.empty()) return &all_.emplace_back();
    auto* ws = free_.back();
    free_.pop_back();
    return ws;
  }
  void release(LatentModel::Workspace* ws) {
    std::lock_guard<std::mutex> lock(mutex_);
    free_.push_back(ws);
  }

 private:
  std::mutex mutex_;
  std::deque<LatentModel::Workspace> all_;
  std::vector<LatentModel::Workspace*> free_;
};

struct PooledWorkspace {
  explicit PooledWorkspace(WorkspacePool& p) : pool(p), ws(p.acquire()) {}
  ~PooledWorkspace() { pool.release(ws); }
  PooledWorkspace(const PooledWorkspace&) = delete;
  PooledWorkspace& operator=(const PooledWorkspace&) = delete;
  WorkspacePool& pool;
  LatentModel::Workspace* ws;
};

}  // namespace

SubjectFit fit_subject(std::shared_ptr<const LatentModel> model, const FitOptions& opt) {
  if (!model) throw Error(Errc::InvalidArgument, "fit_subject: null model");
  const Vec init = opt.init.size() > 0 ? opt.init : model->default_init();
  const OptimResult mode = optimize_theta(*model, init, opt.optim);
  const LatentModel* m = model.get();
  WorkspacePool pool;
  const ThetaGrid grid = theta_grid(
      [m, &pool](const Vec& theta) {
        PooledWorkspace lease(pool);
        return m->evaluate(theta, *lease.ws).log_posterior;
      },
      mode.mode, mode.neg_hessian, opt.grid, opt.workers);

  SubjectFit fit;
  fit.model = model;
  fit.mode = mode.mode;
  fit.neg_hessian = mode.neg_hessian;
  fit.points.resize(grid.size());
  parallel_for(grid.size(), opt.workers, [&](std::size_t l) {
    PooledWorkspace lease(pool);
    Conditional c = m->conditional(grid.points[l], *lease.ws, true);
    auto& p = fit.points[l];
    p.theta = grid.points[l];
    p.log_post = grid.log_post[l];
    p.weight = grid.weights[l];
    p.mean = std::move(c.mean);
    p.variance = std::move(c.variance);
  });
  return fit;
}

}  // namespace sbglm
