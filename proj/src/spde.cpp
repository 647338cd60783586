#include "sbglm/spde.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/special_functions/bessel.hpp>

#include "sbglm/error.hpp"

namespace sbglm {

MaternSummary matern_params(const SpdeParams& p) {
  if (p.alpha != 2) throw Error(Errc::InvalidArgument, "only alpha = 2 is supported");
  if (!(p.kappa > 0) || !(p.tau > 0)) throw Error(Errc::InvalidArgument, "kappa and tau must be > 0");
  MaternSummary m;
  m.nu = p.alpha - p.dim / 2.0;
  m.sigma2 = std::tgamma(m.nu) / (std::tgamma(double(p.alpha)) *
                                  std::pow(4.0 * std::numbers::pi, p.dim / 2.0) *
                                  std::pow(p.kappa, 2.0 * m.nu) * p.tau * p.tau);
  m.range = std::sqrt(8.0 * m.nu) / p.kappa;
  return m;
}

double matern_correlation(double r, double kappa, double nu) {
  if (r <= 0.0) return 1.0;
  const double x = kappa * r;
  return std::pow(x, nu) * boost::math::cyl_bessel_k(nu, x) / (std::pow(2.0, nu - 1.0) * std::tgamma(nu));
}

namespace {

SparseSym gcg(const SparseSym& c, const SparseSym& g) {
  Vec cinv = c.diagonal().cwiseInverse();
  SparseSym scaled = cinv.asDiagonal() * g;
  SparseSym out = g * scaled;
  return out;
}

void check_operators(const SparseSym& c, const SparseSym& g) {
  if (c.rows() != c.cols() || g.rows() != g.cols() || c.rows() != g.rows())
    throw Error(Errc::DimensionMismatch, "C and G must be square and of equal size");
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    if (!(c.coeff(i, i) > 0)) throw Error(Errc::InvalidArgument, "C must have a positive diagonal");
}

}  // namespace

SparseSym precision_matrix(const SparseSym& c, const SparseSym& g, const SpdeParams& p) {
  check_operators(c, g);
  if (p.alpha != 2) throw Error(Errc::InvalidArgument, "only alpha = 2 is supported");
  const double k2 = p.kappa * p.kappa;
  SparseSym q = (k2 * k2) * c + (2.0 * k2) * g + gcg(c, g);
  return (p.tau * p.tau) * q;
}

Vec standard_normals(Eigen::Index n, Seed seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vec z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
  return z;
}

Vec sample_field(const SparseSym& q, Seed seed) {
  SparseCholesky chol(q);
  return chol.sample_zero_mean(standard_normals(q.rows(), seed));
}

SpdeOperator::SpdeOperator(SparseSym c, SparseSym g) : c_(std::move(c)), g_(std::move(g)) {
  check_operators(c_, g_);
  const SparseSym m = gcg(c_, g_);
  std::vector<Triplet> trips;
  for (const SparseSym* a : std::initializer_list<const SparseSym*>{&c_, &g_, &m})
    for (int k = 0; k < a->outerSize(); ++k)
      for (SparseSym::InnerIterator it(*a, k); it; ++it) trips.emplace_back(it.row(), it.col(), 1.0);
  pattern_.resize(c_.rows(), c_.cols());
  pattern_.setFromTriplets(trips.begin(), trips.end());
  pattern_.makeCompressed();

  auto aligned = [this](const SparseSym& a) {
    SparseSym z = pattern_;
    z.coeffs().setZero();
    for (int k = 0; k < a.outerSize(); ++k)
      for (SparseSym::InnerIterator it(a, k); it; ++it) z.coeffRef(it.row(), it.col()) += it.value();
    return std::vector<double>(z.valuePtr(), z.valuePtr() + z.nonZeros());
  };
  c_vals_ = aligned(c_);
  g_vals_ = aligned(g_);
  gcg_vals_ = aligned(m);
  log_det_c_ = c_.diagonal().array().log().sum();
}

SparseSym SpdeOperator::precision(double kappa, double tau) const {
  SparseSym q = pattern_;
  const double k2 = kappa * kappa;
  const double a = tau * tau * k2 * k2, b = 2.0 * tau * tau * k2, cc = tau * tau;
  double* v = q.valuePtr();
  for (std::size_t i = 0; i < c_vals_.size(); ++i) v[i] = a * c_vals_[i] + b * g_vals_[i] + cc * gcg_vals_[i];
  return q;
}

double SpdeOperator::log_det(double kappa, double tau, SparseCholesky& k_factor) const {
  const SparseSym k = (kappa * kappa) * c_ + g_;
  if (!k_factor.analyzed() || k_factor.size() != k.rows()) k_factor.analyze(k);
  k_factor.factorize(k);
  return 2.0 * static_cast<double>(size()) * std::log(tau) + 2.0 * k_factor.log_det() - log_det_c_;
}

double SpdeOperator::log_det(double kappa, double tau) const {
  SparseCholesky work;
  return log_det(kappa, tau, work);
}

Vec HyperState::free_vector() const {
  Vec v(1 + 2 * n_fields());
  v[0] = log_xi;
  for (int k = 0; k < n_fields(); ++k) {
    v[1 + 2 * k] = log_kappa[static_cast<std::size_t>(k)];
    v[2 + 2 * k] = log_tau[static_cast<std::size_t>(k)];
  }
  return v;
}

HyperState HyperState::from_free(const Vec& theta, std::vector<double> ar_transform) {
  if (theta.size() < 1 || theta.size() % 2 == 0)
    throw Error(Errc::DimensionMismatch, "hyperparameter vector must have 1 + 2K entries");
  HyperState s;
  s.log_xi = theta[0];
  s.ar_transform = std::move(ar_transform);
  const int k = static_cast<int>((theta.size() - 1) / 2);
  for (int f = 0; f < k; ++f) {
    s.log_kappa.push_back(theta[1 + 2 * f]);
    s.log_tau.push_back(theta[2 + 2 * f]);
  }
  return s;
}

double ar_to_transform(double phi) { return std::log((1.0 + phi) / (1.0 - phi)); }

double transform_to_ar(double t) { return std::tanh(t / 2.0); }

namespace {
double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd) - 0.5 * z * z;
}
}  // namespace

double log_hyperprior(const HyperState& theta, const HyperPrior& prior) {
  double lp = prior.xi_shape * std::log(prior.xi_rate) - std::lgamma(prior.xi_shape) +
              prior.xi_shape * theta.log_xi - prior.xi_rate * std::exp(theta.log_xi);
  const double ar_sd = 1.0 / std::sqrt(prior.ar_precision);
  for (double t : theta.ar_transform) lp += normal_logpdf(t, 0.0, ar_sd);
  for (double lk : theta.log_kappa) lp += normal_logpdf(lk, prior.log_kappa_mean, prior.log_kappa_sd);
  for (double lt : theta.log_tau) lp += normal_logpdf(lt, prior.log_tau_mean, prior.log_tau_sd);
  return lp;
}

}  // namespace sbglm
