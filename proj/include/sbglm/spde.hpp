#pragma once

#include <vector>

#include "sbglm/sparse.hpp"
#include "sbglm/types.hpp"

namespace sbglm {

struct SpdeParams {
  double kappa = 1.0;  // spatial scale
  double tau = 1.0;    // precision scale
  int alpha = 2;       // only alpha = 2 is supported
  int dim = 2;
};

struct MaternSummary {
  double nu = 0.0;
  double sigma2 = 0.0;
  double range = 0.0;  // sqrt(8 nu) / kappa, correlation ~0.1
};

MaternSummary matern_params(const SpdeParams& p);

/// Matern correlation at distance r for smoothness nu and scale kappa.
double matern_correlation(double r, double kappa, double nu);

/// Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G) with lumped (diagonal) C.
SparseSym precision_matrix(const SparseSym& c, const SparseSym& g, const SpdeParams& p);

/// One exact draw from N(0, Q^{-1}). Deterministic in `seed`.
Vec sample_field(const SparseSym& q, Seed seed);

/// n iid standard normals from a stream seeded by `seed`.
Vec standard_normals(Eigen::Index n, Seed seed);

/// Holds C, G and G C^{-1} G for one mesh and assembles Q(kappa, tau) on a
/// pattern that does not depend on the parameters.
class SpdeOperator {
 public:
  SpdeOperator() = default;
  SpdeOperator(SparseSym c, SparseSym g);

  Eigen::Index size() const { return c_.rows(); }
  const SparseSym& mass() const { return c_; }
  const SparseSym& stiffness() const { return g_; }

  SparseSym precision(double kappa, double tau) const;

  /// log det Q(kappa, tau) = 2 n log tau + 2 log det(kappa^2 C + G) - log det C.
  /// `k_factor` is a workspace; its symbolic analysis is reused across calls.
  double log_det(double kappa, double tau, SparseCholesky& k_factor) const;
  double log_det(double kappa, double tau) const;

 private:
  SparseSym c_, g_;
  SparseSym pattern_;  // union of the C, G and G C^-1 G patterns
  std::vector<double> c_vals_, g_vals_, gcg_vals_;
  double log_det_c_ = 0.0;
};

/// Hyperprior settings. log kappa and log tau are N(mean, sd^2); log xi has
/// the log-gamma density of xi ~ Gamma(shape, rate); AR transforms are iid
/// N(0, 1 / ar_precision).
struct HyperPrior {
  double xi_shape = 1.0;
  double xi_rate = 5e-5;
  double log_kappa_mean = 0.0;
  double log_kappa_sd = 1.0;
  double log_tau_mean = 0.0;
  double log_tau_sd = 1.0;
  double ar_precision = 0.15;
};

/// Hyperparameters in their unconstrained parameterization.
struct HyperState {
  double log_xi = 0.0;
  std::vector<double> ar_transform;  // log((1 + phi) / (1 - phi)), held fixed
  std::vector<double> log_kappa;     // one per field
  std::vector<double> log_tau;

  int n_fields() const { return static_cast<int>(log_kappa.size()); }

  /// (log xi, log kappa_0, log tau_0, ..., log kappa_K, log tau_K)
  Vec free_vector() const;
  static HyperState from_free(const Vec& theta, std::vector<double> ar_transform = {});
};

double ar_to_transform(double phi);
double transform_to_ar(double t);

double log_hyperprior(const HyperState& theta, const HyperPrior& prior = {});

}  // namespace sbglm
