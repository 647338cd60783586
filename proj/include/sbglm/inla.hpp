#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sbglm/sparse.hpp"
#include "sbglm/spde.hpp"
#include "sbglm/types.hpp"

namespace sbglm {

/// Sufficient statistics of the (residualized, prewhitened) data for the
/// model y_v = X_v beta(v) + e_v, e_v ~ N(0, xi^{-1} I).
struct ModelData {
  std::vector<Mat> gram;  // X_v' X_v, K x K; one shared entry or one per location
  Mat xty;                // N x K, row v = (X_v' y_v)'
  double yty = 0.0;
  double n_obs = 0.0;     // effective number of observations entering log xi

  int n_locations() const { return static_cast<int>(xty.rows()); }
  int n_fields() const { return static_cast<int>(xty.cols()); }
};

/// Statistics for a design shared across locations. `n_obs` < 0 means y.size().
ModelData summarize(const Mat& y, const Mat& x, double n_obs = -1.0);

/// Sums statistics of independent datasets over the same locations.
ModelData stack(const ModelData& a, const ModelData& b);

struct Conditional {
  Vec mean;      // latent weights, field-major (field k occupies [k n, (k+1) n))
  SpMat precision;
  Vec variance;  // marginal variances; empty unless requested
};

struct Evaluation {
  double log_posterior = 0.0;  // log prior + log marginal likelihood
  double log_likelihood = 0.0;
  Vec gradient;                // of log_posterior, empty unless requested
};

/// Exact-Gaussian latent model: K fields beta_k = Psi w_k with independent
/// SPDE priors w_k ~ N(0, Q(kappa_k, tau_k)^{-1}) on one mesh.
/// Hyperparameters are the free vector (log xi, log kappa_0, log tau_0, ...).
class LatentModel {
 public:
  /// Per-thread scratch: factorizations whose symbolic analyses are reused.
  struct Workspace {
    SparseCholesky post;
    SparseCholesky k_factor;
    std::vector<int> post_positions;
  };

  LatentModel(SpdeOperator prior, SpMat psi, ModelData data, HyperPrior hyperprior = {},
              std::vector<double> ar_transform = {});

  int n_fields() const { return k_; }
  Eigen::Index n_mesh() const { return n_; }
  Eigen::Index n_latent() const { return n_ * k_; }
  int n_locations() const { return static_cast<int>(psi_.rows()); }
  int n_theta() const { return 1 + 2 * k_; }

  const SpdeOperator& prior() const { return prior_; }
  const SpMat& projector() const { return psi_; }
  const ModelData& data() const { return data_; }
  const HyperPrior& hyperprior() const { return hyperprior_; }
  const std::vector<double>& ar_transform() const { return ar_transform_; }

  HyperState state(const Vec& theta) const;

  /// Block-diagonal prior precision and posterior precision Q_theta + xi H.
  SpMat prior_precision(const Vec& theta) const;
  SpMat posterior_precision(const Vec& theta) const;

  /// Exact Gaussian conditional of the latent weights given theta and y.
  Conditional conditional(const Vec& theta, Workspace& ws, bool variances = false) const;
  Conditional conditional(const Vec& theta, bool variances = false) const;

  /// Factorizes Q_post(theta) into ws.post.
  void factorize_posterior(const Vec& theta, Workspace& ws) const;

  /// Q_post(theta)^{-1} rhs; the columns of rhs live in the latent layout.
  Mat posterior_solve(const Vec& theta, Workspace& ws, const Mat& rhs) const;

  /// log pi(theta | y) up to a constant, with the analytic gradient on request.
  Evaluation evaluate(const Vec& theta, Workspace& ws, bool gradient = false) const;
  double log_posterior(const Vec& theta) const;

  /// Starting point: log xi from the data scale, log kappa/log tau at the prior means.
  Vec default_init() const;

  /// Latent index of (field, mesh vertex).
  Eigen::Index index(int field, Eigen::Index vertex) const { return field * n_ + vertex; }

 private:
  void factorize(const Vec& theta, Workspace& ws, std::vector<double>& values) const;

  SpdeOperator prior_;
  SpMat psi_;
  ModelData data_;
  HyperPrior hyperprior_;
  std::vector<double> ar_transform_;
  int k_ = 0;
  Eigen::Index n_ = 0;

  // Posterior precision pattern and aligned value arrays. Prior blocks are
  // disjoint, so one field tag per stored entry suffices.
  SpMat pattern_;
  std::vector<int> field_;  // -1 for entries outside every diagonal block
  std::vector<double> c_, g_, gcg_, h_;
  std::vector<int> rows_, cols_;
  Vec b_;  // Psi' X' y, latent layout
};

struct OptimOptions {
  int max_iter = 100;
  double grad_tol = 1e-5;
  double hessian_step = 1e-4;
  double max_step = 1.0;  // Euclidean cap on one Newton step
};

struct OptimResult {
  Vec mode;
  Mat neg_hessian;
  double value = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
};

/// Objective returning f(x) and, when grad != nullptr, its gradient.
using Objective = std::function<double(const Vec& x, Vec* grad)>;

/// Modified Newton maximization on the finite-difference Hessian of the
/// gradient (eigenvalues reflected and floored, capped steps, backtracking).
/// Throws NonConvergence when the
/// gradient norm is not below grad_tol within max_iter iterations.
OptimResult maximize(const Objective& f, const Vec& init, const OptimOptions& opt = {});

/// Central finite-difference Hessian of a gradient, symmetrized.
Mat fd_hessian(const Objective& f, const Vec& x, double step);

OptimResult optimize_theta(const LatentModel& model, const Vec& init, const OptimOptions& opt = {});

enum class GridStrategy { Grid, EmpiricalBayes };

GridStrategy parse_strategy(const std::string& s);
std::string to_string(GridStrategy s);

struct ThetaGrid {
  std::vector<Vec> points;
  std::vector<double> log_post;
  std::vector<double> weights;  // normalized
  std::vector<Eigen::VectorXi> z;  // integer lattice coordinates

  std::size_t size() const { return points.size(); }
};

struct GridOptions {
  GridStrategy strategy = GridStrategy::Grid;
  double step = 1.0;
  double drop = 2.5;
  int max_points = 5000;
};

/// Lattice exploration in standardized eigen-coordinates z: theta(z) =
/// mode + V Lambda^{-1/2} step z. Points whose log posterior is within
/// `drop` of the mode value are kept (and expanded) starting from z = 0.
ThetaGrid theta_grid(const std::function<double(const Vec&)>& log_post, const Vec& mode, const Mat& neg_hessian,
                     const GridOptions& opt = {}, unsigned workers = 0);

/// Normalizes exp(log_values) stably.
std::vector<double> normalized_weights(const std::vector<double>& log_values);

struct GridPoint {
  Vec theta;
  double log_post = 0.0;
  double weight = 0.0;
  Vec mean;      // latent conditional mean
  Vec variance;  // latent conditional marginal variances
};

/// Posterior package for one subject.
struct SubjectFit {
  std::shared_ptr<const LatentModel> model;
  Vec mode;        // Gaussian approximation of pi(theta | y): mean
  Mat neg_hessian; //   and precision
  std::vector<GridPoint> points;

  Vec latent_mean() const;
  Vec latent_variance() const;
  /// Mixture mean / variance of beta_k at the data locations.
  Vec field_mean(int k) const;
  Vec field_variance(int k) const;
  /// Per-point conditional mean / variance of beta_k at the data locations.
  Vec point_field_mean(std::size_t point, int k) const;
  Vec point_field_variance(std::size_t point, int k) const;
};

struct FitOptions {
  GridOptions grid;
  OptimOptions optim;
  Vec init;  // empty: model.default_init()
  unsigned workers = 0;
};

SubjectFit fit_subject(std::shared_ptr<const LatentModel> model, const FitOptions& opt = {});

/// Mixture moments: mean = sum w mu, var = sum w (s2 + mu^2) - mean^2.
void mixture_moments(const std::vector<double>& w, const std::vector<Vec>& means, const std::vector<Vec>& vars,
                     Vec& mean, Vec& var);

}  // namespace sbglm
