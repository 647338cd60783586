#pragma once

#include <deque>
#include <vector>

#include "sbglm/excursions.hpp"
#include "sbglm/inla.hpp"

namespace sbglm {

/// Gaussian approximation of a hyperparameter posterior.
struct ThetaGaussian {
  Vec mean;
  Mat precision;
};

/// Product of the subjects' Gaussian approximations of pi(theta | y_m):
/// precision sum_m Q_m, mean (sum_m Q_m)^{-1} sum_m Q_m mu_m.
ThetaGaussian combine_theta_posteriors(const std::vector<ThetaGaussian>& subjects);
ThetaGaussian combine_theta_posteriors(const std::vector<SubjectFit>& fits);

/// sum_m log pi(theta | y_m) + (1 - M) log pi(theta): the joint-model
/// log pi(theta | y) up to a constant, given per-subject log posteriors.
double joint_theta_log_posterior(const std::vector<double>& subject_log_post, double log_prior);

/// lambda_l proportional to pi(theta_l)^{1-M}, normalized. Only log densities
/// are needed; a constant offset in them cancels.
std::vector<double> group_weights(const std::vector<double>& log_prior, int n_subjects);
std::vector<double> group_weights(const std::vector<Vec>& theta, const HyperPrior& prior, int n_subjects);

/// Contrast on field k: beta_G = sum_m A_m beta_{m,k}, with A_m of size
/// n_group x N (one block per subject).
struct Contrast {
  int field = 0;
  std::vector<SpMat> blocks;

  int n_subjects() const { return static_cast<int>(blocks.size()); }
  Eigen::Index rows() const { return blocks.empty() ? 0 : blocks.front().rows(); }
};

/// A_m = I / M for every subject: the group average of field k.
Contrast averaging_contrast(int n_subjects, int n_locations, int field = 0);

struct GaussianField {
  Vec mean;
  Vec variance;
};

/// beta_G | y, theta for independent subjects sharing theta. Covariances use
/// sparse solves only; `workspaces` (one per subject) keep their analyses.
GaussianField group_conditional(const std::vector<SubjectFit>& fits, const Contrast& a, const Vec& theta,
                                std::deque<LatentModel::Workspace>& workspaces);
GaussianField group_conditional(const std::vector<SubjectFit>& fits, const Contrast& a, const Vec& theta);

/// Dense covariance of beta_G | y, theta on a subset of contrast rows.
Mat group_covariance(const std::vector<SubjectFit>& fits, const Contrast& a, const Vec& theta,
                     const std::vector<int>& subset);

struct GroupPosterior {
  Contrast contrast;
  std::vector<Vec> theta;        // draws from q(theta | y)
  std::vector<double> weights;   // normalized importance weights
  std::vector<Vec> means;        // per-draw conditional mean of beta_G
  std::vector<Vec> variances;    // per-draw conditional marginal variance
  Vec mean;                      // mixture moments
  Vec variance;
  ThetaGaussian q;

  std::size_t size() const { return theta.size(); }
};

struct GroupOptions {
  int n_samples = 50;
  Seed seed = 1;
  unsigned workers = 0;
};

GroupPosterior group_posterior(const std::vector<SubjectFit>& fits, const Contrast& a, const GroupOptions& opt = {});

/// Mixture view of a group posterior for the excursion machinery.
MixtureView group_view(const std::vector<SubjectFit>& fits, const GroupPosterior& post);

ExcursionResult group_excursions(const std::vector<SubjectFit>& fits, const GroupPosterior& post, double gamma,
                                 double alpha, const ExcursionOptions& opt = {});

enum class TwoLevelMode { Plugin, Sampling };

TwoLevelMode parse_two_level_mode(const std::string& s);

struct TwoLevelOptions {
  TwoLevelMode mode = TwoLevelMode::Plugin;
  int n_samples = 50;
  Seed seed = 1;
  Mat design;          // X_G (M x P); empty: 1_M
  int contrast = 0;    // second-level column reported
  FitOptions fit;
  ExcursionOptions excursion;
};

struct TwoLevelResult {
  Vec mean;             // averaged second-level posterior mean
  Vec variance;         // averaged second-level posterior variance
  ExcursionResult excursion;  // averaged F and marginal PPM
  int n_fits = 0;
};

/// Draw of the field-k maps of every subject: a grid point is chosen by
/// weight, then the latent field is drawn from that Gaussian. Rows = subjects.
Mat draw_subject_maps(const std::vector<SubjectFit>& fits, int field, Seed seed);

/// Second-level spatial fits on response matrices (M x N each), averaged with
/// equal weights. Every fit shares the mesh and projector of `like`.
TwoLevelResult two_level_from_responses(const LatentModel& like, const std::vector<Mat>& responses, double gamma,
                                        const TwoLevelOptions& opt);

/// plugin: one fit on the subjects' posterior means; sampling: the average
/// of fits on n_samples posterior draws.
TwoLevelResult two_level_fit(const std::vector<SubjectFit>& fits, int field, double gamma,
                             const TwoLevelOptions& opt = {});

}  // namespace sbglm
