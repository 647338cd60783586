#pragma once

#include <functional>
#include <vector>

#include "sbglm/inla.hpp"
#include "sbglm/types.hpp"

namespace sbglm {

/// Zero-mean draws (m x n) of one Gaussian component; all randomness comes
/// from `seed`.
using FieldSampler = std::function<Mat(int n, Seed seed)>;

/// A Gaussian mixture over m locations. Components expose their mean and
/// marginal variance, and dense covariance blocks on request.
struct MixtureView {
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<Vec> variances;
  /// Dense covariance of component `comp` on the listed locations (in order).
  std::function<Mat(std::size_t comp, const std::vector<int>& subset)> covariance;
  /// Optional: builds a whole-field sampler for component `comp` (e.g. from a
  /// sparse precision factor). When set, excursions sample full fields instead
  /// of factorizing dense covariance blocks.
  std::function<FieldSampler(std::size_t comp)> sampler;

  std::size_t size() const { return weights.size(); }
  Eigen::Index n_locations() const { return means.empty() ? 0 : means.front().size(); }
};

enum class ExcursionType { Positive, Negative };

struct ExcursionOptions {
  int n_mc = 100000;   // total draws across mixture components
  Seed seed = 1;
  ExcursionType type = ExcursionType::Positive;
  int initial_subset = 64;
  unsigned workers = 0;
};

struct ExcursionResult {
  double gamma = 0.0;
  double alpha = 0.0;      // 0 until threshold() is applied
  Vec F;                   // excursion function
  Vec marginal;            // marginal PPM P(beta > gamma)
  Vec se;                  // Monte Carlo standard error of F
  std::vector<int> order;  // ranking (decreasing marginal PPM, ties by index)
  std::vector<bool> active;
};

/// P(x > gamma) (or P(x < -gamma) for negative excursions) under the mixture.
Vec marginal_ppm(const MixtureView& view, double gamma, ExcursionType type = ExcursionType::Positive);

/// Locations by decreasing probability; ties broken by ascending index.
std::vector<int> rank_locations(const Vec& probability);

/// Sequential Monte Carlo estimate of the joint exceedance probabilities of
/// the nested sets {order[0..i]} for one Gaussian component, with antithetic
/// draws (n_pairs pairs). Returns F and its standard error in location space.
void joint_exceedance(const Vec& mean, const std::function<Mat(const std::vector<int>&)>& covariance,
                      const std::vector<int>& order, double gamma, int n_pairs, Seed seed, int initial_subset,
                      Vec& f, Vec& se);

/// Same estimator from whole-field draws: each pair (mean + d, mean - d) is
/// scored along the full ranking.
void joint_exceedance_sampled(const Vec& mean, const FieldSampler& draw, const std::vector<int>& order, double gamma,
                              int n_pairs, Seed seed, Vec& f, Vec& se);

/// F(u) = sum_l w_l F_l(u) with a ranking shared across components, taken
/// from the mixture marginal PPM. The draw budget n_mc is split across
/// components in proportion to their weights.
ExcursionResult excursion_mixture(const MixtureView& view, double gamma, const ExcursionOptions& opt = {});

/// Single Gaussian given by mean and sparse precision.
ExcursionResult excursion_conditional(const Vec& mean, const SpMat& precision, double gamma,
                                      const ExcursionOptions& opt = {});

/// View of field k of a subject fit at its data locations. Requires a
/// selection projector (data locations are mesh vertices).
MixtureView subject_view(const SubjectFit& fit, int field);

ExcursionResult excursion_mixture(const SubjectFit& fit, int field, double gamma, const ExcursionOptions& opt = {});

/// Several fields of one fit at once: each grid point is factorized once and
/// its latent draws are shared, so every entry equals excursion_mixture(fit,
/// field, ...) exactly.
std::vector<ExcursionResult> excursion_fields(const SubjectFit& fit, const std::vector<int>& fields, double gamma,
                                              const ExcursionOptions& opt = {});

/// active(u) = F(u) >= 1 - alpha.
std::vector<bool> threshold(const Vec& f, double alpha);
ExcursionResult threshold(ExcursionResult result, double alpha);

/// Goodman-Kruskal gamma between two score vectors (1 = no discordant pairs).
double rank_concordance(const Vec& a, const Vec& b);

}  // namespace sbglm
