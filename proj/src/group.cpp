#include "sbglm/group.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include <Eigen/Cholesky>

#include "sbglm/error.hpp"
#include "sbglm/parallel.hpp"

namespace sbglm {

namespace {

using Models = std::vector<std::shared_ptr<const LatentModel>>;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ (stream * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Models models_of(const std::vector<SubjectFit>& fits) {
  Models out;
  for (const auto& f : fits) {
    if (!f.model) throw Error(Errc::InvalidArgument, "subject fit without model");
    out.push_back(f.model);
  }
  return out;
}

void check_contrast(const Models& models, const Contrast& a) {
  if (models.empty()) throw Error(Errc::InvalidArgument, "no subjects");
  if (a.n_subjects() != static_cast<int>(models.size()))
    throw Error(Errc::DimensionMismatch, "contrast has one block per subject");
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (a.blocks[m].cols() != models[m]->n_locations() || a.blocks[m].rows() != a.rows())
      throw Error(Errc::DimensionMismatch, "contrast block size");
    if (a.field < 0 || a.field >= models[m]->n_fields()) throw Error(Errc::IndexOutOfRange, "contrast field");
    if (models[m]->n_theta() != models.front()->n_theta())
      throw Error(Errc::DimensionMismatch, "subjects differ in hyperparameter dimension");
  }
}

// B = A_m Psi restricted to field k, as an operator on the latent vector.
SpMat latent_operator(const LatentModel& model, const SpMat& block, int field) {
  const SpMat& psi = model.projector();
  std::vector<Triplet> t;
  for (int c = 0; c < psi.outerSize(); ++c)
    for (SpMat::InnerIterator it(psi, c); it; ++it)
      t.emplace_back(static_cast<int>(it.row()), static_cast<int>(model.index(field, c)), it.value());
  SpMat pk(psi.rows(), model.n_latent());
  pk.setFromTriplets(t.begin(), t.end());
  return SpMat(block * pk);
}

bool one_per_row(const SpMat& b) {
  Eigen::VectorXi count = Eigen::VectorXi::Zero(b.rows());
  for (int c = 0; c < b.outerSize(); ++c)
    for (SpMat::InnerIterator it(b, c); it; ++it)
      if (it.value() != 0.0) ++count[it.row()];
  return (count.array() <= 1).all();
}

Mat covariance_block(const Models& models, const Contrast& a, const Vec& theta, const std::vector<int>& subset) {
  const auto s = static_cast<Eigen::Index>(subset.size());
  SpMat pick(s, a.rows());
  std::vector<Triplet> t;
  for (Eigen::Index i = 0; i < s; ++i) t.emplace_back(static_cast<int>(i), subset[static_cast<std::size_t>(i)], 1.0);
  pick.setFromTriplets(t.begin(), t.end());
  Mat out = Mat::Zero(s, s);
  for (std::size_t m = 0; m < models.size(); ++m) {
    const SpMat b = pick * latent_operator(*models[m], a.blocks[m], a.field);
    LatentModel::Workspace ws;
    const Mat x = models[m]->posterior_solve(theta, ws, Mat(b.transpose()));
    out += b * x;
  }
  return 0.5 * (out + out.transpose());
}

}  // namespace

ThetaGaussian combine_theta_posteriors(const std::vector<ThetaGaussian>& subjects) {
  if (subjects.empty()) throw Error(Errc::InvalidArgument, "no subjects");
  const auto d = subjects.front().mean.size();
  Mat p = Mat::Zero(d, d);
  Vec rhs = Vec::Zero(d);
  for (const auto& s : subjects) {
    if (s.mean.size() != d || s.precision.rows() != d || s.precision.cols() != d)
      throw Error(Errc::DimensionMismatch, "subjects differ in hyperparameter dimension");
    p += s.precision;
    rhs += s.precision * s.mean;
  }
  Eigen::LLT<Mat> llt(p);
  if (llt.info() != Eigen::Success) throw Error(Errc::NotPositiveDefinite, "combined precision");
  return {llt.solve(rhs), p};
}

ThetaGaussian combine_theta_posteriors(const std::vector<SubjectFit>& fits) {
  std::vector<ThetaGaussian> g;
  for (const auto& f : fits) {
    // centre on the grid mean of theta (captures skewness the mode misses)
    Vec centre = Vec::Zero(f.mode.size());
    double wsum = 0.0;
    for (const auto& p : f.points) {
      centre += p.weight * p.theta;
      wsum += p.weight;
    }
    g.push_back({f.points.empty() || !(wsum > 0.0) ? f.mode : Vec(centre / wsum), f.neg_hessian});
  }
  return combine_theta_posteriors(g);
}

double joint_theta_log_posterior(const std::vector<double>& subject_log_post, double log_prior) {
  if (subject_log_post.empty()) throw Error(Errc::InvalidArgument, "no subjects");
  double s = 0.0;
  for (double v : subject_log_post) s += v;
  return s + (1.0 - static_cast<double>(subject_log_post.size())) * log_prior;
}

std::vector<double> group_weights(const std::vector<double>& log_prior, int n_subjects) {
  if (n_subjects < 1) throw Error(Errc::InvalidArgument, "need at least one subject");
  std::vector<double> lw;
  for (double lp : log_prior) lw.push_back((1.0 - n_subjects) * lp);
  return normalized_weights(lw);
}

std::vector<double> group_weights(const std::vector<Vec>& theta, const HyperPrior& prior, int n_subjects) {
  std::vector<double> lp;
  for (const auto& t : theta) lp.push_back(log_hyperprior(HyperState::from_free(t), prior));
  return group_weights(lp, n_subjects);
}

Contrast averaging_contrast(int n_subjects, int n_locations, int field) {
  if (n_subjects < 1 || n_locations < 1) throw Error(Errc::InvalidArgument, "empty contrast");
  Contrast a;
  a.field = field;
  SpMat eye(n_locations, n_locations);
  eye.setIdentity();
  a.blocks.assign(static_cast<std::size_t>(n_subjects), SpMat(eye / static_cast<double>(n_subjects)));
  return a;
}

GaussianField group_conditional(const std::vector<SubjectFit>& fits, const Contrast& a, const Vec& theta,
                                std::deque<LatentModel::Workspace>& workspaces) {
  const Models models = models_of(fits);
  check_contrast(models, a);
  workspaces.resize(models.size());
  GaussianField out{Vec::Zero(a.rows()), Vec::Zero(a.rows())};
  for (std::size_t m = 0; m < models.size(); ++m) {
    const LatentModel& model = *models[m];
    const SpMat b = latent_operator(model, a.blocks[m], a.field);
    const Conditional c = model.conditional(theta, workspaces[m], false);
    out.mean += b * c.mean;
    if (one_per_row(b)) {
      const Vec d = workspaces[m].post.inverse_diagonal();
      out.variance += b.cwiseAbs2() * d;
    } else {
      const Mat x = workspaces[m].post.solve(Mat(b.transpose()));
      for (Eigen::Index i = 0; i < b.rows(); ++i) out.variance[i] += (b.row(i) * x.col(i)).value();
    }
  }
  return out;
}

GaussianField group_conditional(const std::vector<SubjectFit>& fits, const Contrast& a, const Vec& theta) {
  std::deque<LatentModel::Workspace> ws;
  return group_conditional(fits, a, theta, ws);
}

Mat group_covariance(const std::vector<SubjectFit>& fits, const Contrast& a, const Vec& theta,
                     const std::vector<int>& subset) {
  const Models models = models_of(fits);
  check_contrast(models, a);
  return covariance_block(models, a, theta, subset);
}

GroupPosterior group_posterior(const std::vector<SubjectFit>& fits, const Contrast& a, const GroupOptions& opt) {
  if (opt.n_samples < 1) throw Error(Errc::InvalidArgument, "need at least one theta sample");
  const Models models = models_of(fits);
  check_contrast(models, a);
  GroupPosterior post;
  post.contrast = a;
  post.q = combine_theta_posteriors(fits);

  // theta ~ q: mean + L^{-T} z with precision L L'
  Eigen::LLT<Mat> llt(post.q.precision);
  if (llt.info() != Eigen::Success) throw Error(Errc::NotPositiveDefinite, "q(theta | y) precision");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  const auto d = post.q.mean.size();
  std::vector<double> log_prior;
  for (int l = 0; l < opt.n_samples; ++l) {
    Vec z(d);
    for (Eigen::Index i = 0; i < d; ++i) z[i] = normal(rng);
    const Vec t = post.q.mean + llt.matrixU().solve(z);
    post.theta.push_back(t);
    const LatentModel& m0 = *models.front();
    log_prior.push_back(log_hyperprior(HyperState::from_free(t, m0.ar_transform()), m0.hyperprior()));
  }
  post.weights = group_weights(log_prior, static_cast<int>(models.size()));

  const std::size_t n = post.theta.size();
  post.means.resize(n);
  post.variances.resize(n);
  const unsigned workers = opt.workers == 0 ? default_workers() : opt.workers;
  const std::size_t nw = std::max<std::size_t>(1, std::min<std::size_t>(workers, n));
  parallel_for(nw, static_cast<unsigned>(nw), [&](std::size_t w) {
    std::deque<LatentModel::Workspace> ws;  // analyses reused across this worker's draws
    for (std::size_t l = n * w / nw; l < n * (w + 1) / nw; ++l) {
      GaussianField g = group_conditional(fits, a, post.theta[l], ws);
      post.means[l] = std::move(g.mean);
      post.variances[l] = std::move(g.variance);
    }
  });
  mixture_moments(post.weights, post.means, post.variances, post.mean, post.variance);
  return post;
}

MixtureView group_view(const std::vector<SubjectFit>& fits, const GroupPosterior& post) {
  const Models models = models_of(fits);
  check_contrast(models, post.contrast);
  MixtureView view;
  view.weights = post.weights;
  view.means = post.means;
  view.variances = post.variances;
  view.covariance = [models, a = post.contrast, theta = post.theta](std::size_t comp, const std::vector<int>& s) {
    return covariance_block(models, a, theta[comp], s);
  };
  return view;
}

ExcursionResult group_excursions(const std::vector<SubjectFit>& fits, const GroupPosterior& post, double gamma,
                                 double alpha, const ExcursionOptions& opt) {
  return threshold(excursion_mixture(group_view(fits, post), gamma, opt), alpha);
}

TwoLevelMode parse_two_level_mode(const std::string& s) {
  if (s == "plugin") return TwoLevelMode::Plugin;
  if (s == "sampling") return TwoLevelMode::Sampling;
  throw Error(Errc::InvalidArgument, "unknown two-level mode '" + s + "'");
}

Mat draw_subject_maps(const std::vector<SubjectFit>& fits, int field, Seed seed) {
  const Models models = models_of(fits);
  Mat out(static_cast<Eigen::Index>(fits.size()), models.front()->n_locations());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;
  for (std::size_t m = 0; m < fits.size(); ++m) {
    const LatentModel& model = *models[m];
    if (model.n_locations() != out.cols()) throw Error(Errc::DimensionMismatch, "subjects differ in locations");
    const auto& pts = fits[m].points;
    if (pts.empty()) throw Error(Errc::InvalidArgument, "subject fit without grid points");
    double u = unif(rng), acc = 0.0;
    std::size_t pick = pts.size() - 1;
    for (std::size_t l = 0; l < pts.size(); ++l) {
      acc += pts[l].weight;
      if (u < acc) {
        pick = l;
        break;
      }
    }
    Vec z(model.n_latent());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    LatentModel::Workspace ws;
    const Conditional c = model.conditional(pts[pick].theta, ws, false);
    const Vec w = c.mean + ws.post.sample_zero_mean(z);
    out.row(static_cast<Eigen::Index>(m)) = (model.projector() * w.segment(field * model.n_mesh(), model.n_mesh())).transpose();
  }
  return out;
}

TwoLevelResult two_level_from_responses(const LatentModel& like, const std::vector<Mat>& responses, double gamma,
                                        const TwoLevelOptions& opt) {
  if (responses.empty()) throw Error(Errc::InvalidArgument, "no second-level responses");
  const Eigen::Index n_sub = responses.front().rows();
  const Mat x = opt.design.size() > 0 ? opt.design : Mat::Ones(n_sub, 1);
  if (x.rows() != n_sub) throw Error(Errc::DimensionMismatch, "second-level design rows must equal subjects");
  if (opt.contrast < 0 || opt.contrast >= x.cols()) throw Error(Errc::IndexOutOfRange, "second-level contrast");
  const Eigen::Index n = like.n_locations();

  TwoLevelResult res;
  res.mean = Vec::Zero(n);
  res.variance = Vec::Zero(n);
  Vec f = Vec::Zero(n), marg = Vec::Zero(n), se2 = Vec::Zero(n);
  for (const Mat& y : responses) {
    if (y.rows() != n_sub || y.cols() != n) throw Error(Errc::DimensionMismatch, "second-level response size");
    auto model = std::make_shared<LatentModel>(like.prior(), like.projector(), summarize(y, x), like.hyperprior());
    const SubjectFit fit = fit_subject(model, opt.fit);
    res.mean += fit.field_mean(opt.contrast);
    res.variance += fit.field_variance(opt.contrast);
    const ExcursionResult e = excursion_mixture(fit, opt.contrast, gamma, opt.excursion);
    f += e.F;
    marg += e.marginal;
    se2 += e.se.cwiseAbs2();
  }
  const double l = static_cast<double>(responses.size());
  res.n_fits = static_cast<int>(responses.size());
  res.mean /= l;
  res.variance /= l;
  res.excursion.gamma = gamma;
  res.excursion.F = f / l;
  res.excursion.marginal = marg / l;
  res.excursion.se = se2.cwiseSqrt() / l;
  res.excursion.order = rank_locations(res.excursion.marginal);
  return res;
}

TwoLevelResult two_level_fit(const std::vector<SubjectFit>& fits, int field, double gamma,
                             const TwoLevelOptions& opt) {
  const Models models = models_of(fits);
  if (models.empty()) throw Error(Errc::InvalidArgument, "no subjects");
  const Eigen::Index n = models.front()->n_locations();
  std::vector<Mat> responses;
  if (opt.mode == TwoLevelMode::Plugin) {
    Mat y(static_cast<Eigen::Index>(fits.size()), n);
    for (std::size_t m = 0; m < fits.size(); ++m) {
      if (models[m]->n_locations() != n) throw Error(Errc::DimensionMismatch, "subjects differ in locations");
      y.row(static_cast<Eigen::Index>(m)) = fits[m].field_mean(field).transpose();
    }
    responses.push_back(std::move(y));
  } else {
    if (opt.n_samples < 1) throw Error(Errc::InvalidArgument, "need at least one posterior draw");
    for (int l = 0; l < opt.n_samples; ++l)
      responses.push_back(draw_subject_maps(fits, field, mix_seed(opt.seed, static_cast<std::uint64_t>(l))));
  }
  return two_level_from_responses(*models.front(), responses, gamma, opt);
}

}  // namespace sbglm
