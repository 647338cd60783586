#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "sbglm/error.hpp"
#include "sbglm/fem.hpp"
#include "sbglm/group.hpp"
#include "sbglm/mesh.hpp"
#include "sbglm/spde.hpp"

using namespace sbglm;

namespace {

Mat gaussian_matrix(int r, int c, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> n;
  Mat m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

struct Subject {
  Mat y, x;
  std::shared_ptr<LatentModel> model;
};

// Subjects on one small lattice; `seed` varies noise and design.
Subject make_subject(const TriMesh& mesh, int n, int t, int k, unsigned seed, double amp = 0.8) {
  Subject s;
  s.x = gaussian_matrix(t, k, seed);
  Mat beta(k, n);
  for (int f = 0; f < k; ++f)
    for (int v = 0; v < n; ++v) beta(f, v) = amp * std::sin(0.7 * v + f);
  s.y = s.x * beta + 0.7 * gaussian_matrix(t, n, seed + 100);
  SpdeOperator op(mass_matrix(mesh), stiffness_matrix(mesh));
  s.model = std::make_shared<LatentModel>(op, mesh.data_projector(), summarize(s.y, s.x));
  return s;
}

SubjectFit fit(const Subject& s, GridStrategy strategy = GridStrategy::Grid) {
  FitOptions opt;
  opt.grid.strategy = strategy;
  return fit_subject(s.model, opt);
}

double normal_logpdf(double x, double m, double v) {
  return -0.5 * (std::log(2 * std::numbers::pi * v) + (x - m) * (x - m) / v);
}

}  // namespace

TEST_CASE("combining hyperparameter posteriors") {
  const ThetaGaussian a{Vec::Constant(1, 0.0), Mat::Constant(1, 1, 1.0)};
  const ThetaGaussian b{Vec::Constant(1, 2.0), Mat::Constant(1, 1, 1.0)};
  const auto c = combine_theta_posteriors(std::vector<ThetaGaussian>{a, b});
  CHECK(c.mean[0] == doctest::Approx(1.0));
  CHECK(c.precision(0, 0) == doctest::Approx(2.0));

  const ThetaGaussian g{(Vec(2) << 0.3, -1.0).finished(), (Mat(2, 2) << 2.0, 0.5, 0.5, 1.0).finished()};
  const auto one = combine_theta_posteriors(std::vector<ThetaGaussian>{g});
  CHECK((one.mean - g.mean).norm() < 1e-14);
  CHECK((one.precision - g.precision).norm() == 0.0);
  const auto three = combine_theta_posteriors(std::vector<ThetaGaussian>{g, g, g});
  CHECK((three.mean - g.mean).norm() < 1e-14);
  CHECK((three.precision - 3.0 * g.precision).norm() < 1e-14);

  const ThetaGaussian bad{Vec::Zero(3), Mat::Identity(3, 3)};
  CHECK_THROWS_AS(combine_theta_posteriors(std::vector<ThetaGaussian>{g, bad}), Error);
}

TEST_CASE("group importance weights") {
  const double l0 = normal_logpdf(0.0, 0.0, 1.0), l1 = normal_logpdf(1.0, 0.0, 1.0);
  // M = 1: exponent zero, uniform
  const auto w1 = group_weights(std::vector<double>{l0, l1, -30.0}, 1);
  for (double w : w1) CHECK(w == doctest::Approx(1.0 / 3.0));
  // M = 2: raw weight is the reciprocal prior density
  CHECK(std::exp(-l0) == doctest::Approx(std::sqrt(2 * std::numbers::pi)));
  const auto w2 = group_weights(std::vector<double>{l0, l1}, 2);
  CHECK(w2[0] / w2[1] == doctest::Approx(std::exp(l1 - l0)));
  // equal densities -> equal weights; rescaling the density cancels
  const auto we = group_weights(std::vector<double>{l1, l1}, 4);
  CHECK(we[0] == doctest::Approx(0.5));
  const auto ws = group_weights(std::vector<double>{l0 + 7.0, l1 + 7.0}, 2);
  CHECK(ws[0] == doctest::Approx(w2[0]).epsilon(1e-12));
  CHECK_THROWS_AS(group_weights(std::vector<double>{l0}, 0), Error);
}

TEST_CASE("joint theta posterior identity on a conjugate toy") {
  // theta ~ N(0, 4), y_m,i | theta ~ N(theta, 1)
  const double prior_var = 4.0;
  const std::vector<std::vector<double>> data{{0.3, 1.1, 0.8}, {1.5, 0.2}, {0.9, 1.2, 0.4, 1.0}};
  std::vector<double> lhs, rhs;
  for (double theta = -3.0; theta <= 4.0; theta += 0.05) {
    double loglik = 0.0;
    std::vector<double> post;
    for (const auto& y : data) {
      double s = 0.0;
      for (double v : y) {
        loglik += normal_logpdf(v, theta, 1.0);
        s += v;
      }
      const double prec = 1.0 / prior_var + static_cast<double>(y.size());
      post.push_back(normal_logpdf(theta, s / prec, 1.0 / prec));
    }
    const double lp = normal_logpdf(theta, 0.0, prior_var);
    lhs.push_back(loglik);
    // pi(y | theta) ∝ pi(theta)^{-M} prod_m pi(theta | y_m)
    rhs.push_back(joint_theta_log_posterior(post, lp) - lp);
  }
  const auto a = normalized_weights(lhs), b = normalized_weights(rhs);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6 * std::max(1e-300, a[i]) + 1e-15);
}

TEST_CASE("group conditional for identical and selected subjects") {
  const LatticeMask mask(3, 3, true);
  const TriMesh mesh = triangulate_lattice(mask, 30.0, 1);
  const int n = mask.count();
  const Subject s = make_subject(mesh, n, 25, 2, 1);
  const SubjectFit f = fit(s, GridStrategy::EmpiricalBayes);
  const Vec theta = f.mode;
  const Conditional c = s.model->conditional(theta, true);
  const Vec single_mean = s.model->projector() * c.mean.segment(s.model->n_mesh(), s.model->n_mesh());
  const Vec single_var =
      s.model->projector().cwiseAbs2() * c.variance.segment(s.model->n_mesh(), s.model->n_mesh());

  const std::vector<SubjectFit> same{f, f, f};
  const auto g = group_conditional(same, averaging_contrast(3, n, 1), theta);
  CHECK((g.mean - single_mean).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((g.variance - single_var / 3.0).cwiseAbs().maxCoeff() < 1e-10);

  const Subject s2 = make_subject(mesh, n, 25, 2, 2);
  const SubjectFit f2 = fit(s2, GridStrategy::EmpiricalBayes);
  Contrast pick;
  pick.field = 1;
  SpMat eye(n, n);
  eye.setIdentity();
  pick.blocks = {eye, SpMat(n, n)};
  const auto sel = group_conditional(std::vector<SubjectFit>{f, f2}, pick, theta);
  CHECK((sel.mean - single_mean).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((sel.variance - single_var).cwiseAbs().maxCoeff() < 1e-10);

  CHECK_THROWS_AS(group_conditional(std::vector<SubjectFit>{f}, pick, theta), Error);
}

TEST_CASE("group covariance matches a dense oracle for a general contrast") {
  const LatticeMask mask(2, 3, true);
  const TriMesh mesh = triangulate_lattice(mask, 30.0, 1);
  const int n = mask.count();
  const Subject s1 = make_subject(mesh, n, 20, 1, 5), s2 = make_subject(mesh, n, 20, 1, 6);
  const std::vector<SubjectFit> fits{fit(s1, GridStrategy::EmpiricalBayes), fit(s2, GridStrategy::EmpiricalBayes)};
  const Vec theta = fits[0].mode;
  Contrast a;
  const Mat d1 = gaussian_matrix(2, n, 8), d2 = gaussian_matrix(2, n, 9);  // dense rows: general path
  a.blocks = {d1.sparseView(), d2.sparseView()};
  Mat oracle = Mat::Zero(2, 2);
  Vec mean = Vec::Zero(2);
  for (int m = 0; m < 2; ++m) {
    const auto& model = *fits[m].model;
    const Mat sigma = Mat(model.posterior_precision(theta)).inverse();
    const Mat b = (m == 0 ? d1 : d2) * Mat(model.projector());
    oracle += b * sigma * b.transpose();
    mean += b * model.conditional(theta).mean;
  }
  const auto g = group_conditional(fits, a, theta);
  CHECK((g.mean - mean).norm() < 1e-10);
  for (int i = 0; i < 2; ++i) CHECK(g.variance[i] == doctest::Approx(oracle(i, i)).epsilon(1e-9));
  const Mat cov = group_covariance(fits, a, theta, {1, 0});
  CHECK(cov(0, 0) == doctest::Approx(oracle(1, 1)).epsilon(1e-9));
  CHECK(cov(0, 1) == doctest::Approx(oracle(1, 0)).epsilon(1e-9));
  CHECK(cov(1, 1) == doctest::Approx(oracle(0, 0)).epsilon(1e-9));
}

TEST_CASE("group posterior basics") {
  const LatticeMask mask(3, 3, true);
  const TriMesh mesh = triangulate_lattice(mask, 30.0, 1);
  const int n = mask.count();
  const Subject s1 = make_subject(mesh, n, 25, 1, 11), s2 = make_subject(mesh, n, 25, 1, 12);
  const SubjectFit f1 = fit(s1), f2 = fit(s2);

  GroupOptions opt;
  opt.n_samples = 1;
  const auto one = group_posterior({f1, f2}, averaging_contrast(2, n), opt);
  REQUIRE(one.size() == 1);
  CHECK(one.weights[0] == 1.0);
  const auto at = group_conditional({f1, f2}, averaging_contrast(2, n), one.theta[0]);
  CHECK((one.mean - at.mean).norm() < 1e-12);
  CHECK((one.variance - at.variance).norm() < 1e-12);

  opt.n_samples = 20;
  const auto ab = group_posterior({f1, f2}, averaging_contrast(2, n), opt);
  const auto ba = group_posterior({f2, f1}, averaging_contrast(2, n), opt);
  CHECK((ab.mean - ba.mean).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((ab.variance - ba.variance).cwiseAbs().maxCoeff() < 1e-8);
  double wsum = 0.0;
  for (double w : ab.weights) {
    CHECK(w >= 0.0);
    wsum += w;
  }
  CHECK(wsum == doctest::Approx(1.0));

  // excursions: single draw equals the conditional excursion on that Gaussian
  ExcursionOptions eo;
  eo.n_mc = 20000;
  const auto e1 = group_excursions({f1, f2}, one, 0.2, 0.05, eo);
  MixtureView v;
  v.weights = {1.0};
  v.means = {at.mean};
  v.variances = {at.variance};
  v.covariance = [&](std::size_t, const std::vector<int>& s) {
    return group_covariance({f1, f2}, averaging_contrast(2, n), one.theta[0], s);
  };
  const auto e2 = threshold(excursion_mixture(v, 0.2, eo), 0.05);
  CHECK((e1.F - e2.F).cwiseAbs().maxCoeff() == 0.0);
  CHECK(e1.active == e2.active);
}

TEST_CASE("single-subject joint model reproduces the subject fit") {
  const LatticeMask mask(3, 3, true);
  const TriMesh mesh = triangulate_lattice(mask, 30.0, 1);
  const int n = mask.count();
  const Subject s = make_subject(mesh, n, 30, 1, 21);
  const SubjectFit f = fit(s);
  GroupOptions opt;
  opt.n_samples = 400;
  const auto post = group_posterior({f}, averaging_contrast(1, n), opt);
  // Monte Carlo error of the theta sampling, plus a 5% posterior-sd allowance
  // for the Gaussian q(theta | y) versus the subject's lattice quadrature
  Vec sd = Vec::Zero(n);
  for (const auto& m : post.means) sd += (m - post.mean).cwiseAbs2();
  sd = (sd / static_cast<double>(post.size())).cwiseSqrt();
  const Vec ref_mean = f.field_mean(0), ref_var = f.field_variance(0);
  for (int v = 0; v < n; ++v) {
    CHECK(std::abs(post.mean[v] - ref_mean[v]) < 4.0 * sd[v] / std::sqrt(400.0) + 0.05 * std::sqrt(ref_var[v]));
    CHECK(post.variance[v] == doctest::Approx(ref_var[v]).epsilon(0.05));
  }
}

TEST_CASE("two-subject group mean matches dense joint-model quadrature") {
  const LatticeMask mask(2, 2, true);
  const TriMesh mesh = triangulate_lattice(mask, 20.0, 1);
  const int n = mask.count();
  const Subject s1 = make_subject(mesh, n, 30, 1, 41), s2 = make_subject(mesh, n, 30, 1, 42);
  const std::vector<SubjectFit> fits{fit(s1), fit(s2)};
  GroupOptions opt;
  opt.n_samples = 400;
  const auto post = group_posterior(fits, averaging_contrast(2, n), opt);

  // oracle: all subjects in one model, tensor quadrature over the shared theta
  Eigen::SelfAdjointEigenSolver<Mat> es(post.q.precision);
  const Mat scale = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal();
  std::vector<double> logw;
  std::vector<Vec> means;
  const double h = 0.25;
  for (double z0 = -4; z0 <= 4 + 1e-9; z0 += h)
    for (double z1 = -4; z1 <= 4 + 1e-9; z1 += h)
      for (double z2 = -4; z2 <= 4 + 1e-9; z2 += h) {
        const Vec theta = post.q.mean + scale * Eigen::Vector3d(z0, z1, z2);
        const double lp = log_hyperprior(s1.model->state(theta));
        logw.push_back(
            joint_theta_log_posterior({s1.model->log_posterior(theta), s2.model->log_posterior(theta)}, lp));
        means.push_back(0.5 * (s1.model->projector() * s1.model->conditional(theta).mean +
                               s2.model->projector() * s2.model->conditional(theta).mean));
      }
  const auto w = normalized_weights(logw);
  Vec oracle = Vec::Zero(n);
  for (std::size_t i = 0; i < w.size(); ++i) oracle += w[i] * means[i];
  CHECK((post.mean - oracle).cwiseAbs().maxCoeff() <= 0.02 * oracle.cwiseAbs().maxCoeff());
}

TEST_CASE("two-level fits") {
  const LatticeMask mask(3, 3, true);
  const TriMesh mesh = triangulate_lattice(mask, 30.0, 1);
  const int n = mask.count();
  const Subject s = make_subject(mesh, n, 30, 1, 51);
  const SubjectFit f = fit(s, GridStrategy::EmpiricalBayes);
  TwoLevelOptions opt;
  opt.fit.grid.strategy = GridStrategy::EmpiricalBayes;
  opt.excursion.n_mc = 4000;

  // identical subject maps: the second-level data is that map
  const Mat y = f.field_mean(0).transpose().replicate(3, 1);
  const auto plug = two_level_fit({f, f, f}, 0, 0.0, opt);
  const auto direct = two_level_from_responses(*s.model, {y}, 0.0, opt);
  CHECK(plug.n_fits == 1);
  CHECK((plug.mean - direct.mean).norm() < 1e-12);
  CHECK((plug.excursion.F - direct.excursion.F).norm() == 0.0);

  // degenerate draws: averaging identical fits equals the plug-in fit
  const auto repeated = two_level_from_responses(*s.model, {y, y, y}, 0.0, opt);
  CHECK(repeated.n_fits == 3);
  CHECK((repeated.mean - plug.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((repeated.excursion.F - plug.excursion.F).cwiseAbs().maxCoeff() < 1e-12);

  // L = 1 sampling is one fit on one posterior draw
  opt.mode = TwoLevelMode::Sampling;
  opt.n_samples = 1;
  const auto samp = two_level_fit({f, f, f}, 0, 0.0, opt);
  CHECK(samp.n_fits == 1);
  CHECK(samp.mean.allFinite());
  opt.n_samples = 3;
  const auto a = two_level_fit({f, f, f}, 0, 0.0, opt);
  const auto b = two_level_fit({f, f, f}, 0, 0.0, opt);
  CHECK(a.mean == b.mean);
  CHECK(a.n_fits == 3);

  CHECK(parse_two_level_mode("plugin") == TwoLevelMode::Plugin);
  CHECK(parse_two_level_mode("sampling") == TwoLevelMode::Sampling);
  CHECK_THROWS_AS(parse_two_level_mode("mixed"), Error);
}

TEST_CASE("draws of subject maps follow the posterior") {
  const LatticeMask mask(2, 2, true);
  const TriMesh mesh = triangulate_lattice(mask, 20.0, 1);
  const int n = mask.count();
  const Subject s = make_subject(mesh, n, 30, 1, 61);
  const SubjectFit f = fit(s, GridStrategy::EmpiricalBayes);
  const int draws = 4000;
  Vec sum = Vec::Zero(n), sum2 = Vec::Zero(n);
  for (int d = 0; d < draws; ++d) {
    const Vec m = draw_subject_maps({f}, 0, static_cast<Seed>(d + 1)).row(0).transpose();
    sum += m;
    sum2 += m.cwiseAbs2();
  }
  const Vec mean = sum / draws, var = sum2 / draws - mean.cwiseAbs2();
  const Vec ref_mean = f.field_mean(0), ref_var = f.field_variance(0);
  for (int v = 0; v < n; ++v) {
    CHECK(std::abs(mean[v] - ref_mean[v]) < 4.0 * std::sqrt(ref_var[v] / draws));
    CHECK(var[v] == doctest::Approx(ref_var[v]).epsilon(0.1));
  }
}
