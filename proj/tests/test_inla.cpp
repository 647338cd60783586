#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "sbglm/error.hpp"
#include "sbglm/fem.hpp"
#include "sbglm/inla.hpp"
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

struct Toy {
  TriMesh mesh;
  Mat y, x;
  std::shared_ptr<LatentModel> model;
};

// Small lattice with boundary layers and K task fields sharing one design.
Toy make_toy(int rows, int cols, int t, int k, unsigned seed, int layers = 1) {
  Toy toy;
  LatticeMask mask(rows, cols, true);
  toy.mesh = triangulate_lattice(mask, 10.0 * std::max(rows, cols), layers);
  const int n = mask.count();
  toy.x = gaussian_matrix(t, k, seed);
  Mat beta(k, n);
  for (int f = 0; f < k; ++f)
    for (int v = 0; v < n; ++v) beta(f, v) = std::sin(0.7 * v + f) * 0.8;
  toy.y = toy.x * beta + 0.7 * gaussian_matrix(t, n, seed + 1);
  SpdeOperator op(mass_matrix(toy.mesh), stiffness_matrix(toy.mesh));
  toy.model = std::make_shared<LatentModel>(op, toy.mesh.data_projector(), summarize(toy.y, toy.x));
  return toy;
}

// Dense oracle: stacked design A (T N x n K) acting on the latent weights.
Mat dense_design(const Toy& toy) {
  const Mat psi(toy.model->projector());
  const int t = static_cast<int>(toy.x.rows()), n = static_cast<int>(psi.rows());
  const int k = static_cast<int>(toy.x.cols());
  const auto nm = toy.model->n_mesh();
  Mat a = Mat::Zero(t * n, nm * k);
  for (int v = 0; v < n; ++v)
    for (int f = 0; f < k; ++f)
      for (int s = 0; s < t; ++s) a.row(v * t + s).segment(f * nm, nm) += toy.x(s, f) * psi.row(v);
  return a;
}

Vec stacked(const Mat& y) { return Eigen::Map<const Vec>(y.data(), y.size()); }

double dense_log_marginal(const Toy& toy, const Vec& theta) {
  const Mat a = dense_design(toy);
  const Mat q(toy.model->prior_precision(theta));
  const double xi = std::exp(theta[0]);
  const Mat cov = a * q.inverse() * a.transpose() + Mat::Identity(a.rows(), a.rows()) / xi;
  const Eigen::LLT<Mat> llt(cov);
  const Vec y = stacked(toy.y);
  const Mat l = llt.matrixL();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(y.size()) * std::log(2 * std::numbers::pi) + logdet + y.dot(llt.solve(y)));
}

}  // namespace

TEST_CASE("conditional latent matches dense Gaussian conditioning") {
  const Toy toy = make_toy(3, 4, 20, 2, 3);
  Vec theta(5);
  theta << 0.3, -0.2, 0.4, 0.5, -0.3;
  const Conditional c = toy.model->conditional(theta, true);
  const Mat a = dense_design(toy);
  const Mat q(toy.model->prior_precision(theta));
  const double xi = std::exp(theta[0]);
  const Mat qpost = q + xi * a.transpose() * a;
  const Vec mean = qpost.ldlt().solve(xi * a.transpose() * stacked(toy.y));
  CHECK((c.mean - mean).norm() / mean.norm() < 1e-8);
  CHECK((Mat(c.precision) - qpost).norm() / qpost.norm() < 1e-12);
  const Vec var = qpost.inverse().diagonal();
  CHECK((c.variance - var).cwiseQuotient(var).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("zero data gives zero mean") {
  Toy toy = make_toy(2, 3, 10, 1, 5);
  toy.model = std::make_shared<LatentModel>(toy.model->prior(), toy.model->projector(),
                                            summarize(Mat::Zero(10, 6), toy.x));
  Vec theta = Vec::Zero(3);
  CHECK(toy.model->conditional(theta).mean.norm() == 0.0);
}

TEST_CASE("vanishing prior precision gives the least-squares estimate") {
  const Toy toy = make_toy(2, 3, 30, 2, 7, 0);
  Vec theta(5);
  theta << 0.0, -3.0, -9.0, -3.0, -9.0;
  const Conditional c = toy.model->conditional(theta);
  const Mat ols = (toy.x.transpose() * toy.x).ldlt().solve(toy.x.transpose() * toy.y);  // K x N
  const Mat psi(toy.model->projector());
  for (int f = 0; f < 2; ++f) {
    const Vec field = psi * c.mean.segment(f * toy.model->n_mesh(), toy.model->n_mesh());
    CHECK((field - ols.row(f).transpose()).norm() / ols.norm() < 1e-6);
  }
}

TEST_CASE("scalar least squares") {
  // one vertex with a unit "mesh" is not a triangle mesh, so use the smallest
  // lattice and a vanishing prior; each location reduces to sum x y / sum x^2
  const Toy toy = make_toy(2, 2, 25, 1, 9, 0);
  Vec theta(3);
  theta << 0.0, -4.0, -10.0;
  const Vec m = toy.model->projector() * toy.model->conditional(theta).mean;
  for (int v = 0; v < 4; ++v)
    CHECK(m[v] == doctest::Approx(toy.x.col(0).dot(toy.y.col(v)) / toy.x.squaredNorm()).epsilon(1e-8));
}

TEST_CASE("log marginal likelihood matches the dense Gaussian marginal") {
  const Toy toy = make_toy(3, 3, 12, 2, 11);
  for (int rep = 0; rep < 3; ++rep) {
    Vec theta(5);
    theta << -0.4 + 0.3 * rep, 0.2 * rep - 0.5, 0.1, -0.3, 0.3 * rep;
    LatentModel::Workspace ws;
    const Evaluation ev = toy.model->evaluate(theta, ws);
    CHECK(ev.log_likelihood == doctest::Approx(dense_log_marginal(toy, theta)).epsilon(1e-10));
    CHECK(ev.log_posterior - ev.log_likelihood ==
          doctest::Approx(log_hyperprior(toy.model->state(theta), toy.model->hyperprior())));
  }
}

TEST_CASE("analytic gradient matches finite differences") {
  const Toy toy = make_toy(4, 4, 20, 2, 13);
  Vec theta(5);
  theta << 0.2, -0.7, 0.6, -0.1, -0.4;
  LatentModel::Workspace ws;
  const Evaluation ev = toy.model->evaluate(theta, ws, true);
  for (int i = 0; i < 5; ++i) {
    const double h = 1e-5;
    Vec tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    const double fd = (toy.model->evaluate(tp, ws).log_posterior - toy.model->evaluate(tm, ws).log_posterior) / (2 * h);
    CHECK(ev.gradient[i] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("log posterior invariants") {
  const Toy toy = make_toy(3, 3, 15, 1, 17);
  Vec theta(3);
  theta << 0.1, -0.2, 0.3;
  // reordering time points leaves the statistics, hence the value, unchanged
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(15);
  perm.setIdentity();
  std::mt19937 rng(3);
  std::shuffle(perm.indices().data(), perm.indices().data() + 15, rng);
  const LatentModel shuffled(toy.model->prior(), toy.model->projector(), summarize(perm * toy.y, perm * toy.x));
  CHECK(shuffled.log_posterior(theta) == doctest::Approx(toy.model->log_posterior(theta)).epsilon(1e-12));

  // duplicated independent data doubles the data-dependent term
  const ModelData d2 = stack(toy.model->data(), toy.model->data());
  const LatentModel twice(toy.model->prior(), toy.model->projector(), d2);
  LatentModel::Workspace ws;
  // the duplicate shares the latent field, so compare where the prior pins
  // the field at zero and the likelihood factorizes over the two copies
  Vec tight = theta;
  tight[2] = 12.0;
  const double a = toy.model->evaluate(tight, ws).log_likelihood;
  const double b = twice.evaluate(tight, ws).log_likelihood;
  CHECK(b == doctest::Approx(2 * a).epsilon(1e-6));

  // shifting the prior mean of log tau shifts log pi(theta | y) by a known constant
  HyperPrior hp;
  hp.log_tau_mean = 0.5;
  const LatentModel shifted(toy.model->prior(), toy.model->projector(), toy.model->data(), hp);
  Vec t2 = theta;
  const double delta = shifted.log_posterior(t2) - toy.model->log_posterior(t2);
  const double expected = -0.5 * (theta[2] - 0.5) * (theta[2] - 0.5) + 0.5 * theta[2] * theta[2];
  CHECK(delta == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("1-dim conjugate toy marginal likelihood") {
  // single location on the smallest lattice with a vanishing spatial
  // coupling: y_t = x_t b + e_t, b ~ N(0, s2) with s2 from the prior block
  const Toy toy = make_toy(2, 2, 8, 1, 19, 0);
  Vec theta(3);
  theta << 0.4, -0.3, 0.2;
  // closed form via the full covariance of vec(Y): X Sigma_b X' kron + I / xi
  CHECK(toy.model->evaluate(theta, *std::make_unique<LatentModel::Workspace>()).log_likelihood ==
        doctest::Approx(dense_log_marginal(toy, theta)).epsilon(1e-10));
}

TEST_CASE("maximize on a quadratic objective") {
  Mat a(3, 3);
  a << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  Vec c(3);
  c << 1, -2, 0.5;
  const Objective f = [&](const Vec& x, Vec* g) {
    const Vec d = x - c;
    if (g) *g = -a * d;
    return -0.5 * d.dot(a * d) + 7.0;
  };
  const OptimResult r = maximize(f, Vec::Zero(3));
  CHECK((r.mode - c).norm() < 1e-6);
  CHECK((r.neg_hessian - a).norm() < 1e-6);
  CHECK(r.value == doctest::Approx(7.0));
  const OptimResult r0 = maximize(f, c);
  CHECK(r0.iterations <= 1);
  CHECK((r0.mode - c).norm() < 1e-9);

  const Objective flat = [](const Vec& x, Vec* g) {
    if (g) *g = Vec::Constant(x.size(), 1.0);
    return x.sum();
  };
  OptimOptions few;
  few.max_iter = 3;
  try {
    maximize(flat, Vec::Zero(2), few);
    FAIL("expected NonConvergence");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NonConvergence);
  }
}

TEST_CASE("theta grid weights") {
  const auto gauss = [](const Vec& t) { return -0.5 * t.squaredNorm() / 0.25; };
  Mat h = Mat::Identity(1, 1) * 4.0;
  const ThetaGrid g = theta_grid(gauss, Vec::Zero(1), h);
  // z in {-2..2}: exp(-z^2/2) < exp(-2.5) beyond |z| = 2
  REQUIRE(g.size() == 5);
  double total = 0.0, norm = 0.0;
  for (int z = -2; z <= 2; ++z) norm += std::exp(-0.5 * z * z);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const int z = g.z[i][0];
    CHECK(g.points[i][0] == doctest::Approx(0.5 * z));
    CHECK(g.weights[i] == doctest::Approx(std::exp(-0.5 * z * z) / norm));
    total += g.weights[i];
  }
  CHECK(total == doctest::Approx(1.0));

  GridOptions eb;
  eb.strategy = GridStrategy::EmpiricalBayes;
  const ThetaGrid one = theta_grid(gauss, Vec::Zero(1), h, eb);
  CHECK(one.size() == 1);
  CHECK(one.weights[0] == 1.0);

  // 5-dim standard Gaussian: lattice points with |z|^2 < 5
  const ThetaGrid g5 = theta_grid([](const Vec& t) { return -0.5 * t.squaredNorm(); }, Vec::Zero(5),
                                  Mat::Identity(5, 5));
  int count = 0;
  for (int a = -2; a <= 2; ++a)
    for (int b = -2; b <= 2; ++b)
      for (int c = -2; c <= 2; ++c)
        for (int d = -2; d <= 2; ++d)
          for (int e = -2; e <= 2; ++e)
            if (a * a + b * b + c * c + d * d + e * e < 5) ++count;
  CHECK(static_cast<int>(g5.size()) == count);
  CHECK(parse_strategy("eb") == GridStrategy::EmpiricalBayes);
  CHECK_THROWS_AS(parse_strategy("ccd"), Error);
}

TEST_CASE("mixture moments") {
  const std::vector<Vec> means{Vec::Constant(2, 1.0), Vec::Constant(2, 3.0)};
  const std::vector<Vec> vars{Vec::Constant(2, 0.5), Vec::Constant(2, 0.25)};
  Vec m, v;
  mixture_moments({0.25, 0.75}, means, vars, m, v);
  CHECK(m[0] == doctest::Approx(2.5));
  CHECK(v[0] == doctest::Approx(0.25 * (0.5 + 1) + 0.75 * (0.25 + 9) - 6.25));
  CHECK(v[0] >= 0.25);
}

TEST_CASE("fit_subject single point equals the conditional") {
  const Toy toy = make_toy(3, 3, 30, 1, 23);
  FitOptions opt;
  opt.grid.strategy = GridStrategy::EmpiricalBayes;
  const SubjectFit fit = fit_subject(toy.model, opt);
  REQUIRE(fit.points.size() == 1);
  const Conditional c = toy.model->conditional(fit.mode, true);
  CHECK((fit.latent_mean() - c.mean).norm() < 1e-12);
  CHECK((fit.latent_variance() - c.variance).norm() < 1e-12);
  CHECK((fit.field_mean(0) - toy.model->projector() * c.mean).norm() < 1e-12);
}

TEST_CASE("posterior mean matches dense quadrature over theta") {
  // N = 4 lattice, T = 30, one task: 3 hyperparameters
  const Toy toy = make_toy(2, 2, 30, 1, 29, 1);
  FitOptions opt;
  const SubjectFit fit = fit_subject(toy.model, opt);
  CHECK(fit.points.size() > 10);
  double wsum = 0.0;
  for (const auto& p : fit.points) wsum += p.weight;
  CHECK(wsum == doctest::Approx(1.0));

  // oracle: fine tensor quadrature in the eigen-coordinates of the Hessian
  Eigen::SelfAdjointEigenSolver<Mat> es(fit.neg_hessian);
  const Mat scale = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal();
  const Mat a = dense_design(toy);
  const Vec y = stacked(toy.y);
  std::vector<double> logw;
  std::vector<Vec> means;
  const double h = 0.25;
  for (double z0 = -4; z0 <= 4 + 1e-9; z0 += h)
    for (double z1 = -4; z1 <= 4 + 1e-9; z1 += h)
      for (double z2 = -4; z2 <= 4 + 1e-9; z2 += h) {
        const Vec theta = fit.mode + scale * Eigen::Vector3d(z0, z1, z2);
        const double xi = std::exp(theta[0]);
        const Mat q(toy.model->prior_precision(theta));
        const Mat qpost = q + xi * a.transpose() * a;
        logw.push_back(dense_log_marginal(toy, theta) + log_hyperprior(toy.model->state(theta)));
        means.push_back(toy.model->projector() * qpost.ldlt().solve(xi * a.transpose() * y));
      }
  const auto w = normalized_weights(logw);
  Vec oracle = Vec::Zero(4);
  for (std::size_t i = 0; i < w.size(); ++i) oracle += w[i] * means[i];
  const Vec est = fit.field_mean(0);
  // relative to the map scale: one true amplitude is zero
  CHECK((est - oracle).cwiseAbs().maxCoeff() <= 0.02 * oracle.cwiseAbs().maxCoeff());
}

TEST_CASE("symmetric input gives a symmetric posterior mean") {
  // a dataset invariant under the half-turn (r, c) -> (2 - r, 3 - c), which
  // also maps the triangulation (fixed diagonal direction) onto itself
  LatticeMask mask(3, 4, true);
  const TriMesh mesh = triangulate_lattice(mask, 40.0, 0);
  const int t = 20;
  const Mat x = gaussian_matrix(t, 1, 31);
  const Mat noise = gaussian_matrix(t, 6, 32);
  Mat y(t, 12);
  for (int i = 0; i < 6; ++i) {
    const int r = i / 4, c = i % 4;
    const Vec col = x.col(0) * (1.0 + 0.5 * i) + 0.3 * noise.col(i);
    y.col(r * 4 + c) = col;
    y.col((2 - r) * 4 + (3 - c)) = col;
  }
  auto model = std::make_shared<LatentModel>(SpdeOperator(mass_matrix(mesh), stiffness_matrix(mesh)),
                                             mesh.data_projector(), summarize(y, x));
  FitOptions opt;
  opt.grid.strategy = GridStrategy::EmpiricalBayes;
  const Vec m = fit_subject(model, opt).field_mean(0);
  for (int i = 0; i < 12; ++i) CHECK(m[i] == doctest::Approx(m[11 - i]).epsilon(1e-8));
}
