#include "sbglm/excursions.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>

#include "sbglm/error.hpp"
#include "sbglm/parallel.hpp"

namespace sbglm {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double upper_tail(double mean, double var, double gamma) {
  if (var <= 0.0) return mean > gamma ? 1.0 : 0.0;
  return 0.5 * std::erfc((gamma - mean) / std::sqrt(2.0 * var));
}

// Lower Cholesky factor of a positive semidefinite matrix; columns with a
// vanishing pivot are zeroed (their variables are deterministic given the
// preceding ones).
Mat semidefinite_cholesky(const Mat& a) {
  Eigen::LLT<Mat> llt(a);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const auto n = a.rows();
  Mat l = Mat::Zero(n, n);
  const double tol = 1e-12 * std::max(1e-300, a.diagonal().cwiseAbs().maxCoeff());
  for (Eigen::Index j = 0; j < n; ++j) {
    const double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (d <= tol) {
      if (d < -1e-8 * std::max(1.0, a(j, j)))
        throw Error(Errc::NotPositiveDefinite, "excursion covariance is not positive semidefinite");
      continue;
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / ljj;
  }
  return l;
}

// F and its standard error from the first failing rank of each draw of every
// antithetic pair (s when the draw exceeds on the whole scored prefix). Pair
// means take values 0, 1/2, 1.
void summarize_pairs(const std::vector<int>& order, const std::vector<int>& fail_plus,
                     const std::vector<int>& fail_minus, Eigen::Index s, Vec& f, Vec& se) {
  const auto n_pairs = static_cast<int>(fail_plus.size());
  std::vector<double> lo_count(static_cast<std::size_t>(s) + 1, 0.0), hi_count(lo_count.size(), 0.0);
  for (int p = 0; p < n_pairs; ++p) {
    const int a = fail_plus[static_cast<std::size_t>(p)], b = fail_minus[static_cast<std::size_t>(p)];
    lo_count[static_cast<std::size_t>(std::min(a, b))] += 1.0;
    hi_count[static_cast<std::size_t>(std::max(a, b))] += 1.0;
  }
  double above_lo = n_pairs, above_hi = n_pairs;  // #pairs with lo > i, hi > i
  const double np = n_pairs;
  for (Eigen::Index i = 0; i < s; ++i) {
    above_lo -= lo_count[static_cast<std::size_t>(i)];
    above_hi -= hi_count[static_cast<std::size_t>(i)];
    const double sum = above_lo + 0.5 * (above_hi - above_lo);
    const double sum2 = above_lo + 0.25 * (above_hi - above_lo);
    const double fi = sum / np;
    const int loc = order[static_cast<std::size_t>(i)];
    f[loc] = fi;
    se[loc] = n_pairs > 1 ? std::sqrt(std::max(0.0, (sum2 - np * fi * fi) / (np - 1.0)) / np) : 0.0;
  }
}

}  // namespace

Vec marginal_ppm(const MixtureView& view, double gamma, ExcursionType type) {
  if (view.size() == 0) throw Error(Errc::InvalidArgument, "empty mixture");
  const double sign = type == ExcursionType::Negative ? -1.0 : 1.0;
  const Eigen::Index m = view.n_locations();
  Vec p = Vec::Zero(m);
  double total = 0.0;
  for (std::size_t l = 0; l < view.size(); ++l) {
    const double w = view.weights[l];
    if (w == 0.0) continue;
    total += w;
    for (Eigen::Index i = 0; i < m; ++i) p[i] += w * upper_tail(sign * view.means[l][i], view.variances[l][i], gamma);
  }
  if (!(total > 0.0)) throw Error(Errc::DegenerateWeights, "mixture weights sum to zero");
  return p / total;
}

std::vector<int> rank_locations(const Vec& probability) {
  std::vector<int> order(static_cast<std::size_t>(probability.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probability[a] > probability[b]; });
  return order;
}

void joint_exceedance(const Vec& mean, const std::function<Mat(const std::vector<int>&)>& covariance,
                      const std::vector<int>& order, double gamma, int n_pairs, Seed seed, int initial_subset,
                      Vec& f, Vec& se) {
  const auto m = static_cast<Eigen::Index>(order.size());
  if (mean.size() != m) throw Error(Errc::DimensionMismatch, "ranking and mean differ in length");
  if (n_pairs < 1) throw Error(Errc::InvalidArgument, "need at least one antithetic pair");
  f = Vec::Zero(m);
  se = Vec::Zero(m);
  if (m == 0) return;

  constexpr int kChunkPairs = 512;
  constexpr Eigen::Index kRowBlock = 32;
  Eigen::Index s = std::clamp<Eigen::Index>(initial_subset, 1, m);
  std::vector<int> fail_plus, fail_minus;  // first failing rank per draw, s if none
  for (;;) {
    const std::vector<int> subset(order.begin(), order.begin() + s);
    const Mat sigma = covariance(subset);
    if (sigma.rows() != s || sigma.cols() != s) throw Error(Errc::DimensionMismatch, "covariance block size");
    const Mat l = semidefinite_cholesky(0.5 * (sigma + sigma.transpose()));
    Vec mu(s);
    for (Eigen::Index i = 0; i < s; ++i) mu[i] = mean[subset[static_cast<std::size_t>(i)]];

    fail_plus.assign(static_cast<std::size_t>(n_pairs), static_cast<int>(s));
    fail_minus.assign(static_cast<std::size_t>(n_pairs), static_cast<int>(s));
    bool survivor = false;
    for (int c0 = 0, chunk = 0; c0 < n_pairs; c0 += kChunkPairs, ++chunk) {
      const int cp = std::min(kChunkPairs, n_pairs - c0);
      std::mt19937_64 rng(splitmix(seed ^ splitmix(static_cast<std::uint64_t>(chunk))));
      std::normal_distribution<double> normal;
      Mat w(s, 2 * cp);
      for (int j = 0; j < cp; ++j)
        for (Eigen::Index i = 0; i < s; ++i) w(i, j) = normal(rng);
      w.rightCols(cp) = -w.leftCols(cp);
      std::vector<int> id(static_cast<std::size_t>(2 * cp));  // draw id: pair index, sign by half
      std::iota(id.begin(), id.end(), 0);

      for (Eigen::Index r0 = 0; r0 < s && w.cols() > 0; r0 += kRowBlock) {
        const Eigen::Index r1 = std::min(s, r0 + kRowBlock);
        Mat x = l.block(r0, 0, r1 - r0, r1) * w.topRows(r1);
        x.colwise() += mu.segment(r0, r1 - r0);
        std::vector<Eigen::Index> keep;
        keep.reserve(static_cast<std::size_t>(x.cols()));
        for (Eigen::Index d = 0; d < x.cols(); ++d) {
          Eigen::Index r = 0;
          while (r < x.rows() && x(r, d) > gamma) ++r;
          if (r < x.rows()) {
            const int draw = id[static_cast<std::size_t>(d)];
            auto& slot = draw < cp ? fail_plus[static_cast<std::size_t>(c0 + draw)]
                                   : fail_minus[static_cast<std::size_t>(c0 + draw - cp)];
            slot = static_cast<int>(r0 + r);
          } else {
            keep.push_back(d);
          }
        }
        if (static_cast<Eigen::Index>(keep.size()) < w.cols()) {
          Mat wk(s, static_cast<Eigen::Index>(keep.size()));
          std::vector<int> idk;
          for (std::size_t j = 0; j < keep.size(); ++j) {
            wk.col(static_cast<Eigen::Index>(j)) = w.col(keep[j]);
            idk.push_back(id[static_cast<std::size_t>(keep[j])]);
          }
          w.swap(wk);
          id.swap(idk);
        }
      }
      if (w.cols() > 0) survivor = true;
    }
    if (!survivor || s == m) break;
    s = std::min(m, 2 * s);  // some draw exceeded on the whole subset: enlarge it
  }

  summarize_pairs(order, fail_plus, fail_minus, s, f, se);
}

namespace {

// First failing rank of each draw of the pairs (mu + d, mu - d), with mu in
// ranked order and d in location order.
void score_pairs(const Vec& mu, const std::vector<int>& order, const Mat& d, double gamma, int c0,
                 std::vector<int>& fail_plus, std::vector<int>& fail_minus) {
  const auto m = mu.size();
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    Eigen::Index r = 0;
    while (r < m && mu[r] + d(order[static_cast<std::size_t>(r)], j) > gamma) ++r;
    fail_plus[static_cast<std::size_t>(c0 + j)] = static_cast<int>(r);
    r = 0;
    while (r < m && mu[r] - d(order[static_cast<std::size_t>(r)], j) > gamma) ++r;
    fail_minus[static_cast<std::size_t>(c0 + j)] = static_cast<int>(r);
  }
}

constexpr int kSampledChunkPairs = 256;

Seed chunk_seed(Seed seed, int chunk) { return splitmix(seed ^ splitmix(static_cast<std::uint64_t>(chunk))); }

// Independent streams per mixture component, so that component errors add in
// quadrature as the reported se assumes.
Seed component_seed(Seed seed, std::size_t comp) { return splitmix(splitmix(seed) + 0x632be59bd9b4e019ULL * (comp + 1)); }

Vec ranked(const Vec& mean, const std::vector<int>& order) {
  Vec mu(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) mu[i] = mean[order[static_cast<std::size_t>(i)]];
  return mu;
}

}  // namespace

void joint_exceedance_sampled(const Vec& mean, const FieldSampler& draw, const std::vector<int>& order, double gamma,
                              int n_pairs, Seed seed, Vec& f, Vec& se) {
  const auto m = static_cast<Eigen::Index>(order.size());
  if (mean.size() != m) throw Error(Errc::DimensionMismatch, "ranking and mean differ in length");
  if (n_pairs < 1) throw Error(Errc::InvalidArgument, "need at least one antithetic pair");
  f = Vec::Zero(m);
  se = Vec::Zero(m);
  if (m == 0) return;

  std::vector<int> fail_plus(static_cast<std::size_t>(n_pairs)), fail_minus(static_cast<std::size_t>(n_pairs));
  const Vec mu = ranked(mean, order);
  for (int c0 = 0, chunk = 0; c0 < n_pairs; c0 += kSampledChunkPairs, ++chunk) {
    const int cp = std::min(kSampledChunkPairs, n_pairs - c0);
    const Mat d = draw(cp, chunk_seed(seed, chunk));
    if (d.rows() != m || d.cols() != cp) throw Error(Errc::DimensionMismatch, "sampler returned a wrong shape");
    score_pairs(mu, order, d, gamma, c0, fail_plus, fail_minus);
  }
  summarize_pairs(order, fail_plus, fail_minus, m, f, se);
}

ExcursionResult excursion_mixture(const MixtureView& view, double gamma, const ExcursionOptions& opt) {
  if (opt.n_mc < 2) throw Error(Errc::InvalidArgument, "n_mc must be >= 2");
  ExcursionResult res;
  res.gamma = gamma;
  res.marginal = marginal_ppm(view, gamma, opt.type);
  res.order = rank_locations(res.marginal);
  const Eigen::Index m = view.n_locations();
  const double sign = opt.type == ExcursionType::Negative ? -1.0 : 1.0;

  double total = 0.0;
  for (double w : view.weights) total += w;
  const int likely = static_cast<int>((res.marginal.array() > 0.5).count());
  const int s0 = std::max(opt.initial_subset, likely + opt.initial_subset);

  std::vector<Vec> fs(view.size()), ses(view.size());
  parallel_for(view.size(), opt.workers, [&](std::size_t l) {
    const double w = view.weights[l] / total;
    if (w <= 0.0) return;
    const int pairs = std::max(1, static_cast<int>(std::llround(w * opt.n_mc / 2.0)));
    if (view.sampler) {
      const FieldSampler base = view.sampler(l);
      const FieldSampler draw = [&](int n, Seed s) { return Mat(sign * base(n, s)); };
      joint_exceedance_sampled(Vec(sign * view.means[l]), draw, res.order, gamma, pairs, component_seed(opt.seed, l), fs[l], ses[l]);
    } else {
      const auto cov = [&, l](const std::vector<int>& subset) { return view.covariance(l, subset); };
      joint_exceedance(Vec(sign * view.means[l]), cov, res.order, gamma, pairs, component_seed(opt.seed, l), s0, fs[l], ses[l]);
    }
  });
  res.F = Vec::Zero(m);
  Vec var = Vec::Zero(m);
  for (std::size_t l = 0; l < view.size(); ++l) {
    if (fs[l].size() == 0) continue;
    const double w = view.weights[l] / total;
    res.F += w * fs[l];
    var += (w * w) * ses[l].cwiseAbs2();
  }
  res.se = var.cwiseSqrt();
  return res;
}

ExcursionResult excursion_conditional(const Vec& mean, const SpMat& precision, double gamma,
                                      const ExcursionOptions& opt) {
  if (precision.rows() != mean.size() || precision.cols() != mean.size())
    throw Error(Errc::DimensionMismatch, "precision does not match the mean");
  auto chol = std::make_shared<SparseCholesky>(precision);
  MixtureView view;
  view.weights = {1.0};
  view.means = {mean};
  view.variances = {chol->inverse_diagonal()};
  view.covariance = [chol](std::size_t, const std::vector<int>& subset) {
    const auto n = chol->size();
    const auto k = static_cast<Eigen::Index>(subset.size());
    Mat e = Mat::Zero(n, k);
    for (Eigen::Index j = 0; j < k; ++j) e(subset[static_cast<std::size_t>(j)], j) = 1.0;
    const Mat x = chol->solve(e);
    Mat out(k, k);
    for (Eigen::Index j = 0; j < k; ++j) out.row(j) = x.row(subset[static_cast<std::size_t>(j)]);
    return out;
  };
  return excursion_mixture(view, gamma, opt);
}

namespace {

// Data location -> mesh vertex of a selection projector.
std::shared_ptr<std::vector<int>> selection_vertices(const LatentModel& model) {
  auto vertex = std::make_shared<std::vector<int>>(static_cast<std::size_t>(model.n_locations()), -1);
  const SpMat& psi = model.projector();
  for (int k = 0; k < psi.outerSize(); ++k)
    for (SpMat::InnerIterator it(psi, k); it; ++it) {
      auto& v = (*vertex)[static_cast<std::size_t>(it.row())];
      if (v >= 0 || it.value() != 1.0) throw Error(Errc::InvalidArgument, "excursions need a selection projector");
      v = k;
    }
  return vertex;
}

// Zero-mean latent draws at one theta from a single posterior factorization.
struct LatentSampler {
  LatentSampler(std::shared_ptr<const LatentModel> m, const Vec& theta)
      : model(std::move(m)), ws(std::make_shared<LatentModel::Workspace>()) {
    model->factorize_posterior(theta, *ws);
  }
  Mat draw(int n, Seed seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Mat z(model->n_latent(), n);
    for (int j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, j) = normal(rng);
    return ws->post.sample_columns(z);
  }
  std::shared_ptr<const LatentModel> model;
  std::shared_ptr<LatentModel::Workspace> ws;
};

Mat field_rows(const LatentModel& model, const std::vector<int>& vertex, int field, const Mat& x) {
  Mat out(static_cast<Eigen::Index>(vertex.size()), x.cols());
  for (std::size_t v = 0; v < vertex.size(); ++v)
    out.row(static_cast<Eigen::Index>(v)) = x.row(model.index(field, vertex[v]));
  return out;
}

}  // namespace

MixtureView subject_view(const SubjectFit& fit, int field) {
  if (!fit.model) throw Error(Errc::InvalidArgument, "subject fit without model");
  const auto& model = fit.model;
  if (field < 0 || field >= model->n_fields()) throw Error(Errc::IndexOutOfRange, "field index out of range");
  const auto vertex = selection_vertices(*model);
  MixtureView view;
  for (std::size_t l = 0; l < fit.points.size(); ++l) {
    view.weights.push_back(fit.points[l].weight);
    view.means.push_back(fit.point_field_mean(l, field));
    view.variances.push_back(fit.point_field_variance(l, field));
  }
  std::vector<Vec> thetas;
  for (const auto& p : fit.points) thetas.push_back(p.theta);
  view.covariance = [model, vertex, field, thetas](std::size_t comp, const std::vector<int>& subset) {
    const auto k = static_cast<Eigen::Index>(subset.size());
    Mat e = Mat::Zero(model->n_latent(), k);
    std::vector<Eigen::Index> rows(subset.size());
    for (Eigen::Index j = 0; j < k; ++j) {
      rows[static_cast<std::size_t>(j)] = model->index(field, (*vertex)[static_cast<std::size_t>(subset[static_cast<std::size_t>(j)])]);
      e(rows[static_cast<std::size_t>(j)], j) = 1.0;
    }
    LatentModel::Workspace ws;
    const Mat x = model->posterior_solve(thetas[comp], ws, e);
    Mat out(k, k);
    for (Eigen::Index j = 0; j < k; ++j) out.row(j) = x.row(rows[static_cast<std::size_t>(j)]);
    return out;
  };
  view.sampler = [model, vertex, field, thetas](std::size_t comp) -> FieldSampler {
    const LatentSampler s(model, thetas[comp]);
    return [s, vertex, field](int n, Seed seed) { return field_rows(*s.model, *vertex, field, s.draw(n, seed)); };
  };
  return view;
}

std::vector<ExcursionResult> excursion_fields(const SubjectFit& fit, const std::vector<int>& fields, double gamma,
                                              const ExcursionOptions& opt) {
  if (opt.n_mc < 2) throw Error(Errc::InvalidArgument, "n_mc must be >= 2");
  if (fields.empty()) return {};
  const double sign = opt.type == ExcursionType::Negative ? -1.0 : 1.0;
  std::vector<MixtureView> views;
  std::vector<ExcursionResult> res(fields.size());
  for (std::size_t q = 0; q < fields.size(); ++q) {
    views.push_back(subject_view(fit, fields[q]));
    res[q].gamma = gamma;
    res[q].marginal = marginal_ppm(views[q], gamma, opt.type);
    res[q].order = rank_locations(res[q].marginal);
  }
  const auto vertex = selection_vertices(*fit.model);
  const std::size_t n_comp = fit.points.size();
  double total = 0.0;
  for (const auto& p : fit.points) total += p.weight;
  if (!(total > 0.0)) throw Error(Errc::DegenerateWeights, "mixture weights sum to zero");
  const auto m = static_cast<Eigen::Index>(vertex->size());

  // fs[comp][field]
  std::vector<std::vector<Vec>> fs(n_comp, std::vector<Vec>(fields.size())), ses = fs;
  parallel_for(n_comp, opt.workers, [&](std::size_t l) {
    const double w = fit.points[l].weight / total;
    if (w <= 0.0) return;
    const int pairs = std::max(1, static_cast<int>(std::llround(w * opt.n_mc / 2.0)));
    const LatentSampler sampler(fit.model, fit.points[l].theta);
    std::vector<Vec> mu(fields.size());
    std::vector<std::vector<int>> fp(fields.size(), std::vector<int>(static_cast<std::size_t>(pairs))), fm = fp;
    for (std::size_t q = 0; q < fields.size(); ++q) mu[q] = ranked(Vec(sign * views[q].means[l]), res[q].order);
    for (int c0 = 0, chunk = 0; c0 < pairs; c0 += kSampledChunkPairs, ++chunk) {
      const int cp = std::min(kSampledChunkPairs, pairs - c0);
      const Mat x = sampler.draw(cp, chunk_seed(component_seed(opt.seed, l), chunk));
      for (std::size_t q = 0; q < fields.size(); ++q)
        score_pairs(mu[q], res[q].order, Mat(sign * field_rows(*fit.model, *vertex, fields[q], x)), gamma, c0, fp[q],
                    fm[q]);
    }
    for (std::size_t q = 0; q < fields.size(); ++q) {
      fs[l][q] = Vec::Zero(m);
      ses[l][q] = Vec::Zero(m);
      summarize_pairs(res[q].order, fp[q], fm[q], m, fs[l][q], ses[l][q]);
    }
  });
  for (std::size_t q = 0; q < fields.size(); ++q) {
    res[q].F = Vec::Zero(m);
    Vec var = Vec::Zero(m);
    for (std::size_t l = 0; l < n_comp; ++l) {
      if (fs[l][q].size() == 0) continue;
      const double w = fit.points[l].weight / total;
      res[q].F += w * fs[l][q];
      var += (w * w) * ses[l][q].cwiseAbs2();
    }
    res[q].se = var.cwiseSqrt();
  }
  return res;
}

ExcursionResult excursion_mixture(const SubjectFit& fit, int field, double gamma, const ExcursionOptions& opt) {
  return excursion_fields(fit, {field}, gamma, opt).front();
}

std::vector<bool> threshold(const Vec& f, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(Errc::InvalidArgument, "alpha must lie in (0, 1)");
  std::vector<bool> a(static_cast<std::size_t>(f.size()));
  for (Eigen::Index i = 0; i < f.size(); ++i) a[static_cast<std::size_t>(i)] = f[i] >= 1.0 - alpha;
  return a;
}

ExcursionResult threshold(ExcursionResult result, double alpha) {
  result.active = threshold(result.F, alpha);
  result.alpha = alpha;
  return result;
}

double rank_concordance(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw Error(Errc::DimensionMismatch, "rank_concordance: sizes differ");
  double conc = 0.0, disc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = i + 1; j < a.size(); ++j) {
      const double s = (a[i] - a[j]) * (b[i] - b[j]);
      if (s > 0) conc += 1.0;
      else if (s < 0) disc += 1.0;
    }
  return conc + disc == 0.0 ? 1.0 : (conc - disc) / (conc + disc);
}

}  // namespace sbglm
