#include "sbglm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "sbglm/classical.hpp"
#include "sbglm/error.hpp"
#include "sbglm/parallel.hpp"

namespace sbglm {

namespace {

constexpr int kRows = 46, kCols = 55, kCells = 1256;

std::uint64_t location_seed(std::uint64_t seed, std::uint64_t loc) {
  std::uint64_t x = seed * 0xd1342543de82ef95ULL + loc * 0x9e3779b97f4a7c15ULL + 0x1234567ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool inside_ellipse(double r, double c, double r0, double c0, double ar, double ac) {
  const double u = (r - r0) / ar, v = (c - c0) / ac;
  return u * u + v * v <= 1.0;
}

}  // namespace

LatticeMask default_phantom_mask() {
  // Score every cell by an irregular elliptical distance and keep the 1256
  // lowest (ties by index); the ventricles are excluded outright.
  std::vector<std::pair<double, int>> score;
  for (int r = 0; r < kRows; ++r)
    for (int c = 0; c < kCols; ++c) {
      if (inside_ellipse(r, c, 21.0, 22.5, 6.0, 2.2) || inside_ellipse(r, c, 21.0, 31.5, 6.0, 2.2)) continue;
      const double u = (r - 22.5) / 21.0, v = (c - 27.0) / 25.5;
      const double ang = std::atan2(u, v);
      const double f = (u * u + v * v) * (1.0 + 0.06 * std::cos(3.0 * ang) + 0.04 * std::sin(5.0 * ang));
      score.emplace_back(f, r * kCols + c);
    }
  std::stable_sort(score.begin(), score.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  LatticeMask mask(kRows, kCols, false);
  for (int i = 0; i < kCells; ++i) mask.cells[static_cast<std::size_t>(score[static_cast<std::size_t>(i)].second)] = 1;
  return mask;
}

LatticeMask read_mask(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open mask file '" + path + "'");
  int rows = 0, cols = 0;
  if (!(in >> rows >> cols) || rows <= 0 || cols <= 0) throw Error(Errc::Parse, "mask header must be 'rows cols'");
  LatticeMask mask(rows, cols, false);
  for (int r = 0; r < rows; ++r) {
    std::string line;
    if (!(in >> line) || static_cast<int>(line.size()) != cols)
      throw Error(Errc::Parse, "mask row " + std::to_string(r) + " must have " + std::to_string(cols) + " characters");
    for (int c = 0; c < cols; ++c) {
      if (line[static_cast<std::size_t>(c)] != '0' && line[static_cast<std::size_t>(c)] != '1')
        throw Error(Errc::Parse, "mask characters must be 0 or 1");
      mask.set(r, c, line[static_cast<std::size_t>(c)] == '1');
    }
  }
  return mask;
}

void write_mask(const LatticeMask& mask, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::Io, "cannot write mask file '" + path + "'");
  out << mask.rows << ' ' << mask.cols << '\n';
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) out << (mask.at(r, c) ? '1' : '0');
    out << '\n';
  }
}

Vec Phantom::effective(int k) const {
  if (k < 0 || k > 1) throw Error(Errc::IndexOutOfRange, "phantom has two tasks");
  return a.col(k).cwiseProduct(beta.col(k));
}

std::vector<bool> Phantom::truth(int k) const {
  const Vec e = effective(k);
  std::vector<bool> out(static_cast<std::size_t>(e.size()));
  for (Eigen::Index i = 0; i < e.size(); ++i) out[static_cast<std::size_t>(i)] = e[i] > 0.0;
  return out;
}

Phantom build_phantom(const PhantomConfig& config) {
  Phantom ph;
  ph.mask = config.mask.rows > 0 ? config.mask : default_phantom_mask();
  if (ph.mask.count() == 0) throw Error(Errc::EmptyMask, "phantom mask is empty");
  if (config.n_time < 2 || !(config.tr > 0.0) || !(config.fov_mm > 0.0))
    throw Error(Errc::InvalidArgument, "phantom needs n_time >= 2, tr > 0 and fov > 0");
  if (!(std::abs(config.ar_phi) < 1.0) || !(config.noise_sd >= 0.0))
    throw Error(Errc::InvalidArgument, "AR coefficient must lie in (-1, 1) and noise sd >= 0");
  ph.fov_mm = config.fov_mm;
  ph.n_time = config.n_time;
  ph.tr = config.tr;
  ph.ar_phi = config.ar_phi;
  ph.noise_sd = config.noise_sd;
  ph.centers = config.centers.empty()
                   ? std::vector<std::array<int, 2>>{{13, 17}, {31, 38}, {34, 16}}
                   : config.centers;
  const std::size_t n_regions = ph.centers.size();
  if (config.fwhm.size() != n_regions || config.weights.size() != n_regions)
    throw Error(Errc::InvalidArgument, "one fwhm and one weight pair per region");
  for (const auto& c : ph.centers)
    if (c[0] < 0 || c[0] >= ph.mask.rows || c[1] < 0 || c[1] >= ph.mask.cols || !ph.mask.at(c[0], c[1]))
      throw Error(Errc::CenterOutsideMask,
                  "center (" + std::to_string(c[0]) + ", " + std::to_string(c[1]) + ") is not in the mask");

  const double h = ph.mask.spacing(ph.fov_mm);
  const auto cells = ph.mask.in_mask_cells();
  const auto n = static_cast<Eigen::Index>(cells.size());
  ph.beta = Mat::Zero(n, 2);
  ph.a = Mat::Zero(n, 2);
  ph.region.assign(cells.size(), -1);
  for (Eigen::Index v = 0; v < n; ++v) {
    const Eigen::Vector2d p = cell_center(ph.mask, cells[static_cast<std::size_t>(v)][0], cells[static_cast<std::size_t>(v)][1], h);
    double total = 0.0, best = 0.0;
    for (std::size_t j = 0; j < n_regions; ++j) {
      const Eigen::Vector2d c = cell_center(ph.mask, ph.centers[j][0], ph.centers[j][1], h);
      const double s = fwhm_to_sigma(config.fwhm[j]);
      const double b = std::exp(-(p - c).squaredNorm() / (2 * s * s));
      if (b < config.truncation) continue;
      total += config.amplitude * b;
      if (b > best) {
        best = b;
        ph.region[static_cast<std::size_t>(v)] = static_cast<int>(j);
      }
    }
    ph.beta(v, 0) = ph.beta(v, 1) = total;
    if (const int j = ph.region[static_cast<std::size_t>(v)]; j >= 0) {
      ph.a(v, 0) = config.weights[static_cast<std::size_t>(j)][0];
      ph.a(v, 1) = config.weights[static_cast<std::size_t>(j)][1];
    }
  }

  // baseline: smoothed mask indicator at the in-mask cells, scaled to mean 1
  ph.beta0 = Vec::Zero(n);
  const double sb = fwhm_to_sigma(config.baseline_fwhm);
  for (Eigen::Index v = 0; v < n; ++v) {
    const auto& rc = cells[static_cast<std::size_t>(v)];
    if (sb == 0.0) {
      ph.beta0[v] = 1.0;
      continue;
    }
    double num = 0.0, den = 0.0;
    for (int r = 0; r < ph.mask.rows; ++r)
      for (int c = 0; c < ph.mask.cols; ++c) {
        const double d2 = h * h * ((r - rc[0]) * (r - rc[0]) + (c - rc[1]) * (c - rc[1]));
        const double w = std::exp(-d2 / (2 * sb * sb));
        num += w * (ph.mask.at(r, c) ? 1.0 : 0.0);
        den += w;
      }
    ph.beta0[v] = num / den;
  }
  ph.beta0 /= ph.beta0.mean();

  // task profiles: HRF-convolved blocks, scaled to unit peak
  const Vec hrf = canonical_hrf(ph.tr);
  ph.x.resize(ph.n_time, 2);
  for (int k = 0; k < 2; ++k) {
    const Vec s = block_stimulus(ph.n_time, ph.tr, k == 0 ? config.task1 : config.task2);
    Vec col = convolve_stimulus(s, hrf);
    const double peak = col.cwiseAbs().maxCoeff();
    if (!(peak > 0.0)) throw Error(Errc::InvalidArgument, "task stimulus is empty");
    ph.x.col(k) = col / peak;
  }
  return ph;
}

Mat simulate(const Phantom& ph, Seed seed) {
  const auto n = static_cast<Eigen::Index>(ph.n_locations());
  const int t = ph.n_time;
  Mat y(t, n);
  const double innov = ph.noise_sd * std::sqrt(1.0 - ph.ar_phi * ph.ar_phi);
  parallel_for(static_cast<std::size_t>(n), 0, [&](std::size_t vi) {
    const auto v = static_cast<Eigen::Index>(vi);
    std::mt19937_64 rng(location_seed(seed, vi));
    std::normal_distribution<double> normal;
    double e = ph.noise_sd * normal(rng);  // stationary start
    for (int s = 0; s < t; ++s) {
      if (s > 0) e = ph.ar_phi * e + innov * normal(rng);
      y(s, v) = ph.beta0[v] + ph.a(v, 0) * ph.x(s, 0) * ph.beta(v, 0) + ph.a(v, 1) * ph.x(s, 1) * ph.beta(v, 1) +
                (ph.noise_sd > 0.0 ? e : 0.0);
    }
  });
  return y;
}

namespace {

void count_classes(const std::vector<bool>& truth, double& pos, double& neg) {
  pos = static_cast<double>(std::count(truth.begin(), truth.end(), true));
  neg = static_cast<double>(truth.size()) - pos;
  if (pos == 0) throw Error(Errc::NoPositives, "truth map has no positive locations");
  if (neg == 0) throw Error(Errc::NoNegatives, "truth map has no negative locations");
}

}  // namespace

RocCurve roc(const Vec& statistic, const std::vector<bool>& truth) {
  if (static_cast<std::size_t>(statistic.size()) != truth.size())
    throw Error(Errc::DimensionMismatch, "statistic and truth differ in length");
  double pos = 0, neg = 0;
  count_classes(truth, pos, neg);
  std::vector<int> order(truth.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return statistic[a] > statistic[b]; });
  RocCurve c;
  c.fpr.push_back(0.0);
  c.tpr.push_back(0.0);
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && statistic[order[j]] == statistic[order[i]]) {
      (truth[static_cast<std::size_t>(order[j])] ? tp : fp) += 1.0;
      ++j;
    }
    c.fpr.push_back(fp / neg);
    c.tpr.push_back(tp / pos);
    c.auc += 0.5 * (c.fpr.back() - c.fpr[c.fpr.size() - 2]) * (c.tpr.back() + c.tpr[c.tpr.size() - 2]);
    i = j;
  }
  return c;
}

double mann_whitney_auc(const Vec& statistic, const std::vector<bool>& truth) {
  if (static_cast<std::size_t>(statistic.size()) != truth.size())
    throw Error(Errc::DimensionMismatch, "statistic and truth differ in length");
  double pos = 0, neg = 0;
  count_classes(truth, pos, neg);
  double u = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!truth[i]) continue;
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (truth[j]) continue;
      const auto a = statistic[static_cast<Eigen::Index>(i)], b = statistic[static_cast<Eigen::Index>(j)];
      u += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
    }
  }
  return u / (pos * neg);
}

Rates error_rates(const std::vector<bool>& decision, const std::vector<bool>& truth) {
  if (decision.size() != truth.size()) throw Error(Errc::DimensionMismatch, "decision and truth differ in length");
  double pos = 0, neg = 0;
  count_classes(truth, pos, neg);
  double fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (decision[i] && !truth[i]) fp += 1;
    if (!decision[i] && truth[i]) fn += 1;
  }
  return {fp / neg, fn / pos};
}

}  // namespace sbglm
