#pragma once

#include <array>
#include <string>
#include <vector>

#include "sbglm/design.hpp"
#include "sbglm/mesh.hpp"
#include "sbglm/types.hpp"

namespace sbglm {

/// Built-in 46 x 55 brain-slice mask with 1256 in-mask cells: an irregular
/// ellipse with two ventricle holes.
LatticeMask default_phantom_mask();

/// Text mask: first line "rows cols", then `rows` lines of '0'/'1' characters.
LatticeMask read_mask(const std::string& path);
void write_mask(const LatticeMask& mask, const std::string& path);

struct PhantomConfig {
  LatticeMask mask;                       // empty: default_phantom_mask()
  double fov_mm = 192.0;
  int n_time = 200;
  double tr = 1.0;
  double ar_phi = 0.3;
  double noise_sd = 1.0;                  // marginal sd of the AR noise; 0: noiseless
  std::vector<std::array<int, 2>> centers;  // (row, col) of the Dirac per region; empty: defaults
  std::vector<double> fwhm{10.0, 15.0, 20.0};
  // (a_1, a_2) per region
  std::vector<std::array<double, 2>> weights{{1.0, 0.0}, {1.0, 0.5}, {0.0, 0.5}};
  double amplitude = 1.0;                 // bump peak height
  double truncation = 1e-6;               // relative to the peak
  double baseline_fwhm = 8.0;             // smoothing of the mask indicator
  std::vector<StimulusBlock> task1{{10, 15}, {50, 15}, {90, 15}, {130, 15}, {170, 15}};
  std::vector<StimulusBlock> task2{{30, 15}, {70, 15}, {110, 15}, {150, 15}};
};

struct Phantom {
  LatticeMask mask;
  double fov_mm = 192.0;
  int n_time = 0;
  double tr = 1.0;
  double ar_phi = 0.0;
  double noise_sd = 1.0;
  std::vector<std::array<int, 2>> centers;
  Vec beta0;            // baseline
  Mat beta;             // N x 2 amplitude maps (sum of truncated bumps)
  Mat a;                // N x 2 weights in {0, 0.5, 1}
  Mat x;                // T x 2 task profiles
  std::vector<int> region;  // dominant bump per location, -1 outside every bump

  int n_locations() const { return static_cast<int>(beta.rows()); }
  /// a_k .* beta_k: the amplitude task k actually carries.
  Vec effective(int k) const;
  /// Locations with effective amplitude > 0.
  std::vector<bool> truth(int k) const;
};

/// Throws CenterOutsideMask, InvalidArgument.
Phantom build_phantom(const PhantomConfig& config = {});

/// T x N data: beta0 + a1 x1 beta1 + a2 x2 beta2 + AR(1) noise. Noise streams
/// are seeded per location from (seed, location).
Mat simulate(const Phantom& phantom, Seed seed);

struct RocCurve {
  std::vector<double> fpr;
  std::vector<double> tpr;
  double auc = 0.0;
};

/// ROC by sweeping a threshold down the statistic (ties grouped); AUC by the
/// trapezoid rule. Throws NoPositives / NoNegatives.
RocCurve roc(const Vec& statistic, const std::vector<bool>& truth);

/// Normalized Mann-Whitney U: P(S+ > S-) + P(S+ = S-) / 2.
double mann_whitney_auc(const Vec& statistic, const std::vector<bool>& truth);

struct Rates {
  double fpr = 0.0;
  double fnr = 0.0;
};

/// FPR = FP / negatives, FNR = FN / positives.
Rates error_rates(const std::vector<bool>& decision, const std::vector<bool>& truth);

}  // namespace sbglm
