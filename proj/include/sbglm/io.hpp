#pragma once

#include <string>
#include <vector>

#include "sbglm/classical.hpp"
#include "sbglm/design.hpp"
#include "sbglm/excursions.hpp"
#include "sbglm/inla.hpp"
#include "sbglm/mesh.hpp"
#include "sbglm/types.hpp"

namespace sbglm {

// All readers throw Error(Io) when a file cannot be opened and Error(Parse)
// on malformed content. Formats are described in docs/FORMATS.md.

/// Dense matrix: one text header line "sbglm-matrix <rows> <cols> col-major
/// float64-le" then rows * cols little-endian doubles, column-major.
void write_matrix(const Mat& a, const std::string& path);
Mat read_matrix(const std::string& path);

/// Sparse matrix as text: header "sbglm-sparse <rows> <cols> <nnz>", then one
/// "row col value" line per stored entry (0-based, column-major order).
void write_sparse(const SpMat& a, const std::string& path);
SpMat read_sparse(const std::string& path);

/// OFF mesh plus a sidecar of 0/1 interior flags, one per vertex line.
void write_off(const TriMesh& mesh, const std::string& off_path, const std::string& interior_path);
TriMesh read_off(const std::string& off_path, const std::string& interior_path);

/// One line per task of "onset duration" pairs in seconds.
std::vector<std::vector<StimulusBlock>> read_stimulus(const std::string& path);
void write_stimulus(const std::vector<std::vector<StimulusBlock>>& tasks, const std::string& path);

/// Minimal comma-separated table (no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a named column; throws Parse when absent.
  std::size_t column(const std::string& name) const;
  Vec numeric(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
void write_csv(const CsvTable& table, const std::string& path);

/// vertex_id, F, marginal_ppm, active. `active` is written as 0 when the
/// result has not been thresholded.
void write_excursion_csv(const ExcursionResult& r, const std::string& path);
/// Restores gamma-independent columns: F, marginal, active and the ranking.
ExcursionResult read_excursion_csv(const std::string& path);

/// vertex_id, post_mean, post_var.
void write_mixture_summary(const Vec& mean, const Vec& var, const std::string& path);

/// vertex_id, estimate, se, t, p, rejected_fdr, rejected_fwer for one task column.
void write_classical_csv(const VoxelwiseFit& fit, int column, const std::vector<bool>& fdr,
                         const std::vector<bool>& fwer, const std::string& path);

/// vertex_id, value with full double precision.
void write_vertex_csv(const Vec& values, const std::string& path);
Vec read_vertex_csv(const std::string& path);

enum class ColorMap { Gray, Diverging };

ColorMap parse_colormap(const std::string& s);

/// Binary portable pixmap (P6) of a lattice map: one pixel per mask cell,
/// cells outside the mask black. Values are scaled linearly from [lo, hi]
/// (lo == hi: data range) and clamped. Throws DimensionMismatch.
void write_ppm(const Vec& values, const LatticeMask& mask, const std::string& path, ColorMap map = ColorMap::Gray,
               double lo = 0.0, double hi = 0.0);

struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

Raster read_ppm(const std::string& path);

/// Subject fit directory: manifest.txt (key = value), theta_grid.csv, the
/// model ingredients (mass, stiffness, projector as sparse text; data
/// statistics as dense matrices) and per-point latent means and variances.
/// Posterior precisions are functions of theta and the model and are
/// rebuilt on load rather than stored.
void save_fit(const SubjectFit& fit, const std::string& dir);
SubjectFit load_fit(const std::string& dir);

/// key = value lines; '#' starts a comment. Later keys override earlier ones.
std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path);

}  // namespace sbglm
