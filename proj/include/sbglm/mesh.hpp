#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sbglm/types.hpp"

namespace sbglm {

/// Triangular mesh in 2D (z = 0) or 3D. Interior vertices are the data
/// locations; the remaining vertices only extend the domain.
struct TriMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<bool> interior;
  int dim = 2;

  int n_vertices() const { return static_cast<int>(vertices.size()); }
  int n_triangles() const { return static_cast<int>(triangles.size()); }
  int n_interior() const;

  double triangle_area(int t) const;
  double total_area() const;

  /// Vertex indices of the data locations, in vertex order.
  std::vector<int> interior_indices() const;

  /// N x n selection matrix mapping mesh weights to data locations.
  SpMat data_projector() const;

  /// Undirected edges (i < j), sorted.
  std::vector<std::array<int, 2>> edges() const;
};

/// Validates and packages a mesh. Throws IndexOutOfRange, DegenerateTriangle
/// or NonManifoldEdge. `dim` is inferred: 2 when every z coordinate is 0.
TriMesh build_mesh(std::vector<Eigen::Vector3d> vertices, std::vector<std::array<int, 3>> triangles,
                   std::vector<bool> interior_mask);

/// Binary 2D image mask, row-major, row 0 at the top.
struct LatticeMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> cells;

  LatticeMask() = default;
  LatticeMask(int r, int c, bool value = false)
      : rows(r), cols(c), cells(static_cast<std::size_t>(r) * c, value ? 1 : 0) {}

  bool at(int r, int c) const { return cells[static_cast<std::size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool v) { cells[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0; }
  int count() const;

  /// Grid spacing in mm for a field of view spanning the longer image side.
  double spacing(double fov_mm) const;

  /// (row, col) of the in-mask cells in row-major order; this is the data
  /// location order used throughout.
  std::vector<std::array<int, 2>> in_mask_cells() const;
};

/// Physical (x, y) coordinates in mm of a lattice cell center. x grows with
/// the column, y grows upward (row 0 is the top of the image).
Eigen::Vector2d cell_center(const LatticeMask& mask, int row, int col, double spacing);

/// Triangulates the masked lattice. Interior vertices sit at masked cell
/// centers (in in_mask_cells() order) and unit squares of four masked cells
/// are split along the lower-left to upper-right diagonal. Each boundary
/// layer adds vertices on a lattice twice as coarse as the previous one in
/// a band around the mask (and inside holes). Throws EmptyMask.
TriMesh triangulate_lattice(const LatticeMask& mask, double fov_mm, int boundary_layers = 2);

/// Icosahedral sphere mesh: 20 * 4^level triangles, all vertices interior.
TriMesh icosphere(int level, double radius = 1.0);

/// Uniform triangulation of [0, w] x [0, h] with nx x ny squares, each split
/// along the lower-left to upper-right diagonal. All vertices are interior.
TriMesh rectangle_mesh(double width, double height, int nx, int ny);

}  // namespace sbglm
