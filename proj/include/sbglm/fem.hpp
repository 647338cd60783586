#pragma once

#include "sbglm/mesh.hpp"
#include "sbglm/types.hpp"

namespace sbglm {

/// Lumped mass matrix: C_ii = (1/3) * sum of areas of triangles incident to i.
SparseSym mass_matrix(const TriMesh& mesh);

/// Piecewise-linear stiffness matrix G_ij = sum_t area_t * grad(phi_i) . grad(phi_j).
/// Each triangle is assembled in its own plane, so spherical meshes use the
/// flat-triangle approximation of the surface Laplacian.
SparseSym stiffness_matrix(const TriMesh& mesh);

}  // namespace sbglm
