#include "sbglm/fem.hpp"

#include <vector>

namespace sbglm {

SparseSym mass_matrix(const TriMesh& mesh) {
  std::vector<double> diag(static_cast<std::size_t>(mesh.n_vertices()), 0.0);
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const double third = mesh.triangle_area(t) / 3.0;
    for (int v : mesh.triangles[static_cast<std::size_t>(t)]) diag[static_cast<std::size_t>(v)] += third;
  }
  std::vector<Triplet> trips;
  trips.reserve(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i)
    trips.emplace_back(static_cast<int>(i), static_cast<int>(i), diag[i]);
  SparseSym c(mesh.n_vertices(), mesh.n_vertices());
  c.setFromTriplets(trips.begin(), trips.end());
  return c;
}

SparseSym stiffness_matrix(const TriMesh& mesh) {
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(mesh.n_triangles()) * 9);
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    // e[k] is the edge opposite vertex k; grad(phi_k) = rot90(e[k]) / (2A)
    const Eigen::Vector3d e[3] = {mesh.vertices[tri[2]] - mesh.vertices[tri[1]],
                                  mesh.vertices[tri[0]] - mesh.vertices[tri[2]],
                                  mesh.vertices[tri[1]] - mesh.vertices[tri[0]]};
    const double four_area = 4.0 * mesh.triangle_area(t);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) trips.emplace_back(tri[a], tri[b], e[a].dot(e[b]) / four_area);
  }
  SparseSym g(mesh.n_vertices(), mesh.n_vertices());
  g.setFromTriplets(trips.begin(), trips.end());
  return g;
}

}  // namespace sbglm
