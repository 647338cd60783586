#include <doctest.h>

#include <cmath>
#include <map>

#include <Eigen/Dense>

#include "sbglm/error.hpp"
#include "sbglm/fem.hpp"
#include "sbglm/mesh.hpp"
#include "sbglm/sparse.hpp"

using namespace sbglm;

namespace {

TriMesh unit_triangle() {
  return build_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}}, {true, true, true});
}

TriMesh unit_square() {
  return build_mesh({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}}, {{0, 1, 2}, {0, 2, 3}},
                    {true, true, true, true});
}

// Independent hand assembly: element stiffness from barycentric gradients
// (solve of the 3x3 affine system), lumped mass as area / 3.
void dense_oracle(const TriMesh& m, Mat& c, Mat& g) {
  const int n = m.n_vertices();
  c = Mat::Zero(n, n);
  g = Mat::Zero(n, n);
  for (const auto& t : m.triangles) {
    Eigen::Matrix3d a;
    for (int k = 0; k < 3; ++k) a.row(k) << 1.0, m.vertices[t[k]].x(), m.vertices[t[k]].y();
    const double area = std::abs(a.determinant()) / 2.0;
    const Eigen::Matrix3d coef = a.inverse();  // column k = coefficients of lambda_k
    for (int i = 0; i < 3; ++i) {
      c(t[i], t[i]) += area / 3.0;
      for (int j = 0; j < 3; ++j)
        g(t[i], t[j]) += area * (coef(1, i) * coef(1, j) + coef(2, i) * coef(2, j));
    }
  }
}

double rel_diff(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

}  // namespace

TEST_CASE("single triangle mesh") {
  const TriMesh m = unit_triangle();
  CHECK(m.n_triangles() == 1);
  CHECK(m.total_area() == doctest::Approx(0.5));
  CHECK(m.n_interior() == 3);
}

TEST_CASE("build_mesh rejects bad input") {
  CHECK_THROWS_AS(build_mesh({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, {{0, 1, 2}}, {true, true, true}), Error);
  try {
    build_mesh({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, {{0, 1, 2}}, {true, true, true});
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateTriangle);
  }
  try {
    build_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {1, 1, 0}}, {{0, 1, 2}, {0, 1, 3}, {0, 1, 4}},
               std::vector<bool>(5, true));
    FAIL("expected NonManifoldEdge");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NonManifoldEdge);
  }
  try {
    build_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 3}}, {true, true, true});
    FAIL("expected IndexOutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::IndexOutOfRange);
  }
}

TEST_CASE("mass matrix examples") {
  const SparseSym c1 = mass_matrix(unit_triangle());
  for (int i = 0; i < 3; ++i) CHECK(c1.coeff(i, i) == doctest::Approx(1.0 / 6.0));
  CHECK(c1.nonZeros() == 3);

  const SparseSym c2 = mass_matrix(unit_square());
  CHECK(c2.coeff(0, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(c2.coeff(2, 2) == doctest::Approx(1.0 / 3.0));
  CHECK(c2.coeff(1, 1) == doctest::Approx(1.0 / 6.0));
  CHECK(c2.coeff(3, 3) == doctest::Approx(1.0 / 6.0));
  CHECK(Mat(c2).trace() == doctest::Approx(1.0));

  TriMesh scaled = unit_square();
  for (auto& v : scaled.vertices) v *= 3.0;
  CHECK(rel_diff(Mat(mass_matrix(scaled)), 9.0 * Mat(c2)) < 1e-14);
}

TEST_CASE("stiffness matrix examples") {
  Mat expected(3, 3);
  expected << 1, -0.5, -0.5, -0.5, 0.5, 0, -0.5, 0, 0.5;
  CHECK(rel_diff(Mat(stiffness_matrix(unit_triangle())), expected) < 1e-14);

  TriMesh shifted = unit_square();
  for (auto& v : shifted.vertices) v += Eigen::Vector3d(5.5, -2.25, 0);
  CHECK(rel_diff(Mat(stiffness_matrix(shifted)), Mat(stiffness_matrix(unit_square()))) < 1e-13);
}

TEST_CASE("FEM matrices match dense hand assembly on small meshes") {
  // a slightly irregular 3x3-vertex patch: 8 triangles
  std::vector<Eigen::Vector3d> v;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) v.emplace_back(i + 0.13 * ((i * 7 + j * 3) % 5) / 5.0, j + 0.09 * ((i + 2 * j) % 3), 0);
  std::vector<std::array<int, 3>> t;
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i) {
      const int a = j * 3 + i, b = a + 1, c = a + 4, d = a + 3;
      t.push_back({a, b, c});
      t.push_back({a, c, d});
    }
  const TriMesh m = build_mesh(v, t, std::vector<bool>(v.size(), true));
  Mat c, g;
  dense_oracle(m, c, g);
  const SparseSym cs = mass_matrix(m), gs = stiffness_matrix(m);
  CHECK(rel_diff(Mat(cs), c) < 1e-10);
  CHECK(rel_diff(Mat(gs), g) < 1e-10);
  CHECK(is_symmetric(gs));
  CHECK((Mat(gs) * Vec::Ones(9)).cwiseAbs().maxCoeff() < 1e-12);
  const Mat gd(gs);
  Eigen::SelfAdjointEigenSolver<Mat> es(gd);
  CHECK(es.eigenvalues().minCoeff() > -1e-12);
  CHECK(Mat(cs).trace() == doctest::Approx(m.total_area()).epsilon(1e-10));

  // patterns restricted to edges + diagonal
  std::map<std::pair<int, int>, bool> adj;
  for (auto e : m.edges()) adj[{e[0], e[1]}] = adj[{e[1], e[0]}] = true;
  for (int k = 0; k < gs.outerSize(); ++k)
    for (SpMat::InnerIterator it(gs, k); it; ++it)
      if (it.row() != it.col()) CHECK(adj.count({static_cast<int>(it.row()), static_cast<int>(it.col())}) == 1);
}

TEST_CASE("stiffness converges to the Laplacian under refinement") {
  // max error of C^-1 G f against -Laplacian(f) on the central quarter of the unit square
  auto max_err = [](int n, auto f, auto neg_lap) {
    const TriMesh m = rectangle_mesh(1.0, 1.0, n, n);
    const SparseSym c = mass_matrix(m), g = stiffness_matrix(m);
    Vec v(m.n_vertices());
    for (int i = 0; i < m.n_vertices(); ++i) v[i] = f(m.vertices[i].x(), m.vertices[i].y());
    const Vec lap = c.diagonal().cwiseInverse().cwiseProduct(g * v);
    double err = 0.0;
    for (int i = 0; i < m.n_vertices(); ++i) {
      const auto& p = m.vertices[i];
      if (p.x() < 0.25 - 1e-9 || p.x() > 0.75 + 1e-9 || p.y() < 0.25 - 1e-9 || p.y() > 0.75 + 1e-9) continue;
      err = std::max(err, std::abs(lap[i] - neg_lap(p.x(), p.y())));
    }
    return err;
  };
  auto quad = [](double x, double y) { return x * x + y * y; };
  auto quad_lap = [](double, double) { return -4.0; };
  // the uniform stencil is exact on quadratics
  CHECK(max_err(8, quad, quad_lap) < 1e-8);
  CHECK(max_err(16, quad, quad_lap) < 1e-8);

  auto smooth = [](double x, double y) { return std::sin(2 * x) * std::cos(y); };
  auto smooth_lap = [](double x, double y) { return 5.0 * std::sin(2 * x) * std::cos(y); };
  const double e1 = max_err(8, smooth, smooth_lap), e2 = max_err(16, smooth, smooth_lap);
  CHECK(e1 / e2 > 2.0);
}

TEST_CASE("lattice triangulation") {
  LatticeMask m2(2, 2, true);
  const TriMesh t0 = triangulate_lattice(m2, 2.0, 0);
  CHECK(t0.n_vertices() == 4);
  CHECK(t0.n_interior() == 4);
  CHECK(t0.n_triangles() == 2);
  CHECK(t0.total_area() == doctest::Approx(1.0));

  LatticeMask empty(3, 3, false);
  try {
    triangulate_lattice(empty, 10.0, 2);
    FAIL("expected EmptyMask");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptyMask);
  }

  // an L-shaped mask with boundary layers stays a valid manifold mesh whose
  // interior vertices are the masked cell centers
  LatticeMask l(6, 5, false);
  for (int r = 0; r < 6; ++r) l.set(r, 1, true);
  for (int c = 1; c < 5; ++c) l.set(5, c, true);
  l.set(4, 2, true);
  const TriMesh tl = triangulate_lattice(l, 50.0, 2);
  CHECK(tl.n_interior() == l.count());
  CHECK(tl.n_vertices() > tl.n_interior());
  const double h = l.spacing(50.0);
  const auto cells = l.in_mask_cells();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto p = cell_center(l, cells[i][0], cells[i][1], h);
    CHECK(tl.vertices[i].x() == doctest::Approx(p.x()));
    CHECK(tl.vertices[i].y() == doctest::Approx(p.y()));
  }
  // every interior vertex is surrounded: the vertex star covers a full angle
  std::vector<double> angle(static_cast<std::size_t>(tl.n_vertices()), 0.0);
  for (const auto& t : tl.triangles)
    for (int k = 0; k < 3; ++k) {
      const Eigen::Vector3d a = tl.vertices[t[(k + 1) % 3]] - tl.vertices[t[k]];
      const Eigen::Vector3d b = tl.vertices[t[(k + 2) % 3]] - tl.vertices[t[k]];
      angle[static_cast<std::size_t>(t[k])] += std::acos(a.normalized().dot(b.normalized()));
    }
  for (int i = 0; i < tl.n_interior(); ++i) CHECK(angle[static_cast<std::size_t>(i)] == doctest::Approx(2 * M_PI));
}

TEST_CASE("icosphere area approaches the sphere area") {
  const TriMesh s = icosphere(3, 1.0);
  CHECK(s.n_triangles() == 20 * 64);
  CHECK(s.total_area() == doctest::Approx(4 * M_PI).epsilon(0.01));
  const SparseSym g = stiffness_matrix(s);
  CHECK((g * Vec::Ones(s.n_vertices())).cwiseAbs().maxCoeff() < 1e-10);
}
