#include "sbglm/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "sbglm/error.hpp"

namespace sbglm {

int TriMesh::n_interior() const {
  return static_cast<int>(std::count(interior.begin(), interior.end(), true));
}

double TriMesh::triangle_area(int t) const {
  const auto& tri = triangles[static_cast<std::size_t>(t)];
  const Eigen::Vector3d e1 = vertices[tri[1]] - vertices[tri[0]];
  const Eigen::Vector3d e2 = vertices[tri[2]] - vertices[tri[0]];
  return 0.5 * e1.cross(e2).norm();
}

double TriMesh::total_area() const {
  double a = 0.0;
  for (int t = 0; t < n_triangles(); ++t) a += triangle_area(t);
  return a;
}

std::vector<int> TriMesh::interior_indices() const {
  std::vector<int> idx;
  for (int i = 0; i < n_vertices(); ++i)
    if (interior[static_cast<std::size_t>(i)]) idx.push_back(i);
  return idx;
}

SpMat TriMesh::data_projector() const {
  const auto idx = interior_indices();
  std::vector<Triplet> trips;
  trips.reserve(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) trips.emplace_back(static_cast<int>(r), idx[r], 1.0);
  SpMat psi(static_cast<Eigen::Index>(idx.size()), n_vertices());
  psi.setFromTriplets(trips.begin(), trips.end());
  return psi;
}

std::vector<std::array<int, 2>> TriMesh::edges() const {
  std::set<std::array<int, 2>> e;
  for (const auto& t : triangles)
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      e.insert({a, b});
    }
  return {e.begin(), e.end()};
}

TriMesh build_mesh(std::vector<Eigen::Vector3d> vertices, std::vector<std::array<int, 3>> triangles,
                   std::vector<bool> interior_mask) {
  const int n = static_cast<int>(vertices.size());
  if (interior_mask.size() != vertices.size())
    throw Error(Errc::DimensionMismatch, "interior mask has " + std::to_string(interior_mask.size()) +
                                             " entries for " + std::to_string(n) + " vertices");
  TriMesh mesh;
  mesh.dim = 2;
  for (const auto& v : vertices)
    if (v.z() != 0.0) mesh.dim = 3;
  mesh.vertices = std::move(vertices);
  mesh.triangles = std::move(triangles);
  mesh.interior = std::move(interior_mask);

  std::map<std::array<int, 2>, int> edge_use;
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    for (int k = 0; k < 3; ++k)
      if (tri[k] < 0 || tri[k] >= n)
        throw Error(Errc::IndexOutOfRange, "triangle " + std::to_string(t) + " references vertex " +
                                               std::to_string(tri[k]));
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
      throw Error(Errc::DegenerateTriangle, "triangle " + std::to_string(t) + " repeats a vertex");
    // relative to the squared edge lengths so the test is scale-free
    const Eigen::Vector3d e1 = mesh.vertices[tri[1]] - mesh.vertices[tri[0]];
    const Eigen::Vector3d e2 = mesh.vertices[tri[2]] - mesh.vertices[tri[0]];
    const double cross = e1.cross(e2).norm();
    if (!(cross > 1e-12 * e1.norm() * e2.norm()))
      throw Error(Errc::DegenerateTriangle, "triangle " + std::to_string(t) + " has zero area");
    for (int k = 0; k < 3; ++k) {
      int a = tri[k], b = tri[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      if (++edge_use[{a, b}] > 2)
        throw Error(Errc::NonManifoldEdge, "edge (" + std::to_string(a) + ", " + std::to_string(b) +
                                               ") is shared by more than two triangles");
    }
  }
  return mesh;
}

int LatticeMask::count() const {
  return static_cast<int>(std::count_if(cells.begin(), cells.end(), [](auto c) { return c != 0; }));
}

double LatticeMask::spacing(double fov_mm) const { return fov_mm / std::max(rows, cols); }

std::vector<std::array<int, 2>> LatticeMask::in_mask_cells() const {
  std::vector<std::array<int, 2>> out;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (at(r, c)) out.push_back({r, c});
  return out;
}

Eigen::Vector2d cell_center(const LatticeMask& mask, int row, int col, double spacing) {
  return {(col + 0.5) * spacing, (mask.rows - 1 - row + 0.5) * spacing};
}

namespace {

using i128 = __int128;

struct IPoint {
  std::int64_t x, y;
};

// Lift used for the empty-circle test. The small -xy shear makes every
// cocircular unit square of the lattice split along the lower-left to
// upper-right diagonal.
constexpr std::int64_t kLift = 1000;

i128 lift(const IPoint& p) { return kLift * (i128(p.x) * p.x + i128(p.y) * p.y) - i128(p.x) * p.y; }

i128 orient(const IPoint& a, const IPoint& b, const IPoint& c) {
  return i128(b.x - a.x) * (c.y - a.y) - i128(b.y - a.y) * (c.x - a.x);
}

// > 0 when d lies strictly inside the lifted circumcircle of ccw (a, b, c)
bool in_circle(const IPoint& a, const IPoint& b, const IPoint& c, const IPoint& d) {
  const i128 zd = lift(d);
  const i128 adx = a.x - d.x, ady = a.y - d.y, adz = lift(a) - zd;
  const i128 bdx = b.x - d.x, bdy = b.y - d.y, bdz = lift(b) - zd;
  const i128 cdx = c.x - d.x, cdy = c.y - d.y, cdz = lift(c) - zd;
  const i128 det = adx * (bdy * cdz - bdz * cdy) - ady * (bdx * cdz - bdz * cdx) +
                   adz * (bdx * cdy - bdy * cdx);
  return det > 0;
}

// Bowyer-Watson on integer points with exact predicates. Returns ccw
// triangles over the input indices.
std::vector<std::array<int, 3>> delaunay(const std::vector<IPoint>& pts) {
  const int n = static_cast<int>(pts.size());
  std::vector<IPoint> p = pts;
  constexpr std::int64_t big = 100000;
  p.push_back({-big, -big});
  p.push_back({3 * big, -big});
  p.push_back({-big, 3 * big});
  std::vector<std::array<int, 3>> tris{{n, n + 1, n + 2}};

  for (int i = 0; i < n; ++i) {
    std::vector<char> bad(tris.size(), 0);
    for (std::size_t t = 0; t < tris.size(); ++t) {
      const auto& tr = tris[t];
      if (in_circle(p[tr[0]], p[tr[1]], p[tr[2]], p[i])) bad[t] = 1;
    }
    // cavity boundary: edges of bad triangles not shared with another bad triangle
    std::map<std::pair<int, int>, int> edge_count;
    for (std::size_t t = 0; t < tris.size(); ++t) {
      if (!bad[t]) continue;
      for (int k = 0; k < 3; ++k) {
        int a = tris[t][k], b = tris[t][(k + 1) % 3];
        edge_count[{std::min(a, b), std::max(a, b)}]++;
      }
    }
    std::vector<std::array<int, 3>> next;
    next.reserve(tris.size() + 2);
    for (std::size_t t = 0; t < tris.size(); ++t) {
      if (!bad[t]) {
        next.push_back(tris[t]);
        continue;
      }
      for (int k = 0; k < 3; ++k) {
        const int a = tris[t][k], b = tris[t][(k + 1) % 3];
        if (edge_count[{std::min(a, b), std::max(a, b)}] == 1) next.push_back({a, b, i});
      }
    }
    tris.swap(next);
  }

  std::vector<std::array<int, 3>> out;
  for (const auto& t : tris)
    if (t[0] < n && t[1] < n && t[2] < n) {
      std::array<int, 3> tt = t;
      if (orient(pts[tt[0]], pts[tt[1]], pts[tt[2]]) < 0) std::swap(tt[1], tt[2]);
      out.push_back(tt);
    }
  return out;
}

}  // namespace

TriMesh triangulate_lattice(const LatticeMask& mask, double fov_mm, int boundary_layers) {
  if (mask.count() == 0) throw Error(Errc::EmptyMask, "mask has no in-mask cells");
  if (!(fov_mm > 0)) throw Error(Errc::InvalidArgument, "field of view must be positive");
  if (boundary_layers < 0) throw Error(Errc::InvalidArgument, "boundary_layers must be >= 0");
  const double h = mask.spacing(fov_mm);

  // Integer lattice coordinates: ix = col, iy = rows-1-row (y up).
  std::vector<IPoint> pts;
  for (const auto& rc : mask.in_mask_cells()) pts.push_back({rc[1], mask.rows - 1 - rc[0]});
  const int n_interior = static_cast<int>(pts.size());

  if (boundary_layers > 0) {
    // Chebyshev distance to the mask on a padded grid, by 8-connected BFS.
    int reach = 0;
    for (int l = 1; l <= boundary_layers; ++l) reach += 1 << l;
    const int pad = reach + 1;
    const int w = mask.cols + 2 * pad;
    const int hgt = mask.rows + 2 * pad;
    std::vector<int> dist(static_cast<std::size_t>(w) * hgt, -1);
    std::deque<std::pair<int, int>> queue;
    for (const auto& p : pts) {
      const int gx = static_cast<int>(p.x) + pad, gy = static_cast<int>(p.y) + pad;
      dist[static_cast<std::size_t>(gy) * w + gx] = 0;
      queue.emplace_back(gx, gy);
    }
    while (!queue.empty()) {
      auto [x, y] = queue.front();
      queue.pop_front();
      const int d = dist[static_cast<std::size_t>(y) * w + x];
      if (d >= reach) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= hgt) continue;
          auto& slot = dist[static_cast<std::size_t>(ny) * w + nx];
          if (slot < 0) {
            slot = d + 1;
            queue.emplace_back(nx, ny);
          }
        }
    }
    int inner = 0;
    for (int l = 1; l <= boundary_layers; ++l) {
      const int step = 1 << l;
      const int outer = inner + step;
      for (int gy = 0; gy < hgt; ++gy)
        for (int gx = 0; gx < w; ++gx) {
          const int d = dist[static_cast<std::size_t>(gy) * w + gx];
          if (d <= inner || d > outer) continue;
          const int ix = gx - pad, iy = gy - pad;
          if (((ix % step) + step) % step != 0 || ((iy % step) + step) % step != 0) continue;
          pts.push_back({ix, iy});
        }
      inner = outer;
    }
  }

  auto tris = delaunay(pts);
  std::vector<Eigen::Vector3d> verts;
  verts.reserve(pts.size());
  for (const auto& p : pts) verts.emplace_back((p.x + 0.5) * h, (p.y + 0.5) * h, 0.0);
  std::vector<bool> interior(pts.size(), false);
  std::fill(interior.begin(), interior.begin() + n_interior, true);
  return build_mesh(std::move(verts), std::move(tris), std::move(interior));
}

TriMesh rectangle_mesh(double width, double height, int nx, int ny) {
  if (nx < 1 || ny < 1) throw Error(Errc::InvalidArgument, "rectangle_mesh needs nx, ny >= 1");
  std::vector<Eigen::Vector3d> verts;
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) verts.emplace_back(width * i / nx, height * j / ny, 0.0);
  std::vector<std::array<int, 3>> tris;
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      tris.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      tris.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  std::vector<bool> interior(verts.size(), true);
  return build_mesh(std::move(verts), std::move(tris), std::move(interior));
}

TriMesh icosphere(int level, double radius) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> v = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                                    {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                                    {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]);
      const int b = midpoint(tri[1], tri[2]);
      const int c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f.swap(next);
  }
  for (auto& p : v) p *= radius;
  std::vector<bool> interior(v.size(), true);
  return build_mesh(std::move(v), std::move(f), std::move(interior));
}

}  // namespace sbglm
