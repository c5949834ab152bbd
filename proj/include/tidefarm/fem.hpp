#pragma once
// Finite element plumbing on triangle meshes: quadratic/linear Lagrange shape
// functions in barycentric form, a degree-6 triangle quadrature, edge
// quadrature, dof numbering for the mixed velocity/elevation pair, and a
// uniform-grid point locator.

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "tidefarm/mesh.hpp"

namespace tidefarm {

// 12-point rule, exact for polynomials up to degree 6. Weights sum to one and
// multiply the triangle area.
struct TriQuad {
  static constexpr int n = 12;
  // barycentric coordinates (l0, l1, l2) and weight
  static constexpr double pts[n][4] = {
      {0.873821971016996, 0.063089014491502, 0.063089014491502, 0.050844906370207},
      {0.063089014491502, 0.873821971016996, 0.063089014491502, 0.050844906370207},
      {0.063089014491502, 0.063089014491502, 0.873821971016996, 0.050844906370207},
      {0.501426509658179, 0.249286745170910, 0.249286745170911, 0.116786275726379},
      {0.249286745170910, 0.501426509658179, 0.249286745170911, 0.116786275726379},
      {0.249286745170910, 0.249286745170911, 0.501426509658179, 0.116786275726379},
      {0.636502499121399, 0.310352451033785, 0.053145049844816, 0.082851075618374},
      {0.636502499121399, 0.053145049844816, 0.310352451033785, 0.082851075618374},
      {0.310352451033785, 0.636502499121399, 0.053145049844816, 0.082851075618374},
      {0.310352451033785, 0.053145049844816, 0.636502499121399, 0.082851075618374},
      {0.053145049844816, 0.636502499121399, 0.310352451033785, 0.082851075618374},
      {0.053145049844816, 0.310352451033785, 0.636502499121399, 0.082851075618374}};
};

// 3-point Gauss rule on [0,1], exact to degree 5.
struct EdgeQuad {
  static constexpr int n = 3;
  static constexpr double s[n] = {0.1127016653792583, 0.5, 0.8872983346207417};
  static constexpr double w[n] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
};

// Quadratic Lagrange values at a barycentric point. Local node order:
// corners 0,1,2 then midpoints of edges (0,1), (1,2), (2,0).
inline void p2_values(const double l[3], double N[6]) {
  for (int k = 0; k < 3; ++k) N[k] = l[k] * (2.0 * l[k] - 1.0);
  N[3] = 4.0 * l[0] * l[1];
  N[4] = 4.0 * l[1] * l[2];
  N[5] = 4.0 * l[2] * l[0];
}

// Gradients from the constant barycentric gradients gl[k] of the triangle.
inline void p2_gradients(const double l[3], const double gl[3][2], double G[6][2]) {
  for (int k = 0; k < 3; ++k) {
    G[k][0] = (4.0 * l[k] - 1.0) * gl[k][0];
    G[k][1] = (4.0 * l[k] - 1.0) * gl[k][1];
  }
  const int ea[3] = {0, 1, 2}, eb[3] = {1, 2, 0};
  for (int e = 0; e < 3; ++e)
    for (int d = 0; d < 2; ++d)
      G[3 + e][d] = 4.0 * (l[ea[e]] * gl[eb[e]][d] + l[eb[e]] * gl[ea[e]][d]);
}

struct TriGeometry {
  double area = 0.0;
  double gl[3][2] = {};  // gradients of the barycentric coordinates
};

inline TriGeometry tri_geometry(const Mesh& m, int t) {
  const auto& tri = m.triangles[t];
  Vec2 p0 = m.vertices[tri[0]], p1 = m.vertices[tri[1]], p2 = m.vertices[tri[2]];
  double det = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
  TriGeometry g;
  g.area = 0.5 * det;
  g.gl[0][0] = (p1.y - p2.y) / det;
  g.gl[0][1] = (p2.x - p1.x) / det;
  g.gl[1][0] = (p2.y - p0.y) / det;
  g.gl[1][1] = (p0.x - p2.x) / det;
  g.gl[2][0] = (p0.y - p1.y) / det;
  g.gl[2][1] = (p1.x - p0.x) / det;
  return g;
}

// Numbering for the Taylor-Hood pair: quadratic scalar dofs are the mesh
// vertices followed by one dof per edge (midpoints). The global state vector
// is [u_x (n_p2) | u_y (n_p2) | eta (n_vertices)].
class DofMap {
 public:
  explicit DofMap(const Mesh& m) : mesh_(&m) {
    const int nv = (int)m.vertices.size();
    auto key = [nv](int a, int b) {
      if (a > b) std::swap(a, b);
      return (std::int64_t)a * nv + b;
    };
    edge_id_.reserve(m.triangles.size() * 2);
    tri_p2_.resize(m.triangles.size());
    const int ea[3] = {0, 1, 2}, eb[3] = {1, 2, 0};
    for (std::size_t t = 0; t < m.triangles.size(); ++t) {
      const auto& tri = m.triangles[t];
      for (int k = 0; k < 3; ++k) tri_p2_[t][k] = tri[k];
      for (int e = 0; e < 3; ++e) {
        int a = tri[ea[e]], b = tri[eb[e]];
        auto [it, fresh] = edge_id_.try_emplace(key(a, b), (int)edges_.size());
        if (fresh) edges_.push_back({std::min(a, b), std::max(a, b)});
        tri_p2_[t][3 + e] = nv + it->second;
      }
    }
    p2_points_.resize(nv + edges_.size());
    for (int v = 0; v < nv; ++v) p2_points_[v] = m.vertices[v];
    for (std::size_t e = 0; e < edges_.size(); ++e)
      p2_points_[nv + e] = 0.5 * (m.vertices[edges_[e][0]] + m.vertices[edges_[e][1]]);
  }

  const Mesh& mesh() const { return *mesh_; }
  int n_vertices() const { return (int)mesh_->vertices.size(); }
  int n_edges() const { return (int)edges_.size(); }
  int n_p2() const { return n_vertices() + n_edges(); }
  int n_dof() const { return 2 * n_p2() + n_vertices(); }

  int ux(int i) const { return i; }
  int uy(int i) const { return n_p2() + i; }
  int eta(int j) const { return 2 * n_p2() + j; }

  // P2 node of the edge between vertices a and b, or -1 if no such edge.
  int edge_node(int a, int b) const {
    if (a > b) std::swap(a, b);
    auto it = edge_id_.find((std::int64_t)a * n_vertices() + b);
    return it == edge_id_.end() ? -1 : n_vertices() + it->second;
  }

  const std::array<int, 6>& p2_nodes(int t) const { return tri_p2_[t]; }
  const std::vector<std::array<int, 2>>& edges() const { return edges_; }
  Vec2 p2_point(int node) const { return p2_points_[node]; }

 private:
  const Mesh* mesh_;
  std::vector<std::array<int, 6>> tri_p2_;
  std::vector<std::array<int, 2>> edges_;
  std::vector<Vec2> p2_points_;
  std::unordered_map<std::int64_t, int> edge_id_;
};

// Integrals of the linear hat functions: w_j = sum of area/3 over adjacent
// triangles, exact for piecewise linears. integrate_p1(f) = w . f.
inline Eigen::VectorXd p1_integral_weights(const Mesh& m) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(m.vertices.size());
  for (int t = 0; t < (int)m.triangles.size(); ++t) {
    double third = triangle_area(m, t) / 3.0;
    for (int k = 0; k < 3; ++k) w[m.triangles[t][k]] += third;
  }
  return w;
}

inline double integrate_p1(const Mesh& m, const Eigen::VectorXd& nodal) {
  double s = 0.0;
  for (int t = 0; t < (int)m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    s += triangle_area(m, t) / 3.0 * (nodal[tri[0]] + nodal[tri[1]] + nodal[tri[2]]);
  }
  return s;
}

// Uniform-grid triangle locator for point queries on a fixed mesh.
class TriangleLocator {
 public:
  explicit TriangleLocator(const Mesh& m, int cells_hint = 0) : mesh_(&m) {
    xmin_ = ymin_ = 1e300;
    xmax_ = ymax_ = -1e300;
    for (const auto& v : m.vertices) {
      xmin_ = std::min(xmin_, v.x);
      xmax_ = std::max(xmax_, v.x);
      ymin_ = std::min(ymin_, v.y);
      ymax_ = std::max(ymax_, v.y);
    }
    int n = cells_hint > 0 ? cells_hint
                           : std::max(1, (int)std::sqrt((double)m.triangles.size() / 2.0));
    nx_ = ny_ = n;
    cells_.resize((std::size_t)nx_ * ny_);
    for (int t = 0; t < (int)m.triangles.size(); ++t) {
      const auto& tri = m.triangles[t];
      double txmin = 1e300, txmax = -1e300, tymin = 1e300, tymax = -1e300;
      for (int k = 0; k < 3; ++k) {
        const Vec2& p = m.vertices[tri[k]];
        txmin = std::min(txmin, p.x);
        txmax = std::max(txmax, p.x);
        tymin = std::min(tymin, p.y);
        tymax = std::max(tymax, p.y);
      }
      for (int cj = cell_y(tymin); cj <= cell_y(tymax); ++cj)
        for (int ci = cell_x(txmin); ci <= cell_x(txmax); ++ci)
          cells_[(std::size_t)cj * nx_ + ci].push_back(t);
    }
  }

  // Containing triangle and barycentric coordinates, or -1 if outside.
  int locate(double x, double y, double l[3]) const {
    if (x < xmin_ || x > xmax_ || y < ymin_ || y > ymax_) return -1;
    const auto& cand = cells_[(std::size_t)cell_y(y) * nx_ + cell_x(x)];
    for (int t : cand) {
      const auto& tri = mesh_->triangles[t];
      Vec2 p0 = mesh_->vertices[tri[0]], p1 = mesh_->vertices[tri[1]], p2 = mesh_->vertices[tri[2]];
      double det = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
      double a = ((p1.x - x) * (p2.y - y) - (p2.x - x) * (p1.y - y)) / det;
      double b = ((p2.x - x) * (p0.y - y) - (p0.x - x) * (p2.y - y)) / det;
      double c = 1.0 - a - b;
      if (a >= -1e-12 && b >= -1e-12 && c >= -1e-12) {
        l[0] = a;
        l[1] = b;
        l[2] = c;
        return t;
      }
    }
    return -1;
  }

 private:
  int cell_x(double x) const {
    int c = (int)((x - xmin_) / (xmax_ - xmin_) * nx_);
    return std::clamp(c, 0, nx_ - 1);
  }
  int cell_y(double y) const {
    int c = (int)((y - ymin_) / (ymax_ - ymin_) * ny_);
    return std::clamp(c, 0, ny_ - 1);
  }
  const Mesh* mesh_;
  double xmin_, xmax_, ymin_, ymax_;
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<int>> cells_;
};

}  // namespace tidefarm
