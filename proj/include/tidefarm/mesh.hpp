#pragma once
// Conforming triangle meshes on rectangular domains: storage, validation and
// a graded structured generator with tagged boundary edges.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace tidefarm {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

struct Rect {
  double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;
  bool contains(double x, double y) const {
    return x >= xmin && x <= xmax && y >= ymin && y <= ymax;
  }
  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
};

struct BoundaryEdge {
  int a = -1;  // vertex ids, ordered along the owning triangle's walk
  int b = -1;
  int tag = -1;  // index into Mesh::tag_names
};

struct Mesh {
  std::vector<Vec2> vertices;
  std::vector<std::array<int, 3>> triangles;  // counter-clockwise
  std::vector<int> region;                    // per-triangle label, 0 = open water
  std::vector<BoundaryEdge> boundary;
  std::vector<std::string> tag_names;

  int tag_id(const std::string& name) const {
    for (int i = 0; i < (int)tag_names.size(); ++i)
      if (tag_names[i] == name) return i;
    return -1;
  }
  int add_tag(const std::string& name) {
    int id = tag_id(name);
    if (id >= 0) return id;
    tag_names.push_back(name);
    return (int)tag_names.size() - 1;
  }
};

struct MeshError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double triangle_area(const Mesh& m, int t) {
  const auto& tri = m.triangles[t];
  Vec2 p0 = m.vertices[tri[0]], p1 = m.vertices[tri[1]], p2 = m.vertices[tri[2]];
  return 0.5 * ((p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y));
}

inline double mesh_area(const Mesh& m) {
  double a = 0.0;
  for (int t = 0; t < (int)m.triangles.size(); ++t) a += triangle_area(m, t);
  return a;
}

// Checks the structural invariants: index ranges, positive (counter-clockwise)
// areas, conformity, and that tagged boundary edges are exactly the edges
// owned by a single triangle. Throws MeshError naming the violated rule.
inline void validate_mesh(const Mesh& m) {
  const int nv = (int)m.vertices.size();
  if (m.region.size() != m.triangles.size())
    throw MeshError("region label count does not match triangle count");
  for (const auto& tri : m.triangles)
    for (int k = 0; k < 3; ++k)
      if (tri[k] < 0 || tri[k] >= nv) throw MeshError("vertex index out of range");
  for (const auto& be : m.boundary) {
    if (be.a < 0 || be.a >= nv || be.b < 0 || be.b >= nv)
      throw MeshError("vertex index out of range");
    if (be.tag < 0 || be.tag >= (int)m.tag_names.size())
      throw MeshError("boundary tag out of range");
  }
  for (int t = 0; t < (int)m.triangles.size(); ++t)
    if (!(triangle_area(m, t) > 0.0)) throw MeshError("non-positive area");

  auto key = [nv](int a, int b) {
    if (a > b) std::swap(a, b);
    return (std::int64_t)a * nv + b;
  };
  std::unordered_map<std::int64_t, int> edge_count;
  edge_count.reserve(m.triangles.size() * 2);
  for (const auto& tri : m.triangles)
    for (int k = 0; k < 3; ++k) {
      int a = tri[k], b = tri[(k + 1) % 3];
      if (a == b) throw MeshError("degenerate triangle edge");
      ++edge_count[key(a, b)];
    }
  for (const auto& [k, c] : edge_count)
    if (c > 2) throw MeshError("edge shared by more than two triangles");

  std::unordered_map<std::int64_t, int> boundary_seen;
  for (const auto& be : m.boundary) {
    auto it = edge_count.find(key(be.a, be.b));
    if (it == edge_count.end() || it->second != 1)
      throw MeshError("boundary edge not owned by exactly one triangle");
    if (++boundary_seen[key(be.a, be.b)] > 1) throw MeshError("duplicate boundary edge");
  }
  for (const auto& [k, c] : edge_count)
    if (c == 1 && !boundary_seen.count(k)) throw MeshError("untagged boundary edge");
}

// One-dimensional cell sizes for one axis: at most `fine` spacing inside
// [fine_lo, fine_hi], at most `coarse` outside, geometric growth capped at
// ratio 1.35 in the transition bands. Pass fine_lo > fine_hi for no fine band.
inline std::vector<double> graded_axis(double length, double coarse, double fine_lo,
                                       double fine_hi, double fine) {
  auto uniform = [](std::vector<double>& pts, double from, double to, double size) {
    int n = std::max(1, (int)std::ceil((to - from) / size - 1e-9));
    for (int i = 1; i <= n; ++i) pts.push_back(from + (to - from) * i / n);
  };
  // Geometric transition away from the fine band, rescaled to fit exactly.
  auto transition = [coarse](std::vector<double>& sizes, double len, double fine_sz) {
    double cur = fine_sz, total = 0.0;
    while (total < len) {
      cur = std::min(cur * 1.35, coarse);
      sizes.push_back(cur);
      total += cur;
    }
    for (double& s : sizes) s *= len / total;
  };

  std::vector<double> pts{0.0};
  if (fine_lo > fine_hi) {
    uniform(pts, 0.0, length, coarse);
    return pts;
  }
  if (fine_lo > 0.0) {
    std::vector<double> sizes;
    transition(sizes, fine_lo, fine);
    for (std::size_t i = sizes.size(); i-- > 1;) pts.push_back(pts.back() + sizes[i]);
    pts.push_back(fine_lo);
  }
  uniform(pts, fine_lo, fine_hi, fine);
  if (fine_hi < length) {
    std::vector<double> sizes;
    transition(sizes, length - fine_hi, fine);
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) pts.push_back(pts.back() + sizes[i]);
    pts.push_back(length);
  }
  return pts;
}

// Rewrites breakpoints as exact mirror images about length/2 so symmetric
// configurations yield bitwise-symmetric meshes.
inline void symmetrize_axis(std::vector<double>& pts, double length) {
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n / 2; ++i) {
    double lo = 0.5 * (pts[i] + (length - pts[n - 1 - i]));
    pts[i] = lo;
    pts[n - 1 - i] = length - lo;
  }
  if (n % 2 == 1) pts[n / 2] = 0.5 * length;
}

// Structured split-quad triangulation of [0,width] x [0,height]. Axis spacing
// is coarse_size at most; inside fine_box it is fine_size/sqrt(2) so that
// triangle diameters (the split-quad diagonals) stay below fine_size. Quad
// diagonals are mirrored about mid-height, which makes meshes built with an
// even row count exactly symmetric under y -> height - y. Boundary tags:
// west, east, south, north.
inline Mesh generate_rectangle(double width, double height, double coarse_size,
                               const Rect* fine_box = nullptr, double fine_size = 0.0) {
  if (!(width > 0.0) || !(height > 0.0)) throw MeshError("degenerate rectangle");
  if (!(coarse_size > 0.0)) throw MeshError("coarse_size must be positive");
  if (fine_box) {
    if (!(fine_size > 0.0)) throw MeshError("fine_size must be positive");
    if (fine_size > coarse_size) throw MeshError("fine_size must not exceed coarse_size");
    if (fine_box->xmin < 0.0 || fine_box->ymin < 0.0 || fine_box->xmax > width ||
        fine_box->ymax > height || fine_box->width() <= 0.0 || fine_box->height() <= 0.0)
      throw MeshError("fine_box must lie inside the domain");
  }

  const double fine_axis = fine_size / std::sqrt(2.0);
  std::vector<double> xs, ys;
  if (fine_box) {
    xs = graded_axis(width, coarse_size, fine_box->xmin, fine_box->xmax, fine_axis);
    ys = graded_axis(height, coarse_size, fine_box->ymin, fine_box->ymax, fine_axis);
    if (std::abs(fine_box->xmin - (width - fine_box->xmax)) < 1e-9 * width)
      symmetrize_axis(xs, width);
    if (std::abs(fine_box->ymin - (height - fine_box->ymax)) < 1e-9 * height)
      symmetrize_axis(ys, height);
  } else {
    xs = graded_axis(width, coarse_size, 1.0, 0.0, 0.0);
    ys = graded_axis(height, coarse_size, 1.0, 0.0, 0.0);
    symmetrize_axis(xs, width);
    symmetrize_axis(ys, height);
  }

  const int nx = (int)xs.size(), ny = (int)ys.size();
  Mesh m;
  m.vertices.reserve((std::size_t)nx * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) m.vertices.push_back({xs[i], ys[j]});
  auto vid = [nx](int i, int j) { return j * nx + i; };

  m.triangles.reserve((std::size_t)2 * (nx - 1) * (ny - 1));
  for (int j = 0; j + 1 < ny; ++j) {
    const bool lower_half = 0.5 * (ys[j] + ys[j + 1]) < 0.5 * height;
    for (int i = 0; i + 1 < nx; ++i) {
      int v00 = vid(i, j), v10 = vid(i + 1, j), v01 = vid(i, j + 1), v11 = vid(i + 1, j + 1);
      if (lower_half) {
        m.triangles.push_back({v00, v10, v11});
        m.triangles.push_back({v00, v11, v01});
      } else {
        m.triangles.push_back({v00, v10, v01});
        m.triangles.push_back({v10, v11, v01});
      }
    }
  }
  m.region.assign(m.triangles.size(), 0);

  const int tag_west = m.add_tag("west"), tag_east = m.add_tag("east");
  const int tag_south = m.add_tag("south"), tag_north = m.add_tag("north");
  for (int j = 0; j + 1 < ny; ++j) {
    m.boundary.push_back({vid(0, j + 1), vid(0, j), tag_west});
    m.boundary.push_back({vid(nx - 1, j), vid(nx - 1, j + 1), tag_east});
  }
  for (int i = 0; i + 1 < nx; ++i) {
    m.boundary.push_back({vid(i, 0), vid(i + 1, 0), tag_south});
    m.boundary.push_back({vid(i + 1, ny - 1), vid(i, ny - 1), tag_north});
  }
  return m;
}

// Assigns region ids by triangle centroid. Later entries win on overlap.
inline void label_regions(Mesh& m, const std::vector<std::pair<Rect, int>>& boxes) {
  for (int t = 0; t < (int)m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    double cx = 0.0, cy = 0.0;
    for (int k = 0; k < 3; ++k) {
      cx += m.vertices[tri[k]].x / 3.0;
      cy += m.vertices[tri[k]].y / 3.0;
    }
    for (const auto& [box, id] : boxes)
      if (box.contains(cx, cy)) m.region[t] = id;
  }
}

}  // namespace tidefarm
