#pragma once
// Turbine-density control and the economic functionals built on it. The
// control is a nodal density d (turbines per m^2) on the linear space,
// bounded by 0 <= d <= dbar with dbar = 1/D_min^2 inside the farm and zero
// elsewhere. Density maps to added friction c_t = 0.5 C_T A_T d, the farm
// extracts P = rho int c_t |u|^3, and profit is the averaged power minus a
// per-turbine break-even cost times the turbine count N = int d.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "tidefarm/fem.hpp"
#include "tidefarm/mesh.hpp"
#include "tidefarm/mesh_io.hpp"
#include "tidefarm/shallow_water.hpp"

namespace tidefarm {

struct FarmError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TurbineSpec {
  double thrust_coefficient = 0.6;  // C_T
  double cross_section = 314.159;   // A_T, m^2
  double min_distance = 40.0;       // D_min, m

  double max_density() const { return 1.0 / (min_distance * min_distance); }
  void validate() const {
    if (!(thrust_coefficient > 0.0 && thrust_coefficient < 1.0))
      throw FarmError("thrust_coefficient must lie in (0, 1)");
    if (!(cross_section > 0.0)) throw FarmError("cross_section must be positive");
    if (!(min_distance > 0.0)) throw FarmError("min_distance must be positive");
  }
};

struct EconomicParams {
  double profit_margin = 0.4;        // m
  double peak_speed = 2.0;           // u_peak, m/s
  double tidal_factor = 1.0;         // 1.0 for constant flow, 0.42 for sinusoidal
  double cost_coefficient = -1.0;    // W per turbine; negative derives it below

  void validate() const {
    if (!(profit_margin >= 0.0 && profit_margin < 1.0))
      throw FarmError("profit_margin must lie in [0, 1)");
    if (!(peak_speed > 0.0)) throw FarmError("peak_speed must be positive");
    if (tidal_factor != 1.0 && tidal_factor != 0.42)
      throw FarmError("tidal_factor must be 1.0 or 0.42");
  }
};

// Break-even power per turbine: the cost of one machine expressed in watts
// of averaged extraction, (factor/2) C_T A_T (1-m) rho u_peak^3.
inline double cost_coefficient(const TurbineSpec& spec, const EconomicParams& econ, double rho) {
  if (econ.cost_coefficient >= 0.0) return econ.cost_coefficient;
  return 0.5 * econ.tidal_factor * spec.thrust_coefficient * spec.cross_section *
         (1.0 - econ.profit_margin) * rho * std::pow(econ.peak_speed, 3);
}

struct DensityField {
  Eigen::VectorXd d;     // turbines per m^2, per vertex
  Eigen::VectorXd dbar;  // nodal upper bound, zero outside the farm

  void validate(const Mesh& m) const {
    const auto nv = (Eigen::Index)m.vertices.size();
    if (d.size() != nv || dbar.size() != nv)
      throw FarmError("density field does not match the mesh");
    if (!d.allFinite() || !dbar.allFinite())
      throw FarmError("density field contains non-finite values");
    for (Eigen::Index i = 0; i < nv; ++i) {
      if (dbar[i] < 0.0) throw FarmError("density upper bound below zero");
      if (d[i] < 0.0) throw FarmError("density below zero");
      if (d[i] > dbar[i]) throw FarmError("density exceeds upper bound");
    }
  }
};

struct FarmRegion {
  Rect box;
  double max_density = -1.0;  // negative: use 1/D_min^2 from the turbine spec
};

// Nodal upper bound from farm regions. A triangle is eligible when its
// centroid lies in a region (and, with max_slope > 0, the local bed gradient
// stays below it); a node keeps a positive bound only when every triangle
// touching it is eligible, so interface nodes are masked to zero and any
// feasible density vanishes outside the farm triangles.
inline Eigen::VectorXd density_upper_bound(const Mesh& m, const std::vector<FarmRegion>& regions,
                                           const TurbineSpec& spec, double max_slope = 0.0,
                                           const Eigen::VectorXd* depth = nullptr) {
  spec.validate();
  if (max_slope > 0.0 && (!depth || depth->size() != (Eigen::Index)m.vertices.size()))
    throw FarmError("slope masking needs a depth field on the mesh");
  Eigen::VectorXd dbar =
      Eigen::VectorXd::Constant(m.vertices.size(), std::numeric_limits<double>::max());
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    const Vec2 c = (1.0 / 3.0) * (m.vertices[tri[0]] + m.vertices[tri[1]] + m.vertices[tri[2]]);
    double tri_bound = 0.0;
    for (const auto& r : regions)
      if (r.box.contains(c)) {
        tri_bound = r.max_density < 0.0 ? spec.max_density() : r.max_density;
        break;
      }
    if (tri_bound > 0.0 && max_slope > 0.0) {
      TriGeometry g = tri_geometry(m, t);
      double gx = 0, gy = 0;
      for (int k = 0; k < 3; ++k) {
        gx += g.gl[k][0] * (*depth)[tri[k]];
        gy += g.gl[k][1] * (*depth)[tri[k]];
      }
      if (std::hypot(gx, gy) >= max_slope) tri_bound = 0.0;
    }
    for (int k = 0; k < 3; ++k) dbar[tri[k]] = std::min(dbar[tri[k]], tri_bound);
  }
  for (Eigen::Index i = 0; i < dbar.size(); ++i)
    if (dbar[i] == std::numeric_limits<double>::max()) dbar[i] = 0.0;
  return dbar;
}

inline Eigen::VectorXd density_to_friction(const Eigen::VectorXd& d, const TurbineSpec& spec) {
  return 0.5 * spec.thrust_coefficient * spec.cross_section * d;
}

inline double turbine_count(const Mesh& m, const Eigen::VectorXd& d) {
  return integrate_p1(m, d);
}

inline double farm_power_integrand(Vec2 u, double ct, double rho, double eps) {
  const double n2 = u.x * u.x + u.y * u.y + eps * eps;
  return rho * ct * n2 * std::sqrt(n2);
}

inline Vec2 farm_force_integrand(Vec2 u, double ct, double rho, double eps) {
  const double nrm = std::sqrt(u.x * u.x + u.y * u.y + eps * eps);
  return rho * ct * nrm * u;
}

namespace detail {

// Quadrature loop shared by the power and force integrals; triangles where
// the friction vanishes identically contribute nothing and are skipped.
template <class Accumulate>
inline void farm_quadrature(const Mesh& m, const DofMap& dofs, const FlowState& state,
                            const Eigen::VectorXd& ct, Accumulate&& acc) {
  state.validate(dofs);
  if (ct.size() != (Eigen::Index)m.vertices.size())
    throw FarmError("friction field does not match the mesh");
  const int n2 = dofs.n_p2();
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    if (ct[tri[0]] == 0.0 && ct[tri[1]] == 0.0 && ct[tri[2]] == 0.0) continue;
    const TriGeometry g = tri_geometry(m, t);
    const auto& nodes = dofs.p2_nodes(t);
    for (int q = 0; q < TriQuad::n; ++q) {
      const double* l = TriQuad::pts[q];
      double N[6];
      p2_values(l, N);
      Vec2 u{0, 0};
      for (int a = 0; a < 6; ++a) {
        u.x += N[a] * state.velocity[nodes[a]];
        u.y += N[a] * state.velocity[n2 + nodes[a]];
      }
      double ctq = 0;
      for (int k = 0; k < 3; ++k) ctq += l[k] * ct[tri[k]];
      acc(l[3] * g.area, u, ctq);
    }
  }
}

}  // namespace detail

inline double farm_power(const Mesh& m, const DofMap& dofs, const FlowState& state,
                         const Eigen::VectorXd& ct, double rho, double eps = 1e-6) {
  double p = 0.0;
  detail::farm_quadrature(m, dofs, state, ct, [&](double w, Vec2 u, double c) {
    p += w * farm_power_integrand(u, c, rho, eps);
  });
  return p;
}

inline Vec2 farm_force(const Mesh& m, const DofMap& dofs, const FlowState& state,
                       const Eigen::VectorXd& ct, double rho, double eps = 1e-6) {
  Vec2 f{0, 0};
  detail::farm_quadrature(m, dofs, state, ct, [&](double w, Vec2 u, double c) {
    f = f + w * farm_force_integrand(u, c, rho, eps);
  });
  return f;
}

// Left-endpoint averaging weights over [t_a, t_b]: state n carries
// dt/(t_b - t_a) when the step [t_n, t_{n+1}) lies inside the window. For a
// single-state (steady) trajectory the lone state carries weight one.
inline std::vector<std::pair<int, double>> averaging_weights(const std::vector<FlowState>& traj,
                                                             double t_a, double t_b) {
  if (traj.empty()) throw FarmError("trajectory is empty");
  if (traj.size() == 1) return {{0, 1.0}};
  if (!(t_b > t_a)) throw FarmError("averaging window is empty");
  const double tol = 1e-9 * (traj.back().time - traj.front().time);
  std::vector<std::pair<int, double>> w;
  for (std::size_t n = 0; n + 1 < traj.size(); ++n) {
    if (traj[n].time >= t_a - tol && traj[n + 1].time <= t_b + tol)
      w.emplace_back((int)n, (traj[n + 1].time - traj[n].time) / (t_b - t_a));
  }
  if (w.empty()) throw FarmError("averaging window covers no time steps");
  return w;
}

struct ProfitBreakdown {
  double power_W = 0.0;
  double cost_W = 0.0;
  double profit_W = 0.0;
  double turbines_real = 0.0;
  long turbines_rounded = 0;
};

inline ProfitBreakdown evaluate_profit(const Mesh& m, const DofMap& dofs,
                                       const std::vector<FlowState>& traj, const DensityField& den,
                                       const TurbineSpec& spec, const EconomicParams& econ,
                                       double rho, double t_a, double t_b, double eps = 1e-6) {
  den.validate(m);
  spec.validate();
  econ.validate();
  Eigen::VectorXd ct = density_to_friction(den.d, spec);
  ProfitBreakdown out;
  for (auto [n, w] : averaging_weights(traj, t_a, t_b))
    out.power_W += w * farm_power(m, dofs, traj[n], ct, rho, eps);
  out.turbines_real = turbine_count(m, den.d);
  out.turbines_rounded = std::lround(out.turbines_real);
  out.cost_W = cost_coefficient(spec, econ, rho) * out.turbines_real;
  out.profit_W = out.power_W - out.cost_W;
  return out;
}

inline std::string export_density(const Mesh& m, const DensityField& den) {
  den.validate(m);
  std::string out = "# x y d dbar\n";
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    out += detail::format_double(m.vertices[i].x);
    out += ' ';
    out += detail::format_double(m.vertices[i].y);
    out += ' ';
    out += detail::format_double(den.d[i]);
    out += ' ';
    out += detail::format_double(den.dbar[i]);
    out += '\n';
  }
  return out;
}

inline DensityField import_density(const Mesh& m, const std::string& text) {
  detail::LineReader reader(text);
  DensityField den;
  den.d.resize(m.vertices.size());
  den.dbar.resize(m.vertices.size());
  std::vector<std::string> tok;
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    if (!reader.next(tok)) throw ParseError("density file ends before every vertex has a row");
    if (tok.size() != 4) reader.fail("expected 'x y d dbar'");
    const double x = detail::parse_double(reader, tok[0]);
    const double y = detail::parse_double(reader, tok[1]);
    const double scale = 1.0 + std::abs(m.vertices[i].x) + std::abs(m.vertices[i].y);
    if (std::abs(x - m.vertices[i].x) + std::abs(y - m.vertices[i].y) > 1e-9 * scale)
      reader.fail("vertex coordinates do not match the mesh");
    den.d[i] = detail::parse_double(reader, tok[2]);
    den.dbar[i] = detail::parse_double(reader, tok[3]);
  }
  if (reader.next(tok)) reader.fail("density file has trailing rows");
  den.validate(m);
  return den;
}

}  // namespace tidefarm
