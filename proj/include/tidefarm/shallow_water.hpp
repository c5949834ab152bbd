#pragma once
// Nonlinear shallow water equations on the quadratic-velocity / linear-
// elevation pair. Momentum: du/dt + (u.grad)u - nu lap(u) + g grad(eta)
// + (c_b + c_t)/H |u| u = 0 with H = h + eta. Continuity: deta/dt
// + div(H u) = 0, integrated by parts; the boundary flux integral is kept on
// every non-free-slip segment and dropped on free-slip walls. Dirichlet
// conditions are imposed by row replacement, time discretization is backward
// Euler, and each step is solved by full Newton with an analytic Jacobian and
// a sparse direct factorization.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tidefarm/fem.hpp"
#include "tidefarm/mesh.hpp"
#include "tidefarm/mesh_io.hpp"

namespace tidefarm {

using SpMat = Eigen::SparseMatrix<double>;

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : SolverError {
  double residual_norm = 0.0;
  int step_index = -1;
  DivergenceError(const std::string& what, double rn, int step = -1)
      : SolverError(what), residual_norm(rn), step_index(step) {}
};

struct PhysicalParams {
  double gravity = 9.81;             // m/s^2
  double density = 1000.0;           // kg/m^3
  double viscosity = 0.5;            // m^2/s
  double background_friction = 0.0025;
  Eigen::VectorXd depth;             // depth at rest per vertex, m

  static PhysicalParams constant_depth(const Mesh& m, double h) {
    PhysicalParams p;
    p.depth = Eigen::VectorXd::Constant(m.vertices.size(), h);
    return p;
  }
  void validate(const Mesh& m) const {
    if (!(gravity > 0.0)) throw SolverError("gravity must be positive");
    if (!(density > 0.0)) throw SolverError("density must be positive");
    if (viscosity < 0.0) throw SolverError("viscosity must be nonnegative");
    if (background_friction < 0.0) throw SolverError("background_friction must be nonnegative");
    if (depth.size() != (Eigen::Index)m.vertices.size())
      throw SolverError("depth field does not match the mesh");
    if (depth.minCoeff() <= 0.0) throw SolverError("depth must be positive everywhere");
  }
};

enum class BcKind { velocity_dirichlet, eta_dirichlet, free_slip };

struct BoundaryPrescription {
  BcKind kind = BcKind::free_slip;
  std::function<Vec2(double)> velocity;  // used when kind == velocity_dirichlet
  std::function<double(double)> eta;     // used when kind == eta_dirichlet
};

struct BoundaryConditionSet {
  std::map<std::string, BoundaryPrescription> by_tag;

  static BoundaryPrescription inflow(Vec2 u) {
    return {BcKind::velocity_dirichlet, [u](double) { return u; }, {}};
  }
  static BoundaryPrescription inflow_sine(Vec2 amplitude, double period) {
    return {BcKind::velocity_dirichlet,
            [amplitude, period](double t) {
              double s = std::sin(2.0 * M_PI * t / period);
              return Vec2{amplitude.x * s, amplitude.y * s};
            },
            {}};
  }
  static BoundaryPrescription elevation(double v) {
    return {BcKind::eta_dirichlet, {}, [v](double) { return v; }};
  }
  static BoundaryPrescription elevation_sine(double amplitude, double period) {
    return {BcKind::eta_dirichlet, {}, [amplitude, period](double t) {
              return amplitude * std::sin(2.0 * M_PI * t / period);
            }};
  }
  static BoundaryPrescription free_slip() { return {BcKind::free_slip, {}, {}}; }

  void validate(const Mesh& m) const {
    for (const auto& name : m.tag_names)
      if (!by_tag.count(name))
        throw SolverError("boundary tag '" + name + "' has no prescription");
    for (const auto& [name, p] : by_tag)
      if (m.tag_id(name) < 0)
        throw SolverError("prescription for unknown boundary tag '" + name + "'");
  }
};

struct TimeSteppingParams {
  double dt = 0.0;         // s; transient only
  double t_start = 0.0;    // s
  double t_end = 0.0;      // s; transient only
  double newton_rel_tol = 1e-10;
  double newton_abs_tol = 0.0;
  int newton_max_iter = 30;
  double newton_damping = 1.0;
  double velocity_smoothing = 1e-6;  // m/s, epsilon under the velocity norm
  bool fixed_depth = false;          // replace H = h + eta by H = h (debugging)
  double max_trajectory_mb = 3000.0;
};

struct FlowState {
  Eigen::VectorXd velocity;   // [u_x (n_p2) | u_y (n_p2)]
  Eigen::VectorXd elevation;  // per vertex
  double time = 0.0;

  static FlowState zero(const DofMap& dofs, double t = 0.0) {
    return {Eigen::VectorXd::Zero(2 * dofs.n_p2()), Eigen::VectorXd::Zero(dofs.n_vertices()), t};
  }
  void validate(const DofMap& dofs) const {
    if (velocity.size() != 2 * dofs.n_p2() || elevation.size() != dofs.n_vertices())
      throw SolverError("flow state does not match the mesh");
    if (!velocity.allFinite() || !elevation.allFinite())
      throw SolverError("flow state contains non-finite values");
  }
};

class ShallowWaterSolver {
 public:
  ShallowWaterSolver(const Mesh& mesh, const DofMap& dofs, PhysicalParams phys,
                     BoundaryConditionSet bcs, TimeSteppingParams stepping)
      : mesh_(&mesh), dofs_(&dofs), phys_(std::move(phys)), bcs_(std::move(bcs)),
        stepping_(stepping) {
    phys_.validate(mesh);
    bcs_.validate(mesh);
    if (!(stepping_.velocity_smoothing > 0.0))
      throw SolverError("velocity_smoothing must be positive");

    geom_.resize(mesh.triangles.size());
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) geom_[t] = tri_geometry(mesh, t);

    build_boundary_info();
    build_constraints();
  }

  const Mesh& mesh() const { return *mesh_; }
  const DofMap& dofs() const { return *dofs_; }
  const PhysicalParams& physical() const { return phys_; }
  const TimeSteppingParams& stepping() const { return stepping_; }
  const std::vector<char>& constrained() const { return constrained_; }

  // Dirichlet values at time t on constrained dofs, zero elsewhere.
  Eigen::VectorXd dirichlet_values(double t) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dofs_->n_dof());
    for (const auto& e : dirichlet_entries_) {
      const auto& p = bcs_.by_tag.at(mesh_->tag_names[e.tag]);
      if (e.comp == 2)
        g[e.dof] = p.eta(t);
      else
        g[e.dof] = e.comp == 0 ? p.velocity(t).x : p.velocity(t).y;
    }
    return g;
  }

  void apply_dirichlet(FlowState& s, double t) const {
    Eigen::VectorXd g = dirichlet_values(t);
    const int n2 = dofs_->n_p2();
    for (const auto& e : dirichlet_entries_) {
      if (e.comp == 0) s.velocity[e.dof] = g[e.dof];
      if (e.comp == 1) s.velocity[e.dof] = g[e.dof];
      if (e.comp == 2) s.elevation[e.dof - 2 * n2] = g[e.dof];
    }
  }

  // Residual of the discrete system at `state` (Dirichlet rows replaced by
  // state - prescribed value). dt_inv = 0 assembles the steady form. The
  // Jacobian is refreshed when with_jacobian is set and can then be read via
  // jacobian_matrix().
  void assemble(const FlowState& state, const FlowState* previous, double dt_inv, double time,
                const Eigen::VectorXd& ct, Eigen::VectorXd& residual, bool with_jacobian) {
    state.validate(*dofs_);
    if (ct.size() != dofs_->n_vertices()) throw SolverError("friction field does not match mesh");
    if (!pattern_built_) build_pattern();

    const int n2 = dofs_->n_p2();
    residual.setZero(dofs_->n_dof());
    double* jv = nullptr;
    if (with_jacobian) {
      std::fill(J_.valuePtr(), J_.valuePtr() + J_.nonZeros(), 0.0);
      jv = J_.valuePtr();
      lu_dirty_ = true;
    }

    const double nu = phys_.viscosity, grav = phys_.gravity, cb = phys_.background_friction;
    const double eps2 = stepping_.velocity_smoothing * stepping_.velocity_smoothing;
    const bool fixed = stepping_.fixed_depth;

    double Rl[15];
    double Jl[15][15];
    for (int t = 0; t < (int)mesh_->triangles.size(); ++t) {
      const auto& tri = mesh_->triangles[t];
      const auto& nodes = dofs_->p2_nodes(t);
      const TriGeometry& g = geom_[t];

      double uxv[6], uyv[6], upx[6], upy[6];
      for (int a = 0; a < 6; ++a) {
        uxv[a] = state.velocity[nodes[a]];
        uyv[a] = state.velocity[n2 + nodes[a]];
        if (previous) {
          upx[a] = previous->velocity[nodes[a]];
          upy[a] = previous->velocity[n2 + nodes[a]];
        }
      }
      double etav[3], etapv[3], hv[3], ctv[3];
      for (int k = 0; k < 3; ++k) {
        etav[k] = state.elevation[tri[k]];
        etapv[k] = previous ? previous->elevation[tri[k]] : 0.0;
        hv[k] = phys_.depth[tri[k]];
        ctv[k] = ct[tri[k]];
      }

      for (double& v : Rl) v = 0.0;
      if (with_jacobian)
        for (auto& row : Jl)
          for (double& v : row) v = 0.0;

      for (int q = 0; q < TriQuad::n; ++q) {
        const double* l = TriQuad::pts[q];
        const double wA = l[3] * g.area;
        double N2[6], G2[6][2];
        p2_values(l, N2);
        p2_gradients(l, g.gl, G2);

        double ux = 0, uy = 0, gux[2] = {0, 0}, guy[2] = {0, 0};
        double upxq = 0, upyq = 0;
        for (int a = 0; a < 6; ++a) {
          ux += N2[a] * uxv[a];
          uy += N2[a] * uyv[a];
          gux[0] += G2[a][0] * uxv[a];
          gux[1] += G2[a][1] * uxv[a];
          guy[0] += G2[a][0] * uyv[a];
          guy[1] += G2[a][1] * uyv[a];
          if (previous) {
            upxq += N2[a] * upx[a];
            upyq += N2[a] * upy[a];
          }
        }
        double eta = 0, etap = 0, h = 0, ctq = 0, geta[2] = {0, 0};
        for (int k = 0; k < 3; ++k) {
          eta += l[k] * etav[k];
          etap += l[k] * etapv[k];
          h += l[k] * hv[k];
          ctq += l[k] * ctv[k];
          geta[0] += g.gl[k][0] * etav[k];
          geta[1] += g.gl[k][1] * etav[k];
        }
        const double H = fixed ? h : h + eta;
        const double c = cb + ctq;
        const double nrm = std::sqrt(ux * ux + uy * uy + eps2);
        const double coH = c / H;

        const double advx = ux * gux[0] + uy * gux[1];
        const double advy = ux * guy[0] + uy * guy[1];

        for (int a = 0; a < 6; ++a) {
          Rl[a] += wA * (dt_inv * (ux - upxq) * N2[a] + advx * N2[a] +
                         nu * (G2[a][0] * gux[0] + G2[a][1] * gux[1]) +
                         grav * geta[0] * N2[a] + coH * nrm * ux * N2[a]);
          Rl[6 + a] += wA * (dt_inv * (uy - upyq) * N2[a] + advy * N2[a] +
                             nu * (G2[a][0] * guy[0] + G2[a][1] * guy[1]) +
                             grav * geta[1] * N2[a] + coH * nrm * uy * N2[a]);
        }
        for (int k = 0; k < 3; ++k)
          Rl[12 + k] += wA * (dt_inv * (eta - etap) * l[k] -
                              H * (ux * g.gl[k][0] + uy * g.gl[k][1]));

        if (!with_jacobian) continue;

        const double fxx = coH * (ux * ux / nrm + nrm);
        const double fxy = coH * (ux * uy / nrm);
        const double fyy = coH * (uy * uy / nrm + nrm);
        const double dHx = fixed ? 0.0 : -c / (H * H) * nrm * ux;
        const double dHy = fixed ? 0.0 : -c / (H * H) * nrm * uy;

        for (int a = 0; a < 6; ++a) {
          for (int b = 0; b < 6; ++b) {
            const double mass = dt_inv * N2[a] * N2[b];
            const double visc = nu * (G2[a][0] * G2[b][0] + G2[a][1] * G2[b][1]);
            const double ugb = ux * G2[b][0] + uy * G2[b][1];
            Jl[a][b] += wA * (mass + N2[a] * (N2[b] * gux[0] + ugb) + visc + N2[a] * N2[b] * fxx);
            Jl[a][6 + b] += wA * N2[a] * N2[b] * (gux[1] + fxy);
            Jl[6 + a][b] += wA * N2[a] * N2[b] * (guy[0] + fxy);
            Jl[6 + a][6 + b] +=
                wA * (mass + N2[a] * (N2[b] * guy[1] + ugb) + visc + N2[a] * N2[b] * fyy);
          }
          for (int k = 0; k < 3; ++k) {
            Jl[a][12 + k] += wA * N2[a] * (grav * g.gl[k][0] + dHx * l[k]);
            Jl[6 + a][12 + k] += wA * N2[a] * (grav * g.gl[k][1] + dHy * l[k]);
          }
        }
        for (int k = 0; k < 3; ++k) {
          for (int b = 0; b < 6; ++b) {
            Jl[12 + k][b] += wA * (-H * g.gl[k][0] * N2[b]);
            Jl[12 + k][6 + b] += wA * (-H * g.gl[k][1] * N2[b]);
          }
          const double dflux = fixed ? 0.0 : -(ux * g.gl[k][0] + uy * g.gl[k][1]);
          for (int c2 = 0; c2 < 3; ++c2)
            Jl[12 + k][12 + c2] += wA * (dt_inv * l[c2] * l[k] + dflux * l[c2]);
        }
      }

      int ids[15];
      for (int a = 0; a < 6; ++a) {
        ids[a] = nodes[a];
        ids[6 + a] = n2 + nodes[a];
      }
      for (int k = 0; k < 3; ++k) ids[12 + k] = 2 * n2 + tri[k];
      const int* off = &elem_offsets_[(std::size_t)t * 225];
      for (int i = 0; i < 15; ++i) {
        if (constrained_[ids[i]]) continue;
        residual[ids[i]] += Rl[i];
        if (with_jacobian)
          for (int j = 0; j < 15; ++j) jv[off[i * 15 + j]] += Jl[i][j];
      }
    }

    assemble_boundary(state, time, residual, jv);

    // Dirichlet rows: value minus prescription, identity diagonal.
    Eigen::VectorXd gD = dirichlet_values(time);
    for (const auto& e : dirichlet_entries_) {
      double cur = e.comp == 2 ? state.elevation[e.dof - 2 * n2] : state.velocity[e.dof];
      residual[e.dof] = cur - gD[e.dof];
    }
    if (with_jacobian)
      for (int d : constrained_diag_offsets_) jv[d] = 1.0;
  }

  const SpMat& jacobian_matrix() const { return J_; }

  // Uniform state at the mean of the prescribed boundary values. At rest the
  // friction and advection linearizations vanish and steady Newton steps from
  // zero solve a nearly inviscid system whose iterates overshoot wildly, so
  // steady solves start from this instead.
  FlowState uniform_background(double t) const {
    Eigen::VectorXd g = dirichlet_values(t);
    double sum[3] = {0, 0, 0};
    int cnt[3] = {0, 0, 0};
    for (const auto& e : dirichlet_entries_) {
      sum[e.comp] += g[e.dof];
      ++cnt[e.comp];
    }
    FlowState s = FlowState::zero(*dofs_, t);
    if (cnt[0]) s.velocity.head(dofs_->n_p2()).setConstant(sum[0] / cnt[0]);
    if (cnt[1]) s.velocity.tail(dofs_->n_p2()).setConstant(sum[1] / cnt[1]);
    if (cnt[2]) s.elevation.setConstant(sum[2] / cnt[2]);
    return s;
  }

  FlowState solve_steady(const Eigen::VectorXd& ct, const FlowState* initial = nullptr) {
    FlowState s = initial ? *initial : uniform_background(stepping_.t_start);
    s.time = stepping_.t_start;
    try {
      newton(s, nullptr, 0.0, stepping_.t_start, ct, -1);
      return s;
    } catch (const DivergenceError&) {
    }

    // Pseudo-transient continuation: implicit steps with a growing time step
    // walk the state into Newton's basin when the direct solve fails (weakly
    // forced flows started far from the friction balance).
    s = initial ? *initial : uniform_background(stepping_.t_start);
    s.time = stepping_.t_start;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Vec2& v : mesh_->vertices) {
      xmin = std::min(xmin, v.x);
      xmax = std::max(xmax, v.x);
      ymin = std::min(ymin, v.y);
      ymax = std::max(ymax, v.y);
    }
    const double diag = std::hypot(xmax - xmin, ymax - ymin);
    double dt = diag / std::sqrt(phys_.gravity * phys_.depth.maxCoeff());
    for (int k = 0; k < 48; ++k) {
      FlowState prev = s;
      try {
        newton(s, &prev, 1.0 / dt, stepping_.t_start, ct, -1, 1e-3,
               stepping_.newton_max_iter);
        dt *= 2.0;
      } catch (const DivergenceError&) {
        s = prev;
        dt *= 0.25;
        continue;
      }
      if (k >= 6 && k % 4 == 2) {
        FlowState probe = s;
        try {
          newton(probe, nullptr, 0.0, stepping_.t_start, ct, -1, stepping_.newton_rel_tol, 12);
          return probe;
        } catch (const DivergenceError&) {
        }
      }
    }
    newton(s, nullptr, 0.0, stepping_.t_start, ct, -1);
    return s;
  }

  std::vector<FlowState> solve_transient(const Eigen::VectorXd& ct, const FlowState& initial) {
    if (!(stepping_.dt > 0.0)) throw SolverError("dt must be positive");
    if (!(stepping_.t_end > stepping_.t_start))
      throw SolverError("t_end must exceed t_start");
    const double span = stepping_.t_end - stepping_.t_start;
    const int nsteps = (int)std::llround(span / stepping_.dt);
    if (nsteps < 1 || std::abs(nsteps * stepping_.dt - span) > 1e-6 * stepping_.dt)
      throw SolverError("dt must divide the simulated interval");
    const double mb = (double)(nsteps + 1) * dofs_->n_dof() * 8.0 / 1e6;
    if (mb > stepping_.max_trajectory_mb)
      throw SolverError("trajectory needs " + std::to_string((long)mb) +
                        " MB; raise max_trajectory_mb or coarsen dt");

    initial.validate(*dofs_);
    std::vector<FlowState> traj;
    traj.reserve(nsteps + 1);
    traj.push_back(initial);
    traj.back().time = stepping_.t_start;
    for (int n = 1; n <= nsteps; ++n) {
      FlowState s = traj.back();
      s.time = stepping_.t_start + n * stepping_.dt;
      newton(s, &traj[n - 1], 1.0 / stepping_.dt, s.time, ct, n);
      traj.push_back(std::move(s));
    }
    return traj;
  }

  // Factorizes the current Jacobian and solves J x = rhs or J^T x = rhs.
  Eigen::VectorXd solve_linear(const Eigen::VectorXd& rhs, bool transpose) {
    factorize();
    return transpose ? Eigen::VectorXd(lu_.transpose().solve(rhs)) : Eigen::VectorXd(lu_.solve(rhs));
  }

  // Block mass matrix (velocity components and elevation), no row replacement.
  SpMat mass_matrix() const {
    const int n2 = dofs_->n_p2();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(mesh_->triangles.size() * 81);
    for (int t = 0; t < (int)mesh_->triangles.size(); ++t) {
      const auto& tri = mesh_->triangles[t];
      const auto& nodes = dofs_->p2_nodes(t);
      const TriGeometry& g = geom_[t];
      double m2[6][6] = {}, m1[3][3] = {};
      for (int q = 0; q < TriQuad::n; ++q) {
        const double* l = TriQuad::pts[q];
        double N2[6];
        p2_values(l, N2);
        const double wA = l[3] * g.area;
        for (int a = 0; a < 6; ++a)
          for (int b = 0; b < 6; ++b) m2[a][b] += wA * N2[a] * N2[b];
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) m1[a][b] += wA * l[a] * l[b];
      }
      for (int a = 0; a < 6; ++a)
        for (int b = 0; b < 6; ++b) {
          trip.emplace_back(nodes[a], nodes[b], m2[a][b]);
          trip.emplace_back(n2 + nodes[a], n2 + nodes[b], m2[a][b]);
        }
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          trip.emplace_back(2 * n2 + tri[a], 2 * n2 + tri[b], m1[a][b]);
    }
    SpMat M(dofs_->n_dof(), dofs_->n_dof());
    M.setFromTriplets(trip.begin(), trip.end());
    return M;
  }

  // Volume flux through boundary edges of one prescription kind, by direct
  // quadrature of H u . n.
  double direct_boundary_flux(const FlowState& state, BcKind kind) const {
    const int n2 = dofs_->n_p2();
    double flux = 0.0;
    for (const auto& be : boundary_info_) {
      if (bcs_.by_tag.at(mesh_->tag_names[be.tag]).kind != kind) continue;
      for (int q = 0; q < EdgeQuad::n; ++q) {
        const double s = EdgeQuad::s[q];
        const double Na = (1 - s) * (1 - 2 * s), Nb = s * (2 * s - 1), Nm = 4 * s * (1 - s);
        double ux = Na * state.velocity[be.a] + Nb * state.velocity[be.b] +
                    Nm * state.velocity[be.mid];
        double uy = Na * state.velocity[n2 + be.a] + Nb * state.velocity[n2 + be.b] +
                    Nm * state.velocity[n2 + be.mid];
        double eta = (1 - s) * state.elevation[be.a] + s * state.elevation[be.b];
        double h = (1 - s) * phys_.depth[be.a] + s * phys_.depth[be.b];
        double H = stepping_.fixed_depth ? h : h + eta;
        flux += EdgeQuad::w[q] * be.len * H * (ux * be.nx + uy * be.ny);
      }
    }
    return flux;
  }

  // Net volume flux with the outflow through elevation-Dirichlet boundaries
  // recovered consistently from the discrete continuity equations: the inflow
  // is integrated directly, the outflow as <H u, grad chi> where chi is the
  // hat-function indicator of the constrained elevation nodes. For a converged
  // steady state this vanishes to Newton tolerance.
  double consistent_net_flux(const FlowState& state) const {
    const int n2 = dofs_->n_p2();
    Eigen::VectorXd chi = Eigen::VectorXd::Zero(dofs_->n_vertices());
    for (const auto& e : dirichlet_entries_)
      if (e.comp == 2) chi[e.dof - 2 * n2] = 1.0;

    double out = 0.0;
    for (int t = 0; t < (int)mesh_->triangles.size(); ++t) {
      const auto& tri = mesh_->triangles[t];
      if (chi[tri[0]] == 0.0 && chi[tri[1]] == 0.0 && chi[tri[2]] == 0.0) continue;
      const auto& nodes = dofs_->p2_nodes(t);
      const TriGeometry& g = geom_[t];
      double gchi[2] = {0, 0};
      for (int k = 0; k < 3; ++k) {
        gchi[0] += g.gl[k][0] * chi[tri[k]];
        gchi[1] += g.gl[k][1] * chi[tri[k]];
      }
      for (int q = 0; q < TriQuad::n; ++q) {
        const double* l = TriQuad::pts[q];
        double N2[6];
        p2_values(l, N2);
        double ux = 0, uy = 0;
        for (int a = 0; a < 6; ++a) {
          ux += N2[a] * state.velocity[nodes[a]];
          uy += N2[a] * state.velocity[n2 + nodes[a]];
        }
        double eta = 0, h = 0;
        for (int k = 0; k < 3; ++k) {
          eta += l[k] * state.elevation[tri[k]];
          h += l[k] * phys_.depth[tri[k]];
        }
        const double H = stepping_.fixed_depth ? h : h + eta;
        out += l[3] * g.area * H * (ux * gchi[0] + uy * gchi[1]);
      }
    }
    return direct_boundary_flux(state, BcKind::velocity_dirichlet) + out;
  }

  int last_newton_iterations() const { return last_newton_iters_; }

 private:
  struct DirichletEntry {
    int dof;
    int tag;
    int comp;  // 0 = u_x, 1 = u_y, 2 = eta
  };
  struct BoundaryEdgeInfo {
    int a, b, mid, tag;
    double len, nx, ny;
  };

  void build_boundary_info() {
    boundary_info_.reserve(mesh_->boundary.size());
    for (const auto& be : mesh_->boundary) {
      BoundaryEdgeInfo info;
      info.a = be.a;
      info.b = be.b;
      info.mid = dofs_->edge_node(be.a, be.b);
      if (info.mid < 0) throw SolverError("boundary edge is not a mesh edge");
      info.tag = be.tag;
      Vec2 d = mesh_->vertices[be.b] - mesh_->vertices[be.a];
      info.len = norm(d);
      // triangles are counter-clockwise and boundary edges follow the owning
      // triangle's walk, so the domain lies left of a->b and the outward
      // normal points right of it
      info.nx = d.y / info.len;
      info.ny = -d.x / info.len;
      boundary_info_.push_back(info);
    }
  }

  void build_constraints() {
    constrained_.assign(dofs_->n_dof(), 0);
    const int n2 = dofs_->n_p2();
    auto claim = [&](int dof, int tag, int comp) {
      if (constrained_[dof]) return;
      constrained_[dof] = 1;
      dirichlet_entries_.push_back({dof, tag, comp});
    };
    for (const auto& be : boundary_info_) {
      const auto& p = bcs_.by_tag.at(mesh_->tag_names[be.tag]);
      if (p.kind == BcKind::velocity_dirichlet) {
        for (int nd : {be.a, be.b, be.mid}) {
          claim(nd, be.tag, 0);
          claim(n2 + nd, be.tag, 1);
        }
      } else if (p.kind == BcKind::eta_dirichlet) {
        claim(2 * n2 + be.a, be.tag, 2);
        claim(2 * n2 + be.b, be.tag, 2);
      }
    }
  }

  void build_pattern() {
    const int n2 = dofs_->n_p2();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(mesh_->triangles.size() * 225 + boundary_info_.size() * 16 + dofs_->n_dof());
    for (int t = 0; t < (int)mesh_->triangles.size(); ++t) {
      const auto& tri = mesh_->triangles[t];
      const auto& nodes = dofs_->p2_nodes(t);
      int ids[15];
      for (int a = 0; a < 6; ++a) {
        ids[a] = nodes[a];
        ids[6 + a] = n2 + nodes[a];
      }
      for (int k = 0; k < 3; ++k) ids[12 + k] = 2 * n2 + tri[k];
      for (int i = 0; i < 15; ++i) {
        if (constrained_[ids[i]]) continue;
        for (int j = 0; j < 15; ++j) trip.emplace_back(ids[i], ids[j], 0.0);
      }
    }
    for (const auto& be : boundary_info_) {
      if (bcs_.by_tag.at(mesh_->tag_names[be.tag]).kind == BcKind::free_slip) continue;
      const int rows[2] = {2 * n2 + be.a, 2 * n2 + be.b};
      const int cols[8] = {be.a, be.b, be.mid, n2 + be.a, n2 + be.b, n2 + be.mid,
                           2 * n2 + be.a, 2 * n2 + be.b};
      for (int r : rows) {
        if (constrained_[r]) continue;
        for (int c : cols) trip.emplace_back(r, c, 0.0);
      }
    }
    for (int d = 0; d < dofs_->n_dof(); ++d)
      if (constrained_[d]) trip.emplace_back(d, d, 0.0);

    J_.resize(dofs_->n_dof(), dofs_->n_dof());
    J_.setFromTriplets(trip.begin(), trip.end());
    J_.makeCompressed();

    auto offset_of = [this](int row, int col) {
      const int* outer = J_.outerIndexPtr();
      const int* inner = J_.innerIndexPtr();
      int lo = outer[col], hi = outer[col + 1];
      const int* it = std::lower_bound(inner + lo, inner + hi, row);
      return (int)(it - inner);
    };

    elem_offsets_.assign(mesh_->triangles.size() * 225, 0);
    for (int t = 0; t < (int)mesh_->triangles.size(); ++t) {
      const auto& tri = mesh_->triangles[t];
      const auto& nodes = dofs_->p2_nodes(t);
      int ids[15];
      for (int a = 0; a < 6; ++a) {
        ids[a] = nodes[a];
        ids[6 + a] = n2 + nodes[a];
      }
      for (int k = 0; k < 3; ++k) ids[12 + k] = 2 * n2 + tri[k];
      int* off = &elem_offsets_[(std::size_t)t * 225];
      for (int i = 0; i < 15; ++i)
        for (int j = 0; j < 15; ++j)
          off[i * 15 + j] = constrained_[ids[i]] ? 0 : offset_of(ids[i], ids[j]);
    }
    // unused slots point at entry 0; rows guarded by the constrained check

    boundary_offsets_.clear();
    for (const auto& be : boundary_info_) {
      if (bcs_.by_tag.at(mesh_->tag_names[be.tag]).kind == BcKind::free_slip) {
        boundary_offsets_.emplace_back();
        continue;
      }
      std::array<int, 16> off;
      const int rows[2] = {2 * n2 + be.a, 2 * n2 + be.b};
      const int cols[8] = {be.a, be.b, be.mid, n2 + be.a, n2 + be.b, n2 + be.mid,
                           2 * n2 + be.a, 2 * n2 + be.b};
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 8; ++c)
          off[r * 8 + c] = constrained_[rows[r]] ? 0 : offset_of(rows[r], cols[c]);
      boundary_offsets_.push_back(off);
    }

    constrained_diag_offsets_.clear();
    for (int d = 0; d < dofs_->n_dof(); ++d)
      if (constrained_[d]) constrained_diag_offsets_.push_back(offset_of(d, d));

    lu_.analyzePattern(J_);
    pattern_built_ = true;
  }

  void assemble_boundary(const FlowState& state, double time, Eigen::VectorXd& residual,
                         double* jv) {
    const int n2 = dofs_->n_p2();
    for (std::size_t e = 0; e < boundary_info_.size(); ++e) {
      const auto& be = boundary_info_[e];
      if (bcs_.by_tag.at(mesh_->tag_names[be.tag]).kind == BcKind::free_slip) continue;
      const int rows[2] = {2 * n2 + be.a, 2 * n2 + be.b};
      double Rl[2] = {0, 0};
      double Jl[2][8] = {};
      for (int q = 0; q < EdgeQuad::n; ++q) {
        const double s = EdgeQuad::s[q];
        const double w = EdgeQuad::w[q] * be.len;
        const double Nv[3] = {(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)};
        const double Ne[2] = {1 - s, s};
        const int unodes[3] = {be.a, be.b, be.mid};
        double ux = 0, uy = 0;
        for (int k = 0; k < 3; ++k) {
          ux += Nv[k] * state.velocity[unodes[k]];
          uy += Nv[k] * state.velocity[n2 + unodes[k]];
        }
        double eta = Ne[0] * state.elevation[be.a] + Ne[1] * state.elevation[be.b];
        double h = Ne[0] * phys_.depth[be.a] + Ne[1] * phys_.depth[be.b];
        double H = stepping_.fixed_depth ? h : h + eta;
        double un = ux * be.nx + uy * be.ny;
        for (int r = 0; r < 2; ++r) {
          Rl[r] += w * H * un * Ne[r];
          if (!jv) continue;
          for (int k = 0; k < 3; ++k) {
            Jl[r][k] += w * H * be.nx * Nv[k] * Ne[r];
            Jl[r][3 + k] += w * H * be.ny * Nv[k] * Ne[r];
          }
          if (!stepping_.fixed_depth)
            for (int c = 0; c < 2; ++c) Jl[r][6 + c] += w * un * Ne[c] * Ne[r];
        }
      }
      const auto& off = boundary_offsets_[e];
      for (int r = 0; r < 2; ++r) {
        if (constrained_[rows[r]]) continue;
        residual[rows[r]] += Rl[r];
        if (jv)
          for (int c = 0; c < 8; ++c) jv[off[r * 8 + c]] += Jl[r][c];
      }
    }
    (void)time;
  }

  void factorize() {
    if (!lu_dirty_) return;
    lu_.factorize(J_);
    if (lu_.info() != Eigen::Success)
      throw SolverError("sparse factorization failed (singular system)");
    lu_dirty_ = false;
  }

  void newton(FlowState& s, const FlowState* prev, double dt_inv, double time,
              const Eigen::VectorXd& ct, int step_index, double rel_tol = -1.0,
              int max_iter = -1) {
    if (rel_tol < 0.0) rel_tol = stepping_.newton_rel_tol;
    if (max_iter < 0) max_iter = stepping_.newton_max_iter;
    apply_dirichlet(s, time);
    const int n2 = dofs_->n_p2();
    Eigen::VectorXd r;
    assemble(s, prev, dt_inv, time, ct, r, true);
    const double r0 = r.norm();
    last_newton_iters_ = 0;
    for (int it = 0;; ++it) {
      const double rn = r.norm();
      if (!std::isfinite(rn))
        throw DivergenceError("Newton residual is not finite", rn, step_index);
      if (rn <= rel_tol * r0 || rn <= stepping_.newton_abs_tol) break;
      if (it >= max_iter)
        throw DivergenceError(step_index < 0
                                  ? "Newton did not converge"
                                  : "Newton did not converge at step " + std::to_string(step_index),
                              rn, step_index);
      factorize();
      Eigen::VectorXd delta = lu_.solve(-r);

      // backtrack on the residual norm so early iterations cannot run away
      double alpha = stepping_.newton_damping;
      FlowState trial = s;
      Eigen::VectorXd rt;
      for (int cut = 0;; ++cut) {
        trial.velocity = s.velocity + alpha * delta.head(2 * n2);
        trial.elevation = s.elevation + alpha * delta.tail(dofs_->n_vertices());
        assemble(trial, prev, dt_inv, time, ct, rt, false);
        const double rtn = rt.norm();
        if ((std::isfinite(rtn) && rtn < rn) || cut >= 12) break;
        alpha *= 0.5;
      }
      s.velocity.swap(trial.velocity);
      s.elevation.swap(trial.elevation);
      assemble(s, prev, dt_inv, time, ct, r, true);
      last_newton_iters_ = it + 1;
    }
  }

  const Mesh* mesh_;
  const DofMap* dofs_;
  PhysicalParams phys_;
  BoundaryConditionSet bcs_;
  TimeSteppingParams stepping_;

  std::vector<TriGeometry> geom_;
  std::vector<BoundaryEdgeInfo> boundary_info_;
  std::vector<DirichletEntry> dirichlet_entries_;
  std::vector<char> constrained_;

  bool pattern_built_ = false;
  SpMat J_;
  std::vector<int> elem_offsets_;
  std::vector<std::array<int, 16>> boundary_offsets_;
  std::vector<int> constrained_diag_offsets_;
  Eigen::SparseLU<SpMat> lu_;
  bool lu_dirty_ = true;
  int last_newton_iters_ = 0;
};

// Vertex-sampled flow table, one "x y u_x u_y eta" row per vertex.
inline std::string flow_field_table(const Mesh& m, const DofMap& dofs, const FlowState& s) {
  s.validate(dofs);
  std::string out = "# x y u_x u_y eta\n";
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    out += detail::format_double(m.vertices[i].x);
    out += ' ';
    out += detail::format_double(m.vertices[i].y);
    out += ' ';
    out += detail::format_double(s.velocity[dofs.ux((int)i)]);
    out += ' ';
    out += detail::format_double(s.velocity[dofs.uy((int)i)]);
    out += ' ';
    out += detail::format_double(s.elevation[i]);
    out += '\n';
  }
  return out;
}

// Legacy VTK unstructured grid with vertex velocity and elevation.
inline std::string flow_field_vtk(const Mesh& m, const DofMap& dofs, const FlowState& s) {
  s.validate(dofs);
  std::string out = "# vtk DataFile Version 3.0\nflow field\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out += "POINTS " + std::to_string(m.vertices.size()) + " double\n";
  for (const Vec2& v : m.vertices)
    out += detail::format_double(v.x) + " " + detail::format_double(v.y) + " 0\n";
  out += "CELLS " + std::to_string(m.triangles.size()) + " " +
         std::to_string(4 * m.triangles.size()) + "\n";
  for (const auto& t : m.triangles)
    out += "3 " + std::to_string(t[0]) + " " + std::to_string(t[1]) + " " +
           std::to_string(t[2]) + "\n";
  out += "CELL_TYPES " + std::to_string(m.triangles.size()) + "\n";
  for (std::size_t t = 0; t < m.triangles.size(); ++t) out += "5\n";
  out += "POINT_DATA " + std::to_string(m.vertices.size()) + "\n";
  out += "VECTORS velocity double\n";
  for (std::size_t i = 0; i < m.vertices.size(); ++i)
    out += detail::format_double(s.velocity[dofs.ux((int)i)]) + " " +
           detail::format_double(s.velocity[dofs.uy((int)i)]) + " 0\n";
  out += "SCALARS eta double 1\nLOOKUP_TABLE default\n";
  for (std::size_t i = 0; i < m.vertices.size(); ++i)
    out += detail::format_double(s.elevation[i]) + "\n";
  return out;
}

// Spec-level conveniences.
inline FlowState solve_steady(const Mesh& mesh, const DofMap& dofs, const PhysicalParams& phys,
                              const BoundaryConditionSet& bcs, const Eigen::VectorXd& ct,
                              TimeSteppingParams stepping = {}) {
  ShallowWaterSolver solver(mesh, dofs, phys, bcs, stepping);
  return solver.solve_steady(ct);
}

inline std::vector<FlowState> solve_transient(const Mesh& mesh, const DofMap& dofs,
                                              const PhysicalParams& phys,
                                              const BoundaryConditionSet& bcs,
                                              const Eigen::VectorXd& ct,
                                              const TimeSteppingParams& stepping,
                                              const FlowState& initial) {
  ShallowWaterSolver solver(mesh, dofs, phys, bcs, stepping);
  return solver.solve_transient(ct, initial);
}

}  // namespace tidefarm
