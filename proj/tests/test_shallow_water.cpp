#include <catch_amalgamated.hpp>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "tidefarm/fem.hpp"
#include "tidefarm/mesh.hpp"
#include "tidefarm/shallow_water.hpp"

using namespace tidefarm;
using Catch::Approx;

namespace {

BoundaryConditionSet channel_bcs(double u_in, double eta_out) {
  BoundaryConditionSet bcs;
  bcs.by_tag["west"] = BoundaryConditionSet::inflow({u_in, 0.0});
  bcs.by_tag["east"] = BoundaryConditionSet::elevation(eta_out);
  bcs.by_tag["south"] = BoundaryConditionSet::free_slip();
  bcs.by_tag["north"] = BoundaryConditionSet::free_slip();
  return bcs;
}

BoundaryConditionSet closed_bcs() {
  BoundaryConditionSet bcs;
  for (const char* tag : {"west", "east", "south", "north"})
    bcs.by_tag[tag] = BoundaryConditionSet::free_slip();
  return bcs;
}

double eval_p1(const Mesh& m, const TriangleLocator& loc, const Eigen::VectorXd& nodal, double x,
               double y) {
  double l[3];
  int t = loc.locate(x, y, l);
  REQUIRE(t >= 0);
  const auto& tri = m.triangles[t];
  return l[0] * nodal[tri[0]] + l[1] * nodal[tri[1]] + l[2] * nodal[tri[2]];
}

double eval_p2_ux(const Mesh& m, const DofMap& dofs, const TriangleLocator& loc,
                  const Eigen::VectorXd& vel, double x, double y) {
  double l[3];
  int t = loc.locate(x, y, l);
  REQUIRE(t >= 0);
  double N[6];
  p2_values(l, N);
  const auto& nodes = dofs.p2_nodes(t);
  double v = 0;
  for (int a = 0; a < 6; ++a) v += N[a] * vel[nodes[a]];
  return v;
}

// Steady open-channel balance along the flow direction: u u_x + g eta_x
// + c_b u^2 / H = 0 with H u = q constant gives deta/dx = -c_b q^2
// / (g H^3 - q^2). The inflow speed is prescribed, so q = u_in (h + eta(0))
// depends on the unknown inlet elevation; shoot on eta(0) until eta(L) = 0.
struct ChannelOde {
  double L, h, u_in, cb, g;

  double eta_at_exit(double eta0, std::vector<double>* profile = nullptr, int n = 4096) const {
    const double q = u_in * (h + eta0);
    const double dx = L / n;
    auto slope = [&](double e) {
      const double H = h + e;
      return -cb * q * q / (g * H * H * H - q * q);
    };
    double eta = eta0;
    if (profile) profile->assign(1, eta);
    for (int i = 0; i < n; ++i) {
      const double k1 = slope(eta);
      const double k2 = slope(eta + 0.5 * dx * k1);
      const double k3 = slope(eta + 0.5 * dx * k2);
      const double k4 = slope(eta + dx * k3);
      eta += dx / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      if (profile) profile->push_back(eta);
    }
    return eta;
  }

  double solve_eta0() const {
    double lo = 0.0, hi = 1.0;
    REQUIRE(eta_at_exit(lo) < 0.0);
    REQUIRE(eta_at_exit(hi) > 0.0);
    for (int i = 0; i < 80; ++i) {
      double mid = 0.5 * (lo + hi);
      (eta_at_exit(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }
};

}  // namespace

TEST_CASE("closed basin at rest stays at rest", "[swe]") {
  Mesh m = generate_rectangle(500, 300, 100);
  DofMap dofs(m);
  auto phys = PhysicalParams::constant_depth(m, 20.0);
  ShallowWaterSolver solver(m, dofs, phys, closed_bcs(), {});
  Eigen::VectorXd ct = Eigen::VectorXd::Zero(m.vertices.size());

  FlowState s = solver.solve_steady(ct);
  CHECK(s.velocity.norm() == 0.0);
  CHECK(s.elevation.norm() == 0.0);
  CHECK(solver.last_newton_iterations() == 0);

  TimeSteppingParams ts;
  ts.dt = 10.0;
  ts.t_end = 30.0;
  ShallowWaterSolver trans(m, dofs, phys, closed_bcs(), ts);
  auto traj = trans.solve_transient(ct, FlowState::zero(dofs));
  REQUIRE(traj.size() == 4);
  for (const auto& st : traj) {
    CHECK(st.velocity.norm() == 0.0);
    CHECK(st.elevation.norm() == 0.0);
  }
  CHECK(traj.back().time == Approx(30.0));
}

TEST_CASE("residual and jacobian stay finite at zero velocity", "[swe]") {
  Mesh m = generate_rectangle(200, 100, 50);
  DofMap dofs(m);
  auto phys = PhysicalParams::constant_depth(m, 5.0);
  ShallowWaterSolver solver(m, dofs, phys, closed_bcs(), {});

  FlowState s = FlowState::zero(dofs);
  for (int i = 0; i < (int)m.vertices.size(); ++i)
    s.elevation[i] = 0.05 * std::sin(m.vertices[i].x / 40.0);
  Eigen::VectorXd ct = Eigen::VectorXd::Constant(m.vertices.size(), 0.06);

  Eigen::VectorXd r;
  solver.assemble(s, nullptr, 0.0, 0.0, ct, r, true);
  CHECK(r.allFinite());
  CHECK(Eigen::Map<const Eigen::VectorXd>(solver.jacobian_matrix().valuePtr(),
                                          solver.jacobian_matrix().nonZeros())
            .allFinite());
}

TEST_CASE("assembled jacobian matches finite differences", "[swe]") {
  Mesh m = generate_rectangle(100, 50, 25);
  DofMap dofs(m);
  auto phys = PhysicalParams::constant_depth(m, 8.0);
  TimeSteppingParams ts;
  ts.velocity_smoothing = 1e-3;  // keep |u| smooth near the random zero set
  ShallowWaterSolver solver(m, dofs, phys, channel_bcs(1.2, 0.05), ts);

  const int n2 = dofs.n_p2();
  FlowState s = FlowState::zero(dofs);
  FlowState prev = FlowState::zero(dofs);
  for (int i = 0; i < n2; ++i) {
    const Vec2 p = dofs.p2_point(i);
    s.velocity[i] = 1.0 + 0.3 * std::sin(p.x / 20.0) * std::cos(p.y / 15.0);
    s.velocity[n2 + i] = 0.2 * std::sin(p.x / 30.0 + 0.5);
    prev.velocity[i] = 0.9;
  }
  for (int i = 0; i < (int)m.vertices.size(); ++i)
    s.elevation[i] = 0.1 * std::cos(m.vertices[i].x / 25.0);
  Eigen::VectorXd ct(m.vertices.size());
  for (int i = 0; i < (int)m.vertices.size(); ++i)
    ct[i] = 0.02 * (1.0 + m.vertices[i].x / 100.0);

  const double dt_inv = 1.0 / 30.0;
  Eigen::VectorXd r0;
  solver.assemble(s, &prev, dt_inv, 0.0, ct, r0, true);
  SpMat J = solver.jacobian_matrix();

  std::mt19937 rng(7);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const double h = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd v(dofs.n_dof());
    for (int i = 0; i < dofs.n_dof(); ++i) v[i] = unif(rng);

    auto shift = [&](double a) {
      FlowState sp = s;
      sp.velocity += a * v.head(2 * n2);
      sp.elevation += a * v.tail((int)m.vertices.size());
      Eigen::VectorXd r;
      solver.assemble(sp, &prev, dt_inv, 0.0, ct, r, false);
      return r;
    };
    Eigen::VectorXd fd = (shift(h) - shift(-h)) / (2 * h);
    Eigen::VectorXd jv = J * v;
    REQUIRE((jv - fd).norm() <= 1e-6 * (1.0 + jv.norm()));
  }
}

TEST_CASE("steady channel flow matches the 1d momentum balance", "[swe]") {
  const double L = 4000, W = 400, h = 50, u_in = 2.0;
  Mesh m = generate_rectangle(L, W, 100);
  DofMap dofs(m);
  auto phys = PhysicalParams::constant_depth(m, h);
  ShallowWaterSolver solver(m, dofs, phys, channel_bcs(u_in, 0.0), {});
  Eigen::VectorXd ct = Eigen::VectorXd::Zero(m.vertices.size());
  FlowState s = solver.solve_steady(ct);

  ChannelOde ode{L, h, u_in, phys.background_friction, phys.gravity};
  const double eta0 = ode.solve_eta0();
  std::vector<double> profile;
  const int n = 4096;
  ode.eta_at_exit(eta0, &profile, n);
  const double q = u_in * (h + eta0);
  REQUIRE(eta0 > 0.05);  // the oracle predicts a visible backwater rise

  TriangleLocator loc(m);
  double max_err = 0.0;
  for (double x : {0.0, 500.0, 1000.0, 2000.0, 3000.0, 3500.0, 4000.0}) {
    const double eta_ode = profile[(std::size_t)std::llround(x / L * n)];
    const double eta_fem = eval_p1(m, loc, s.elevation, std::min(x, L - 1e-9), W / 2);
    max_err = std::max(max_err, std::abs(eta_fem - eta_ode));
    const double u_ode = q / (h + eta_ode);
    const double u_fem =
        eval_p2_ux(m, dofs, loc, s.velocity, std::min(x, L - 1e-9), W / 2);
    CHECK(std::abs(u_fem - u_ode) <= 0.05 * u_in);
  }
  CHECK(max_err <= 0.05 * eta0);
}

TEST_CASE("turbine friction raises the head of prescribed inflow", "[swe]") {
  Mesh m = generate_rectangle(1000, 400, 100);
  DofMap dofs(m);
  auto phys = PhysicalParams::constant_depth(m, 40.0);
  ShallowWaterSolver solver(m, dofs, phys, channel_bcs(2.0, 0.0), {});

  double prev_head = -1.0;
  for (double level : {0.0, 0.03, 0.06}) {
    Eigen::VectorXd ct = Eigen::VectorXd::Constant(m.vertices.size(), level);
    FlowState s = solver.solve_steady(ct);
    double head = 0.0;
    int n_west = 0;
    for (int i = 0; i < (int)m.vertices.size(); ++i)
      if (m.vertices[i].x == 0.0) {
        head += s.elevation[i];
        ++n_west;
      }
    head /= n_west;
    CHECK(head > prev_head);
    prev_head = head;
  }
}

TEST_CASE("turbine friction throttles elevation-driven flow", "[swe]") {
  Mesh m = generate_rectangle(1000, 400, 100);
  DofMap dofs(m);
  auto phys = PhysicalParams::constant_depth(m, 40.0);
  BoundaryConditionSet bcs;
  bcs.by_tag["west"] = BoundaryConditionSet::elevation(0.1);
  bcs.by_tag["east"] = BoundaryConditionSet::elevation(0.0);
  bcs.by_tag["south"] = BoundaryConditionSet::free_slip();
  bcs.by_tag["north"] = BoundaryConditionSet::free_slip();
  ShallowWaterSolver solver(m, dofs, phys, bcs, {});
  TriangleLocator loc(m);

  double prev_u = 1e300;
  for (double level : {0.0, 0.03, 0.06}) {
    Eigen::VectorXd ct = Eigen::VectorXd::Constant(m.vertices.size(), level);
    FlowState s = solver.solve_steady(ct);
    double u_mid = eval_p2_ux(m, dofs, loc, s.velocity, 500.0, 200.0);
    CHECK(u_mid > 0.0);
    CHECK(u_mid < prev_u);
    prev_u = u_mid;
  }
}

TEST_CASE("standing wave period in a closed basin matches theory", "[swe]") {
  const double L = 1000, W = 200, h = 50, amp = 0.01;
  Mesh m = generate_rectangle(L, W, 50);
  DofMap dofs(m);
  auto phys = PhysicalParams::constant_depth(m, h);
  phys.background_friction = 0.0;

  TimeSteppingParams ts;
  ts.dt = 1.5;
  ts.t_end = 201.0;
  ShallowWaterSolver solver(m, dofs, phys, closed_bcs(), ts);

  FlowState init = FlowState::zero(dofs);
  for (int i = 0; i < (int)m.vertices.size(); ++i)
    init.elevation[i] = amp * std::cos(M_PI * m.vertices[i].x / L);
  Eigen::VectorXd ct = Eigen::VectorXd::Zero(m.vertices.size());
  auto traj = solver.solve_transient(ct, init);

  int probe = -1;
  for (int i = 0; i < (int)m.vertices.size(); ++i)
    if (m.vertices[i].x == 0.0 && m.vertices[i].y == W / 2) probe = i;
  REQUIRE(probe >= 0);

  std::vector<double> crossings;
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    double a = traj[k].elevation[probe], b = traj[k + 1].elevation[probe];
    if ((a <= 0) != (b <= 0)) crossings.push_back(traj[k].time + ts.dt * a / (a - b));
  }
  REQUIRE(crossings.size() >= 3);
  double mean_gap = (crossings.back() - crossings.front()) / (crossings.size() - 1);
  const double expected = 2.0 * L / std::sqrt(phys.gravity * h);
  CHECK(2.0 * mean_gap == Approx(expected).epsilon(0.05));
}

TEST_CASE("steady solution is a fixed point of time stepping", "[swe]") {
  Mesh m = generate_rectangle(1000, 400, 100);
  DofMap dofs(m);
  auto phys = PhysicalParams::constant_depth(m, 30.0);
  Eigen::VectorXd ct = Eigen::VectorXd::Constant(m.vertices.size(), 0.02);

  ShallowWaterSolver steady(m, dofs, phys, channel_bcs(1.5, 0.0), {});
  FlowState s = steady.solve_steady(ct);

  TimeSteppingParams ts;
  ts.dt = 25.0;
  ts.t_end = 75.0;
  ts.newton_abs_tol = 1e-8;
  ShallowWaterSolver trans(m, dofs, phys, channel_bcs(1.5, 0.0), ts);
  auto traj = trans.solve_transient(ct, s);
  for (const auto& st : traj) {
    CHECK((st.velocity - s.velocity).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK((st.elevation - s.elevation).lpNorm<Eigen::Infinity>() <= 1e-6);
  }
}

TEST_CASE("net volume flux vanishes for the converged steady state", "[swe]") {
  Mesh m = generate_rectangle(4000, 400, 100);
  DofMap dofs(m);
  auto phys = PhysicalParams::constant_depth(m, 50.0);
  ShallowWaterSolver solver(m, dofs, phys, channel_bcs(2.0, 0.0), {});
  Eigen::VectorXd ct = Eigen::VectorXd::Zero(m.vertices.size());
  for (int i = 0; i < (int)m.vertices.size(); ++i) {
    const Vec2 p = m.vertices[i];
    if (std::abs(p.x - 2000) < 300 && std::abs(p.y - 200) < 150) ct[i] = 0.05;
  }
  FlowState s = solver.solve_steady(ct);

  const double inlet = std::abs(solver.direct_boundary_flux(s, BcKind::velocity_dirichlet));
  CHECK(inlet == Approx(2.0 * 400 * 50).epsilon(0.02));  // q = u H W to leading order
  CHECK(std::abs(solver.consistent_net_flux(s)) <= 1e-6 * inlet);
}

TEST_CASE("solution inherits the mirror symmetry of the setup", "[swe]") {
  const double W = 1000;
  Rect box{800, 400, 1200, 600};
  Mesh m = generate_rectangle(2000, W, 100, &box, 50);
  DofMap dofs(m);
  auto phys = PhysicalParams::constant_depth(m, 40.0);
  ShallowWaterSolver solver(m, dofs, phys, channel_bcs(2.0, 0.0), {});

  Eigen::VectorXd ct = Eigen::VectorXd::Zero(m.vertices.size());
  for (int i = 0; i < (int)m.vertices.size(); ++i) {
    const Vec2 p = m.vertices[i];
    if (std::abs(p.x - 1000) <= 150 && std::abs(p.y - 500) <= 80) ct[i] = 0.06;
  }
  FlowState s = solver.solve_steady(ct);

  std::map<std::pair<double, double>, int> by_coord;
  for (int i = 0; i < (int)m.vertices.size(); ++i)
    by_coord[{m.vertices[i].x, m.vertices[i].y}] = i;
  std::vector<double> ys;
  for (int i = 0; i < (int)m.vertices.size(); ++i) ys.push_back(m.vertices[i].y);
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());

  double max_dev = 0.0;
  for (int i = 0; i < (int)m.vertices.size(); ++i) {
    const Vec2 p = m.vertices[i];
    auto it = std::lower_bound(ys.begin(), ys.end(), p.y);
    REQUIRE((it != ys.end() && *it == p.y));
    double y_mirror = ys[ys.size() - 1 - (it - ys.begin())];
    auto jt = by_coord.find({p.x, y_mirror});
    REQUIRE(jt != by_coord.end());
    int j = jt->second;
    max_dev = std::max(max_dev, std::abs(s.elevation[i] - s.elevation[j]));
    max_dev = std::max(max_dev, std::abs(s.velocity[dofs.ux(i)] - s.velocity[dofs.ux(j)]));
    max_dev = std::max(max_dev, std::abs(s.velocity[dofs.uy(i)] + s.velocity[dofs.uy(j)]));
  }
  CHECK(max_dev <= 1e-8);
}

TEST_CASE("solver rejects inconsistent inputs", "[swe]") {
  Mesh m = generate_rectangle(200, 100, 50);
  DofMap dofs(m);
  auto phys = PhysicalParams::constant_depth(m, 10.0);

  SECTION("missing boundary prescription") {
    BoundaryConditionSet bcs = channel_bcs(1.0, 0.0);
    bcs.by_tag.erase("north");
    REQUIRE_THROWS_WITH((ShallowWaterSolver{m, dofs, phys, bcs, {}}),
                        Catch::Matchers::ContainsSubstring("north"));
  }
  SECTION("negative depth") {
    auto bad = phys;
    bad.depth[3] = -1.0;
    REQUIRE_THROWS_WITH((ShallowWaterSolver{m, dofs, bad, closed_bcs(), {}}),
                        Catch::Matchers::ContainsSubstring("depth"));
  }
  SECTION("dt not dividing the interval") {
    TimeSteppingParams ts;
    ts.dt = 7.0;
    ts.t_end = 30.0;
    ShallowWaterSolver solver(m, dofs, phys, closed_bcs(), ts);
    Eigen::VectorXd ct = Eigen::VectorXd::Zero(m.vertices.size());
    REQUIRE_THROWS_WITH(solver.solve_transient(ct, FlowState::zero(dofs)),
                        Catch::Matchers::ContainsSubstring("divide"));
  }
  SECTION("trajectory memory cap") {
    TimeSteppingParams ts;
    ts.dt = 0.001;
    ts.t_end = 100.0;
    ts.max_trajectory_mb = 1.0;
    ShallowWaterSolver solver(m, dofs, phys, closed_bcs(), ts);
    Eigen::VectorXd ct = Eigen::VectorXd::Zero(m.vertices.size());
    REQUIRE_THROWS_WITH(solver.solve_transient(ct, FlowState::zero(dofs)),
                        Catch::Matchers::ContainsSubstring("max_trajectory_mb"));
  }
}
