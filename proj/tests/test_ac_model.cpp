#include <drcc/ac_model.hpp>
#include <drcc/scenarios.hpp>

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

using namespace drcc;
using Catch::Approx;

namespace {

NetworkCase two_bus(double r, double x, double pd) {
  NetworkCase net;
  Bus a;
  a.id = 1;
  a.kind = BusKind::Slack;
  a.vmin_sq = 0.81;
  a.vmax_sq = 1.21;
  Bus b = a;
  b.id = 2;
  b.kind = BusKind::PQ;
  b.pd = pd;
  net.buses = {a, b};
  net.index_of = {{1, 0}, {2, 1}};
  net.slack = 0;
  Generator g;
  g.bus = 0;
  g.pmax = 2;
  g.qmin = -2;
  g.qmax = 2;
  g.vg = 1;
  net.gens.push_back(g);
  Branch br;
  br.from = 0;
  br.to = 1;
  br.r = r;
  br.x = x;
  net.branches.push_back(br);
  return net;
}

NetworkCase case14() {
  NetworkOptions opt;
  opt.cost_overrides = {{1, 0, 20, 0}, {2, 0, 20, 0.01}, {3, 0, 40, 0.01}, {4, 0, 40, 0.01}, {5, 0, 40, 0.01}};
  return to_network(load_matpower(std::string(DRCC_DATA_DIR) + "/case14.m"), opt);
}

AcState stock_state(const AcModel& m, const VreFleet& fleet) {
  auto ctl = control_layout(m);
  return pf_solve(m, spec_from_controls(m, fleet, ctl, initial_controls(m, ctl)));
}

VreFleet no_vre(const NetworkCase& net) {
  VreFleet f = build_fleet(net, {1}, Vector::Constant(1, 1e-9), 0);
  return f;
}

}  // namespace

TEST_CASE("two-bus power flow") {
  SECTION("no load gives the flat solution") {
    auto net = two_bus(0, 0.1, 0);
    auto m = build_ac_model(net);
    PfSpec spec{Vector::Zero(2), Vector::Zero(2), Vector::Ones(2)};
    auto s = pf_solve(m, spec);
    REQUIRE(s.solved);
    CHECK(s.theta.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(s.v[1] == Approx(1).epsilon(1e-12));
    CHECK(s.ell.cwiseAbs().maxCoeff() <= 1e-12);
  }
  SECTION("lossless line with a PQ load matches the closed form") {
    auto net = two_bus(0, 0.1, 0.5);
    auto m = build_ac_model(net);
    PfSpec spec{Vector::Zero(2), Vector::Zero(2), Vector::Ones(2)};
    spec.p[1] = -0.5;
    auto s = pf_solve(m, spec);
    REQUIRE(s.solved);
    // P2 = v2 sin(d) / x and Q2 = (v2^2 - v2 cos(d)) / x = 0 give v2 = cos(d), sin(2d) = -0.1.
    double d = -std::asin(0.1) / 2;
    CHECK(s.theta[1] == Approx(d).epsilon(1e-10));
    CHECK(std::sqrt(s.v[1]) == Approx(std::cos(d)).epsilon(1e-10));
    CHECK(s.ell[0] == Approx(0.5).epsilon(1e-10));
    CHECK(s.ell[1] == Approx(-0.5).epsilon(1e-10));
    CHECK(s.p[0] == Approx(0.5).epsilon(1e-10));
  }
}

TEST_CASE("case14 power flow with stock controls") {
  auto raw = load_matpower(std::string(DRCC_DATA_DIR) + "/case14.m");
  auto net = to_network(raw);
  auto m = build_ac_model(net);
  auto fleet = no_vre(net);
  auto ctl = control_layout(m);
  Vector u = initial_controls(m, ctl);
  // Generator setpoints as published, without clamping into the bus limits.
  for (std::size_t i = 0; i < ctl.vbus.size(); ++i)
    for (const auto& g : net.gens)
      if (g.bus == ctl.vbus[i]) u[ctl.gens.size() + i] = g.vg * g.vg;
  auto s = pf_solve(m, spec_from_controls(m, fleet, ctl, u));
  REQUIRE(s.solved);
  CHECK(s.mismatch <= 1e-10);
  // The published bus table holds the original solved point rounded to three
  // decimals; bus 4 differs from a full Newton solve in the third place.
  for (int b = 0; b < net.n_bus(); ++b) {
    CHECK(std::sqrt(s.v[b]) == Approx(raw.bus(b, col::kVm)).margin(2e-3));
    CHECK(s.theta[b] == Approx(raw.bus(b, col::kVa) * std::numbers::pi / 180).margin(1e-3));
  }
  CHECK(s.p[m.slack] * 100 == Approx(232.4).margin(1.0));
}

TEST_CASE("quadratic forms agree with the polar evaluation") {
  auto net = case14();
  auto m = build_ac_model(net);
  auto qf = build_quadratic_forms(m);
  auto fleet = no_vre(net);
  auto s = stock_state(m, fleet);
  CHECK(quadratic_residuals(qf, s).lpNorm<Eigen::Infinity>() <= 1e-8);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> mag(0.9, 1.1), ang(-0.5, 0.5);
  for (int trial = 0; trial < 100; ++trial) {
    Vector vm(m.n()), th(m.n());
    for (int i = 0; i < m.n(); ++i) {
      vm[i] = mag(rng);
      th[i] = ang(rng);
    }
    auto polar = evaluate_state(m, vm, th);
    CHECK(quadratic_residuals(qf, polar).lpNorm<Eigen::Infinity>() <= 1e-10);
  }

  NetworkCase open = two_bus(0, 0.1, 0);
  open.branches.clear();
  AcModel om;
  om.net = &open;
  om.y = build_admittance(open);
  AcState flat = evaluate_state(om, Vector::Ones(2), Vector::Zero(2));
  flat.p << 0.3, -0.2;
  flat.q << 0.1, 0.05;
  Vector r = quadratic_residuals(build_quadratic_forms(om), flat);
  CHECK(r[0] == 0.3);
  CHECK(r[1] == -0.2);
  CHECK(r[2] == 0.1);
  CHECK(r[3] == 0.05);
}

TEST_CASE("response to forecast errors") {
  auto net = case14();
  auto m = build_ac_model(net);
  // Two units at PV buses and one at a PQ bus so both reactive rules apply.
  auto fleet = build_fleet_mw(net, {2, 3, 9}, {20, 20, 15}, 0.1);
  auto ctl = control_layout(m);
  auto rows = build_ac_rows(m, fleet, ctl);
  auto s = stock_state(m, fleet);
  REQUIRE(s.solved);

  SECTION("zero error returns the same state") {
    auto r = respond(m, fleet, s, Vector::Zero(3));
    REQUIRE(r.solved);
    CHECK((r.w() - s.w()).lpNorm<Eigen::Infinity>() <= 1e-10);
  }

  SECTION("active perturbation follows the AGC rule") {
    Vector xi(3);
    xi << 0.05, -0.02, 0.03;
    auto r = respond(m, fleet, s, xi);
    REQUIRE(r.solved);
    double shift = 0;
    for (int b : m.non_slack) shift += r.p[b] - s.p[b];
    double omega_ns = 1 - fleet.omega_bus[m.slack];
    CHECK(shift == Approx(xi.sum() - omega_ns * xi.sum()).margin(1e-9));
    Vector q0 = Vector::Zero(m.n());
    CHECK(r.q[net.bus_index(9)] - s.q[net.bus_index(9)] == Approx(0.1 * 0.03).margin(1e-9));
    // Every bus except the slack keeps its specified injection; the slack balances losses.
    CHECK(r.mismatch <= 1e-8);
  }

  SECTION("finite differences match the analytic sensitivity") {
    auto jac = response_jacobian(m, fleet, rows, s);
    const double h = 1e-5;
    Matrix fd(m.w_size(), fleet.size());
    for (int j = 0; j < fleet.size(); ++j) {
      Vector e = Vector::Zero(fleet.size());
      e[j] = h;
      auto plus = respond(m, fleet, s, e), minus = respond(m, fleet, s, -e);
      REQUIRE(plus.solved);
      REQUIRE(minus.solved);
      fd.col(j) = (plus.w() - minus.w()) / (2 * h);
    }
    double worst = 0;
    for (Eigen::Index i = 0; i < fd.rows(); ++i)
      for (Eigen::Index j = 0; j < fd.cols(); ++j)
        if (std::abs(jac.dw(i, j)) > 1e-8) worst = std::max(worst, std::abs(fd(i, j) - jac.dw(i, j)) / std::abs(jac.dw(i, j)));
    CHECK(worst <= 1e-4);
    // Generator rows at non-slack buses carry the AGC share exactly.
    CHECK(jac.j_matrix(0, 0) == Approx(-fleet.omega_gen[ctl.gens[0]]).margin(1e-12));
  }

  SECTION("second-order remainder") {
    auto jac = response_jacobian(m, fleet, rows, s);
    Vector dir(3);
    dir << 1, -0.5, 0.7;
    dir.normalize();
    std::vector<double> ratio;
    for (double t : {1e-2, 5e-3, 2.5e-3}) {
      Vector xi = t * dir;
      auto r = respond(m, fleet, s, xi);
      REQUIRE(r.solved);
      ratio.push_back((r.w() - s.w() - jac.dw * xi).norm() / (t * t));
    }
    CHECK(ratio[1] == Approx(ratio[0]).epsilon(0.05));
    CHECK(ratio[2] == Approx(ratio[1]).epsilon(0.05));
  }

  SECTION("no branch jumps over the scenario range") {
    Vector hi = 0.3 * fleet.forecast;
    AcState prev = s;
    for (int i = 1; i <= 30; ++i) {
      Vector xi = (i / 30.0) * hi;
      auto r = respond(m, fleet, s, xi);
      REQUIRE(r.solved);
      CHECK((r.w() - prev.w()).lpNorm<Eigen::Infinity>() <= 0.05);
      prev = r;
    }
  }
}

TEST_CASE("near-DC conditions reproduce the PTDF response") {
  auto net = case14();
  for (auto& br : net.branches) {
    br.r = 0;
    br.b = 0;
    br.tap = 1;
    br.shift = 0;
  }
  for (auto& b : net.buses) {
    b.gs = b.bs = 0;
    b.pd *= 0.02;
    b.qd = 0;
  }
  for (auto& g : net.gens) g.pg *= 0.02;
  auto fleet = build_fleet_mw(net, {2, 3}, {2, 2}, 0);
  auto m = build_ac_model(net);
  auto ctl = control_layout(m);
  auto rows = build_ac_rows(m, fleet, ctl);
  Vector u = initial_controls(m, ctl);
  u.tail(ctl.vbus.size()).setOnes();
  auto s = pf_solve(m, spec_from_controls(m, fleet, ctl, u));
  REQUIRE(s.solved);
  auto jac = response_jacobian(m, fleet, rows, s);
  auto dc = build_dc_model(net, fleet);
  const int L = net.n_branch();
  double scale = dc.response.flow_sens.cwiseAbs().maxCoeff();
  for (int l = 0; l < L; ++l)
    for (int j = 0; j < fleet.size(); ++j)
      CHECK(std::abs(jac.dw(m.off_ell() + l, j) - dc.response.flow_sens(l, j)) <= 0.02 * scale);
}

TEST_CASE("fixed point without spread is the deterministic dispatch") {
  auto net = case14();
  auto m = build_ac_model(net);
  auto fleet = build_fleet_mw(net, {2, 3}, {20, 20}, 0.1);
  Matrix xi = Matrix::Zero(5, 2);
  auto fp = fixed_point_solve(m, fleet, xi, 4);
  INFO(fp.message);
  REQUIRE(fp.converged);
  CHECK(fp.iterations == 1);
  CHECK(fp.solution.cost == Approx(fp.deterministic.cost).epsilon(1e-8));
}

TEST_CASE("fixed point on the tutorial fleet") {
  auto net = case14();
  auto m = build_ac_model(net);
  auto fleet = build_fleet_mw(net, {2, 3}, {20, 20}, 0.1);
  GaussianSpec spec;
  spec.forecast = fleet.forecast;
  spec.zeta = 0.05;
  spec.rho = 0.2;
  auto train = sample(spec, 60, 11);
  const int k = 57;
  auto fp = fixed_point_solve(m, fleet, train.xi, k);
  INFO(fp.message);
  REQUIRE(fp.converged);
  CHECK(fp.iterations <= 5);
  CHECK(fp.solution.cost >= fp.deterministic.cost - 1e-6);
  auto ctl = control_layout(m);
  auto rows = build_ac_rows(m, fleet, ctl);
  // Enforced scenarios re-checked with the full nonlinear response.
  double worst = -kInf;
  for (int j : fp.solution.selection.enforced) {
    Vector x = train.xi.row(j).transpose();
    auto r = respond(m, fleet, fp.solution.state, x);
    REQUIRE(r.solved);
    Vector q = rows.value(r, fp.solution.u, x) - rows.rhs;
    worst = std::max(worst, q.maxCoeff());
  }
  CHECK(worst <= 1e-4);
}
