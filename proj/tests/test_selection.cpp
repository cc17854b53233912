#include <drcc/selection.hpp>

#include <catch_amalgamated.hpp>

#include "selection_oracle.hpp"

#include <random>

using namespace drcc;
using Catch::Approx;
using oracle::brute_force;
using oracle::random_instance;

namespace {

SelectionProblem one_dim_toy(int k) {
  // min x s.t. x >= a_j for a = (1, 5, 9), x <= 100
  SelectionProblem p;
  p.base.g = Vector::Constant(1, 1.0);
  p.base.A = Matrix::Constant(1, 1, 1.0);
  p.base.b = Vector::Constant(1, 100.0);
  auto A = std::make_shared<const Matrix>(Matrix::Constant(1, 1, -1.0));
  for (double a : {1.0, 5.0, 9.0}) p.blocks.push_back({A, Vector::Constant(1, -a)});
  p.k = k;
  return p;
}

}  // namespace

TEST_CASE("one-dimensional toy") {
  auto sol = solve_selection(one_dim_toy(2));
  REQUIRE(sol.status == SelectionStatus::Optimal);
  CHECK(sol.objective == Approx(5));
  CHECK(sol.x[0] == Approx(5));
  CHECK(sol.relaxed() == std::vector<int>{2});
  CHECK(sol.enforced == std::vector<int>{0, 1});
  CHECK(brute_force(one_dim_toy(2)) == Approx(5));

  auto greedy = greedy_incumbent(one_dim_toy(2));
  CHECK(greedy.objective == Approx(5));
  CHECK(greedy.relaxed() == std::vector<int>{2});
}

TEST_CASE("k = S equals the all-enforced QP") {
  std::mt19937_64 rng(1);
  auto p = random_instance(rng, 6, 3, 6, true);
  auto sol = solve_selection(p);
  REQUIRE(sol.status == SelectionStatus::Optimal);
  CHECK(sol.objective == Approx(brute_force(p)).epsilon(1e-9));
  auto greedy = greedy_incumbent(p);
  CHECK(greedy.objective == Approx(sol.objective).epsilon(1e-12));
  CHECK(sol.relaxed().empty());
}

TEST_CASE("random instances match subset enumeration") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    bool shared = trial % 3 != 0;
    int s = 10, k = 7;
    auto p = random_instance(rng, s, 2, k, shared);
    auto sol = solve_selection(p);
    INFO("trial " << trial << " shared " << shared);
    REQUIRE(sol.status == SelectionStatus::Optimal);
    double oracle = brute_force(p);
    CHECK(sol.objective == Approx(oracle).epsilon(1e-7));
    CHECK(static_cast<int>(sol.enforced.size()) >= k);
    for (int j : sol.enforced) CHECK(detail::block_violation(p.blocks[j], sol.x) <= 1e-7);
    auto greedy = greedy_incumbent(p);
    CHECK(greedy.objective >= sol.objective - 1e-9 * (1 + std::abs(sol.objective)));
  }
}

TEST_CASE("objective is monotone in k and never above the all-enforced value") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = random_instance(rng, 9, 3, 9, true);
    double prev = -kInf;
    double all = 0;
    std::vector<double> values;
    for (int k = 1; k <= 9; ++k) {
      p.k = k;
      auto sol = solve_selection(p);
      REQUIRE(sol.status == SelectionStatus::Optimal);
      CHECK(sol.objective >= prev - 1e-9);
      prev = sol.objective;
      values.push_back(sol.objective);
    }
    all = values.back();
    for (double v : values) CHECK(v <= all + 1e-9);
  }
}

TEST_CASE("results do not depend on the worker count") {
  std::mt19937_64 rng(5);
  auto p = random_instance(rng, 12, 3, 8, true);
  SelectionOptions one, four;
  four.workers = 4;
  auto a = solve_selection(p, one);
  auto b = solve_selection(p, four);
  CHECK(a.objective == b.objective);
  CHECK(a.enforced == b.enforced);
  CHECK((a.x.array() == b.x.array()).all());
  CHECK(a.stats.nodes == b.stats.nodes);

  SelectionOptions no_greedy;
  no_greedy.greedy_start = false;
  auto c = solve_selection(p, no_greedy);
  CHECK(c.objective == Approx(a.objective).epsilon(1e-9));
}

TEST_CASE("infeasible base constraints") {
  auto p = one_dim_toy(2);
  p.base.b[0] = -1;
  p.base.A = Matrix::Constant(2, 1, 1.0);
  p.base.A(1, 0) = -1;
  p.base.b = Vector(2);
  p.base.b << -1, -1;  // x <= -1 and x >= 1
  auto sol = solve_selection(p);
  CHECK(sol.status == SelectionStatus::Infeasible);
}

TEST_CASE("node limit reports a gap") {
  std::mt19937_64 rng(8);
  auto p = random_instance(rng, 12, 2, 8, false);
  SelectionOptions opt;
  opt.node_limit = 1;
  opt.batch = 1;
  opt.greedy_start = true;
  auto sol = solve_selection(p, opt);
  CHECK((sol.status == SelectionStatus::GapLimit || sol.status == SelectionStatus::Optimal));
  CHECK(sol.lower_bound <= sol.objective);
}

TEST_CASE("selection from chance-constraint rows") {
  // One generator with Omega = 1: block j reads p - xi_j <= pmax and p - xi_j >= pmin.
  NetworkCase net;
  Bus b;
  b.id = 1;
  b.kind = BusKind::Slack;
  b.pd = 1.0;
  net.buses.push_back(b);
  net.index_of[1] = 0;
  Generator g;
  g.bus = 0;
  g.pmax = 2;
  g.c1 = 1;
  net.gens.push_back(g);
  Vector p(1);
  p << 0.5;
  auto fleet = build_fleet(net, {0}, p, 0);
  auto model = build_dc_model(net, fleet);
  DcOptions dopt;
  dopt.include_slack_rows = true;
  auto cc = assemble_cc_system(model, dopt);
  Matrix xi = Matrix::Zero(3, 1);
  auto sel = build_selection_from_ccopf(cc, xi, dc_opf_qp(model), 3);
  CHECK(sel.s() == 3);
  auto sol = solve_selection(sel);
  REQUIRE(sol.status == SelectionStatus::Optimal);
  CHECK(sol.x[0] == Approx(0.5));
  CHECK(sol.objective == Approx(solve_deterministic_dc(model).cost));
}
