#pragma once

// Out-of-sample violation rates, deterministic and robust baselines, and the
// k sweep with its CSV and SVG exports.

#include <drcc/ac_model.hpp>
#include <drcc/ambiguity.hpp>
#include <drcc/dc_model.hpp>
#include <drcc/scenarios.hpp>
#include <drcc/selection.hpp>
#include <drcc/svg.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace drcc {

struct ViolationReport {
  double joint_rate = 0;
  Vector per_row;       // fraction of scenarios violating each row
  int scenarios = 0;
  int failures = 0;     // AC scenarios whose power flow did not converge
};

struct EvalReport {
  std::string status;
  double joint_violation_rate = 0;
  Vector per_row_rates;
  double cost = kInf;
  double cost_vs_ro = kInf;
  SelectionStats solve_stats;
  std::uint64_t train_seed = 0, test_seed = 0;
  std::string config_digest;
};

namespace detail {

inline ViolationReport tally(const std::vector<std::vector<std::uint8_t>>& hits, const std::vector<std::uint8_t>& failed,
                             int rows) {
  ViolationReport r;
  r.scenarios = static_cast<int>(hits.size());
  r.per_row = Vector::Zero(rows);
  int joint = 0;
  for (std::size_t j = 0; j < hits.size(); ++j) {
    bool any = failed[j] != 0;
    for (int i = 0; i < rows; ++i)
      if (hits[j][i] || failed[j]) {
        r.per_row[i] += 1;
        any = true;
      }
    joint += any;
    r.failures += failed[j];
  }
  if (r.scenarios > 0) {
    r.joint_rate = static_cast<double>(joint) / r.scenarios;
    r.per_row /= r.scenarios;
  }
  return r;
}

}  // namespace detail

/// DC path: rows of the chance-constraint system evaluated exactly. A scenario
/// violates a row when it exceeds the bound by more than tol.
inline ViolationReport violation_frequency(const CcSystem& cc, const Vector& x, const Matrix& xi, int workers = 1,
                                           double tol = kFeasibilityTol) {
  const int s = static_cast<int>(xi.rows()), rows = cc.rows();
  const Vector base = cc.base(x);
  std::vector<std::vector<std::uint8_t>> hits(s, std::vector<std::uint8_t>(rows, 0));
  std::vector<std::uint8_t> failed(s, 0);
  detail::parallel_for(s, workers, [&](int j) {
    Vector q = base + cc.sens * xi.row(j).transpose();
    for (int i = 0; i < rows; ++i) hits[j][i] = std::isfinite(cc.rhs[i]) && q[i] > cc.rhs[i] + tol;
  });
  return detail::tally(hits, failed, rows);
}

/// AC path: full Newton response per scenario. Non-convergence counts as a
/// violation of every row.
inline ViolationReport ac_violation_frequency(const AcModel& m, const VreFleet& fleet, const AcCcRows& rows,
                                              const AcState& state, const Vector& u, const Matrix& xi,
                                              int workers = 1, double tol = kFeasibilityTol) {
  const int s = static_cast<int>(xi.rows()), nr = rows.rows();
  std::vector<std::vector<std::uint8_t>> hits(s, std::vector<std::uint8_t>(nr, 0));
  std::vector<std::uint8_t> failed(s, 0);
  detail::parallel_for(s, workers, [&](int j) {
    Vector e = xi.row(j).transpose();
    AcState r = respond(m, fleet, state, e);
    if (!r.solved) {
      failed[j] = 1;
      return;
    }
    Vector q = rows.value(r, u, e);
    for (int i = 0; i < nr; ++i) hits[j][i] = std::isfinite(rows.rhs[i]) && q[i] > rows.rhs[i] + tol;
  });
  return detail::tally(hits, failed, nr);
}

// ---------------------------------------------------------------------------
// DC studies

/// Everything needed to pose DC dispatch problems on one network and fleet.
struct DcStudy {
  DcModel model;
  CcSystem cc;
  QpProblem base;
};

inline DcStudy make_dc_study(const NetworkCase& net, const VreFleet& fleet, const DcOptions& opt = {}) {
  DcStudy st;
  st.model = build_dc_model(net, fleet);
  st.cc = assemble_cc_system(st.model, opt);
  st.base = dc_opf_qp(st.model);
  return st;
}

/// Deterministic dispatch reported in the same shape as the selection results.
inline SelectionSolution solve_dc_deterministic(const DcStudy& st) {
  SelectionSolution sol;
  auto d = solve_deterministic_dc(st.model);
  sol.message = d.message;
  if (d.status == QpStatus::Infeasible) {
    sol.status = SelectionStatus::Infeasible;
    return sol;
  }
  if (d.status != QpStatus::Optimal) return sol;
  sol.status = SelectionStatus::Optimal;
  sol.x = d.p;
  sol.objective = sol.lower_bound = d.cost;
  return sol;
}

/// Enforces the best k of the scenarios in xi.
inline SelectionSolution solve_dc_kl(const DcStudy& st, const Matrix& xi, int k, const SelectionOptions& opt = {}) {
  if (k < 1 || k > xi.rows()) throw Error(fmt::format("k = {} outside [1, {}]", k, xi.rows()));
  auto p = build_selection_from_ccopf(st.cc, xi, st.base, k);
  return solve_selection(p, opt);
}

/// Robust baseline: every scenario enforced. When infeasible, the message lists
/// the scenarios that are infeasible on their own.
inline SelectionSolution ro_baseline(const DcStudy& st, const Matrix& xi, const SelectionOptions& opt = {}) {
  auto sol = solve_dc_kl(st, xi, static_cast<int>(xi.rows()), opt);
  if (sol.status != SelectionStatus::Infeasible) return sol;
  std::vector<int> bad;
  for (Eigen::Index j = 0; j < xi.rows(); ++j) {
    auto one = build_selection_from_ccopf(st.cc, xi.row(j), st.base, 1);
    if (solve_selection(one).status == SelectionStatus::Infeasible) bad.push_back(static_cast<int>(j));
  }
  std::string list;
  for (std::size_t i = 0; i < bad.size() && i < 20; ++i) list += fmt::format("{}{}", i ? "," : "", bad[i] + 1);
  sol.message = bad.empty() ? "scenarios are feasible one at a time but not jointly"
                            : fmt::format("{} scenarios infeasible on their own: {}{}", bad.size(), list,
                                          bad.size() > 20 ? ",..." : "");
  return sol;
}

// ---------------------------------------------------------------------------
// k sweep

struct SweepRow {
  int k = 0;
  double epsilon_star = 0, bound = 0;
  double cost = kInf, cost_vs_ro = kInf;
  double joint_violation = 1;
  double time_s = 0;
  std::string status;
  std::vector<int> relaxed;
};

struct SweepPoint {
  std::string status;
  double cost = kInf;
  double joint_violation = 1;
  std::vector<int> relaxed;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double ro_cost = kInf, ro_violation = 1;
  double det_cost = kInf, det_violation = 1;
};

/// Runs `solve` for each k and orders rows by ascending epsilon*. A failing k
/// is recorded with its status and the sweep continues.
inline SweepResult sweep_k(const std::vector<int>& ks, int s, const std::function<SweepPoint(int)>& solve,
                           double ro_cost, bool report_timing = true) {
  if (ks.empty()) throw Error("empty k list");
  SweepResult res;
  res.ro_cost = ro_cost;
  for (int k : ks) {
    if (k < 1 || k > s) throw Error(fmt::format("k = {} outside [1, {}]", k, s));
    SweepRow row;
    row.k = k;
    auto eps = optimal_epsilon(k, s);
    row.epsilon_star = eps.epsilon;
    row.bound = eps.bound;
    auto t0 = std::chrono::steady_clock::now();
    SweepPoint pt;
    try {
      pt = solve(k);
    } catch (const std::exception& e) {
      pt.status = std::string("ERROR: ") + e.what();
    }
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    row.time_s = report_timing ? dt : 0.0;
    row.status = pt.status;
    row.cost = pt.cost;
    row.cost_vs_ro = pt.cost / ro_cost;
    row.joint_violation = pt.joint_violation;
    row.relaxed = pt.relaxed;
    res.rows.push_back(row);
  }
  std::stable_sort(res.rows.begin(), res.rows.end(),
                   [](const SweepRow& a, const SweepRow& b) { return a.epsilon_star < b.epsilon_star; });
  return res;
}

inline std::string sweep_csv(const SweepResult& r, const std::string& digest) {
  std::string out = fmt::format("# config={} ro_cost={:.17g} det_cost={:.17g} det_violation={:.17g}\n", digest,
                                r.ro_cost, r.det_cost, r.det_violation);
  out += "k,epsilon_star,bound,cost,cost_vs_ro,joint_violation,time_s,status\n";
  for (const auto& row : r.rows)
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.6f},{}\n", row.k, row.epsilon_star, row.bound,
                       row.cost, row.cost_vs_ro, row.joint_violation, row.time_s, row.status);
  return out;
}

/// Satisfaction, normalized cost and solve time against epsilon*.
inline std::string sweep_svg(const SweepResult& r, const std::string& title, const std::string& digest) {
  svg::Series sat{"KL satisfaction"}, target{"1 - epsilon*"}, cost{"KL cost / RO"}, det{"deterministic / RO"},
      time{"KL solve time"};
  target.color = "#888888";
  target.dashed = true;
  target.markers = false;
  det.color = "#d62728";
  det.dashed = true;
  det.markers = false;
  for (const auto& row : r.rows) {
    sat.x.push_back(row.epsilon_star);
    sat.y.push_back(1 - row.joint_violation);
    target.x.push_back(row.epsilon_star);
    target.y.push_back(1 - row.epsilon_star);
    cost.x.push_back(row.epsilon_star);
    cost.y.push_back(row.cost_vs_ro);
    det.x.push_back(row.epsilon_star);
    det.y.push_back(r.det_cost / r.ro_cost);
    time.x.push_back(row.epsilon_star);
    time.y.push_back(row.time_s);
  }
  std::vector<svg::Panel> panels{{"satisfaction rate", {sat, target}},
                                 {"normalized cost", {cost, det}},
                                 {"time (s)", {time}}};
  return fmt::format("<!-- config={} -->\n", digest) + svg::render(panels, "epsilon*", title);
}

}  // namespace drcc
