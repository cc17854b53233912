// Acceptance run: one pass/fail line per criterion. Criteria 1-5 are run twice
// (one and four workers) and their CSV outputs compared byte for byte.

#include <drcc/ac_model.hpp>
#include <drcc/ambiguity.hpp>
#include <drcc/config.hpp>
#include <drcc/evaluation.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "selection_oracle.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace drcc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

RunConfig config(const char* name, int workers) {
  RunConfig c = load_config(std::string(DRCC_CONFIG_DIR) + "/" + name);
  c.solver.workers = workers;
  c.report_timing = false;
  return c;
}

double rel_excess(double a, double b) { return (a - b) / std::max(1.0, std::abs(b)); }

// ---------------------------------------------------------------------------

Outcome ambiguity_numbers(const fs::path& dir) {
  auto t0 = Clock::now();
  double e97 = optimal_epsilon(97, 100).epsilon, e98 = optimal_epsilon(98, 100).epsilon;
  int k = min_k_for_target(0.10, 100);
  std::string csv = "k,epsilon_star,bound,radius\n";
  for (int kk = 90; kk <= 100; ++kk) {
    auto e = optimal_epsilon(kk, 100);
    csv += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", kk, e.epsilon, e.bound, params_for_k(kk, 100).radius);
  }
  write_file(dir / "ambiguity.csv", csv);
  double dt = seconds_since(t0);
  bool ok = std::abs(e97 - 0.109) <= 0.001 && std::abs(e98 - 0.0924) <= 0.0005 && k == 98 && dt < 1.0;
  return {ok, fmt::format("eps*(97,100) = {:.5f}, eps*(98,100) = {:.5f}, min k for 0.10 = {}, {:.3f} s", e97, e98, k, dt)};
}

Outcome selection_exactness(const fs::path& dir, int workers) {
  auto t0 = Clock::now();
  std::mt19937_64 rng(20240501);
  std::string csv = "instance,s,n,k,shared,objective,oracle\n";
  double worst = 0;
  int bad = 0;
  for (int i = 0; i < 50; ++i) {
    int s = 6 + static_cast<int>(rng() % 7);
    int n = 2 + static_cast<int>(rng() % 3);
    int k = s - static_cast<int>(rng() % 5);
    bool shared = i % 2 == 0;
    auto p = oracle::random_instance(rng, s, n, k, shared);
    SelectionOptions opt;
    opt.workers = workers;
    auto sol = solve_selection(p, opt);
    double ref = oracle::brute_force(p);
    double err = std::abs(sol.objective - ref) / std::max(1.0, std::abs(ref));
    if (sol.status != SelectionStatus::Optimal || !(err <= 1e-7)) ++bad;
    worst = std::max(worst, err);
    csv += fmt::format("{},{},{},{},{},{:.17g},{:.17g}\n", i + 1, s, n, k, int(shared), sol.objective, ref);
  }
  write_file(dir / "selection_oracle.csv", csv);
  double dt = seconds_since(t0);
  return {bad == 0 && dt < 120,
          fmt::format("50 instances, {} mismatches, worst relative error {:.2e}, {:.2f} s", bad, worst, dt)};
}

struct DcSweep {
  SweepResult res;
  std::vector<double> times;
  std::string failure;
};

DcSweep dc_sweep(const RunConfig& c) {
  DcSweep out;
  auto net = load_network(c);
  auto fleet = fleet_from_config(c, net);
  auto train = training_set(c, net, fleet);
  auto test = test_set(c, net, fleet);
  auto study = make_dc_study(net, fleet);
  auto det = solve_dc_deterministic(study);
  auto ro = ro_baseline(study, ro_set(c, net, fleet, train).xi, c.solver);
  if (det.status != SelectionStatus::Optimal || ro.status != SelectionStatus::Optimal) {
    out.failure = fmt::format("baselines: deterministic {}, robust {} {}", to_string(det.status), to_string(ro.status),
                              ro.message);
    return out;
  }
  auto solve = [&](int k) {
    auto t0 = Clock::now();
    auto sol = solve_dc_kl(study, train.xi, k, c.solver);
    out.times.push_back(seconds_since(t0));
    SweepPoint pt;
    pt.status = to_string(sol.status);
    pt.cost = sol.objective;
    if (sol.x.size()) pt.joint_violation = violation_frequency(study.cc, sol.x, test.xi, c.solver.workers).joint_rate;
    pt.relaxed = sol.relaxed();
    return pt;
  };
  out.res = sweep_k(c.sweep_k, train.size(), solve, ro.objective, false);
  out.res.det_cost = det.objective;
  out.res.det_violation = violation_frequency(study.cc, det.x, test.xi, c.solver.workers).joint_rate;
  out.res.ro_violation = violation_frequency(study.cc, ro.x, test.xi, c.solver.workers).joint_rate;
  return out;
}

Outcome cost_ordering(const DcSweep& sw, double dt) {
  if (!sw.failure.empty()) return {false, sw.failure};
  const auto& r = sw.res;
  bool ordered = true, strict = false;
  int s_max = 0;
  for (const auto& row : r.rows) s_max = std::max(s_max, row.k);
  for (const auto& row : r.rows) {
    ordered = ordered && row.status == "OPTIMAL" && rel_excess(r.det_cost, row.cost) <= 1e-9 &&
              rel_excess(row.cost, r.ro_cost) <= 1e-9;
    if (row.k < s_max && rel_excess(r.ro_cost, row.cost) > 1e-9) strict = true;
  }
  return {ordered && strict && dt < 600,
          fmt::format("deterministic {:.4f} <= KL {:.4f}..{:.4f} <= RO {:.4f} over {} k values, {:.2f} s", r.det_cost,
                      r.rows.back().cost, r.rows.front().cost, r.ro_cost, r.rows.size(), dt)};
}

Outcome out_of_sample(const DcSweep& sw, int n_test) {
  if (!sw.failure.empty()) return {false, sw.failure};
  bool ok = true;
  double tightest = kInf;
  int tight_k = 0;
  for (const auto& row : sw.res.rows) {
    double e = row.epsilon_star;
    double limit = e + 3 * std::sqrt(e * (1 - e) / n_test);
    ok = ok && row.joint_violation <= limit;
    if (limit - row.joint_violation < tightest) {
      tightest = limit - row.joint_violation;
      tight_k = row.k;
    }
  }
  return {ok, fmt::format("smallest slack to the bound {:.4f} at k = {} ({} test samples)", tightest, tight_k, n_test)};
}

Outcome tutorial_checks(const fs::path& dir, int workers) {
  RunConfig c = config("tutorial14.json", workers);
  c.k = 98;
  c.epsilon_target.reset();
  auto net = load_network(c);
  auto fleet = fleet_from_config(c, net);
  auto train = training_set(c, net, fleet);
  auto test = test_set(c, net, fleet);
  auto study = make_dc_study(net, fleet);
  auto det = solve_dc_deterministic(study);
  auto kl = solve_dc_kl(study, train.xi, 98, c.solver);
  if (det.status != SelectionStatus::Optimal || kl.status != SelectionStatus::Optimal)
    return {false, fmt::format("solves: deterministic {}, KL {}", to_string(det.status), to_string(kl.status))};

  const double net_load = net.total_load() - fleet.forecast.sum();
  bool all_on_one = std::abs(det.x[0] - net_load) <= 1e-6;
  for (int g = 1; g < net.n_gen(); ++g) all_on_one = all_on_one && std::abs(det.x[g]) <= 1e-6;

  bool small_amounts = true;
  for (int g = 1; g < net.n_gen(); ++g) small_amounts = small_amounts && kl.x[g] > 1e-6 && kl.x[g] < 0.1 * kl.x[0];

  Vector total = train.xi.rowwise().sum();
  double p90 = quantile(std::vector<double>(total.data(), total.data() + total.size()), 0.9);
  auto relaxed = kl.relaxed();
  bool above = relaxed.size() == 2;
  for (int j : relaxed) above = above && total[j] > p90;

  auto det_rate = violation_frequency(study.cc, det.x, test.xi, workers).joint_rate;
  bool half = std::abs(det_rate - 0.5) <= 0.05;

  std::string csv = "quantity,value\n";
  for (int g = 0; g < net.n_gen(); ++g) csv += fmt::format("det_pg_{},{:.17g}\n", g + 1, det.x[g] * net.base_mva);
  for (int g = 0; g < net.n_gen(); ++g) csv += fmt::format("kl_pg_{},{:.17g}\n", g + 1, kl.x[g] * net.base_mva);
  for (int j : relaxed) csv += fmt::format("relaxed_scenario,{}\nrelaxed_total_xi,{:.17g}\n", j + 1, total[j]);
  csv += fmt::format("train_total_xi_p90,{:.17g}\ndeterministic_violation_rate,{:.17g}\n", p90, det_rate);
  write_file(dir / "tutorial.csv", csv);

  std::string rel;
  for (int j : relaxed) rel += fmt::format(" {} ({:+.3f})", j + 1, total[j]);
  return {all_on_one && small_amounts && above && half,
          fmt::format("gen 1 carries {:.1f} MW deterministic; relaxed scenarios{} vs p90 {:+.3f}; "
                      "deterministic violation rate {:.3f}",
                      det.x[0] * net.base_mva, rel, p90, det_rate)};
}

Outcome ac_machinery(const fs::path& dir, int workers) {
  auto t0 = Clock::now();
  RunConfig c = config("ac14.json", workers);
  auto net = load_network(c);
  auto fleet = fleet_from_config(c, net);
  auto m = build_ac_model(net);
  auto ctl = control_layout(m);
  auto rows = build_ac_rows(m, fleet, ctl);
  auto s = pf_solve(m, spec_from_controls(m, fleet, ctl, initial_controls(m, ctl)));
  if (!s.solved) return {false, "case14 power flow did not converge: " + s.message};

  auto zero = respond(m, fleet, s, Vector::Zero(fleet.size()));
  double idem = zero.solved ? (zero.w() - s.w()).lpNorm<Eigen::Infinity>() : kInf;

  auto jac = response_jacobian(m, fleet, rows, s);
  const double h = 1e-5;
  double fd_err = 0;
  for (int j = 0; j < fleet.size(); ++j) {
    Vector e = Vector::Zero(fleet.size());
    e[j] = h;
    auto plus = respond(m, fleet, s, e), minus = respond(m, fleet, s, -e);
    if (!plus.solved || !minus.solved) return {false, "finite-difference power flows failed"};
    Vector fd = (plus.w() - minus.w()) / (2 * h);
    for (Eigen::Index i = 0; i < fd.size(); ++i)
      if (std::abs(jac.dw(i, j)) > 1e-8) fd_err = std::max(fd_err, std::abs(fd[i] - jac.dw(i, j)) / std::abs(jac.dw(i, j)));
  }

  auto train = training_set(c, net, fleet);
  int k = resolve_k(c, train.size());
  AcSolveOptions opt;
  opt.selection = c.solver;
  opt.eta = 1e-4;
  opt.max_outer = 10;
  auto fp = fixed_point_solve(m, fleet, train.xi, k, opt);
  write_file(dir / "ac_fixed_point.csv", fixed_point_trace_csv(fp));
  double last = fp.distances.empty() ? kInf : fp.distances.back();
  bool ok = s.mismatch <= 1e-10 && idem <= 1e-10 && fd_err <= 1e-4 && fp.converged && last <= 1e-4 &&
            fp.iterations <= 5;
  return {ok, fmt::format("power flow residual {:.1e}; respond(w, 0) drift {:.1e}; Jacobian vs FD {:.1e}; "
                          "fixed point (S = {}, k = {}) {} in {} iterations, D = {:.1e}; {:.2f} s",
                          s.mismatch, idem, fd_err, train.size(), k, fp.converged ? "converged" : "failed",
                          fp.iterations, last, seconds_since(t0))};
}

Outcome scale_smoke(const fs::path& dir, int workers) {
  RunConfig c = config("dc300_sweep.json", workers);
  auto sw = dc_sweep(c);
  if (!sw.failure.empty()) return {false, sw.failure};
  write_file(dir / "sweep300.csv", sweep_csv(sw.res, c.digest));
  bool ok = true;
  for (const auto& row : sw.res.rows) ok = ok && row.status == "OPTIMAL";
  double worst = *std::max_element(sw.times.begin(), sw.times.end());
  int fast = static_cast<int>(std::count_if(sw.times.begin(), sw.times.end(), [](double t) { return t < 10; }));
  return {ok && worst <= 120, fmt::format("{} solves optimal, slowest {:.2f} s, {} of {} under 10 s",
                                          sw.res.rows.size(), worst, fast, sw.times.size())};
}

/// Criteria 1-5 in one directory; returns their outcomes.
std::vector<Outcome> first_five(const fs::path& dir, int workers) {
  fs::create_directories(dir);
  std::vector<Outcome> out;
  out.push_back(ambiguity_numbers(dir));
  out.push_back(selection_exactness(dir, workers));
  auto t0 = Clock::now();
  RunConfig c = config("dc14_sweep.json", workers);
  auto sw = dc_sweep(c);
  double dt = seconds_since(t0);
  if (sw.failure.empty()) write_file(dir / "sweep14.csv", sweep_csv(sw.res, c.digest));
  out.push_back(cost_ordering(sw, dt));
  out.push_back(out_of_sample(sw, c.scenarios.test_size));
  out.push_back(tutorial_checks(dir, workers));
  return out;
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string out = "acceptance_out";
  app.add_option("--out", out, "directory for CSV outputs");
  CLI11_PARSE(app, argc, argv);
  fs::path root(out);

  std::vector<Outcome> results(8);
  std::vector<Outcome> first;
  try {
    first = first_five(root / "run1", 1);
  } catch (const std::exception& e) {
    first.assign(5, {false, std::string("exception: ") + e.what()});
  }
  for (int i = 0; i < 5; ++i) results[i] = first[i];
  results[5] = guarded([&] { return ac_machinery(root, 1); });
  results[6] = guarded([&] { return scale_smoke(root, 4); });
  results[7] = guarded([&] {
    first_five(root / "run2", 4);
    int files = 0, differ = 0;
    for (const auto& entry : fs::directory_iterator(root / "run1")) {
      if (entry.path().extension() != ".csv") continue;
      ++files;
      fs::path other = root / "run2" / entry.path().filename();
      if (!fs::exists(other) || read_file(entry.path()) != read_file(other)) ++differ;
    }
    return Outcome{files == 4 && differ == 0,
                   fmt::format("{} CSV files from criteria 1-5, {} differ between 1 and 4 workers", files, differ)};
  });

  static const char* kNames[8] = {"ambiguity numbers",     "selection exactness", "cost ordering",
                                  "out-of-sample robustness", "tutorial checks",   "AC machinery",
                                  "300-bus scale",         "determinism"};
  bool all = true;
  for (int i = 0; i < 8; ++i) {
    all = all && results[i].pass;
    std::cout << fmt::format("[{}] criterion {} ({}): {}\n", results[i].pass ? "PASS" : "FAIL", i + 1, kNames[i],
                             results[i].detail);
  }
  return all ? 0 : 1;
}
