// Command-line front end: case inspection, scenario generation, ambiguity
// arithmetic, single solves, k sweeps and out-of-sample evaluation.

#include <drcc/ac_model.hpp>
#include <drcc/ambiguity.hpp>
#include <drcc/config.hpp>
#include <drcc/evaluation.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace drcc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kInfeasible = 2, kNumerical = 3 };

int default_workers() {
  if (const char* env = std::getenv("DRCC_WORKERS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(v);
  }
  return 1;
}

int exit_code(SelectionStatus s) {
  switch (s) {
    case SelectionStatus::Optimal:
    case SelectionStatus::GapLimit: return kOk;
    case SelectionStatus::Infeasible: return kInfeasible;
    case SelectionStatus::NumericalFailure: return kNumerical;
  }
  return kNumerical;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

std::vector<long> parse_longs(const std::string& text, const char* flag) {
  std::vector<long> out;
  std::stringstream in(text);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    try {
      out.push_back(std::stol(cell));
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("{}: '{}' is not an integer", flag, cell));
    }
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("{}: '{}' is not a number", flag, cell));
    }
  }
  return out;
}

/// Appends to the run log and echoes to stdout.
class Log {
 public:
  explicit Log(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error(fmt::format("cannot write '{}'", path.string()));
  }
  template <class... Args>
  void operator()(fmt::format_string<Args...> f, Args&&... args) {
    std::string line = fmt::format(f, std::forward<Args>(args)...);
    out_ << line << '\n';
    std::cout << line << '\n';
  }

 private:
  std::ofstream out_;
};

struct Overrides {
  std::string config;
  std::optional<int> k;
  std::optional<double> eps;
  std::optional<int> workers;
  std::string out;
  std::optional<std::uint64_t> train_seed, test_seed;
  std::optional<int> train_size, test_size;
};

void add_override_flags(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--k", o.k, "scenarios to enforce (overrides ambiguity.k)");
  app->add_option("--eps", o.eps, "violation target (overrides ambiguity.epsilon_target)");
  app->add_option("--workers", o.workers, "worker threads (default: DRCC_WORKERS or 1)");
  app->add_option("--out", o.out, "output directory (overrides output_dir)");
  app->add_option("--train-seed", o.train_seed, "training seed");
  app->add_option("--test-seed", o.test_seed, "test seed");
  app->add_option("--train-size", o.train_size, "training scenario count");
  app->add_option("--test-size", o.test_size, "test scenario count");
}

RunConfig load_with_overrides(const Overrides& o) {
  RunConfig c = load_config(o.config);
  if (o.k) {
    c.k = *o.k;
    c.epsilon_target.reset();
  }
  if (o.eps) {
    c.epsilon_target = *o.eps;
    c.k.reset();
  }
  c.solver.workers = o.workers ? *o.workers : (c.solver.workers > 1 ? c.solver.workers : default_workers());
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.train_seed) c.scenarios.train_seed = *o.train_seed;
  if (o.test_seed) c.scenarios.test_seed = *o.test_seed;
  if (o.train_size) c.scenarios.train_size = *o.train_size;
  if (o.test_size) c.scenarios.test_size = *o.test_size;
  if (c.solver.workers < 1) throw ConfigError("--workers must be at least 1");
  if (c.k && (*c.k < 1 || *c.k > c.scenarios.train_size))
    throw ConfigError(fmt::format("k = {} outside [1, {}]", *c.k, c.scenarios.train_size));
  c.digest = config_digest(c);
  fs::create_directories(c.output_dir);
  return c;
}

/// Inputs shared by the solve, sweep and eval commands.
struct Study {
  RunConfig cfg;
  NetworkCase net;
  VreFleet fleet;
  ScenarioSet train, test;
};

Study prepare(const RunConfig& cfg, Log& log) {
  Study st;
  st.cfg = cfg;
  st.net = load_network(cfg);
  st.fleet = fleet_from_config(cfg, st.net);
  st.train = training_set(cfg, st.net, st.fleet);
  st.test = test_set(cfg, st.net, st.fleet);
  log("config {} case {} ({} buses, {} generators, {} branches)", cfg.digest, fs::path(cfg.case_path).filename().string(),
      st.net.n_bus(), st.net.n_gen(), st.net.n_branch());
  log("scenarios: {} training (seed {}), {} test (seed {}), {} VRE units", st.train.size(), st.train.seed,
      st.test.size(), st.test.seed, st.fleet.size());
  return st;
}

std::string selection_csv(const SelectionSolution& sol, const std::string& digest) {
  std::string out = fmt::format("# config={}\nscenario,relaxed\n", digest);
  for (std::size_t j = 0; j < sol.z.size(); ++j) out += fmt::format("{},{}\n", j + 1, int(sol.z[j]));
  return out;
}

std::string values_csv(const std::vector<std::string>& names, const Vector& x, const std::string& digest) {
  std::string out = fmt::format("# config={}\nname,value\n", digest);
  for (std::size_t i = 0; i < names.size(); ++i) out += fmt::format("{},{:.17g}\n", names[i], x[static_cast<Eigen::Index>(i)]);
  return out;
}

std::vector<int> one_based(std::vector<int> v) {
  for (int& i : v) ++i;
  return v;
}

json rates_json(const std::vector<std::string>& names, const ViolationReport& rep) {
  json j = json::object();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (rep.per_row[static_cast<Eigen::Index>(i)] > 0) j[names[i]] = rep.per_row[static_cast<Eigen::Index>(i)];
  return j;
}

// ---------------------------------------------------------------------------
// DC and AC single solves

struct DcOutcome {
  SelectionSolution kl, det, ro;
  ViolationReport rep, det_rep;
};

DcOutcome run_dc(const Study& st, int k, Log& log) {
  auto study = make_dc_study(st.net, st.fleet);
  DcOutcome o;
  o.det = solve_dc_deterministic(study);
  if (o.det.status != SelectionStatus::Optimal) {
    log("deterministic dispatch: {} {}", to_string(o.det.status), o.det.message);
    o.kl = o.det;
    return o;
  }
  o.kl = solve_dc_kl(study, st.train.xi, k, st.cfg.solver);
  log("selection: {} objective {:.10g} nodes {} {}", to_string(o.kl.status), o.kl.objective, o.kl.stats.nodes,
      o.kl.message);
  auto ro_xi = ro_set(st.cfg, st.net, st.fleet, st.train);
  o.ro = ro_baseline(study, ro_xi.xi, st.cfg.solver);
  log("robust baseline over {} scenarios: {} {:.10g} {}", ro_xi.size(), to_string(o.ro.status), o.ro.objective,
      o.ro.message);
  if (o.kl.status == SelectionStatus::Optimal || o.kl.status == SelectionStatus::GapLimit) {
    o.rep = violation_frequency(study.cc, o.kl.x, st.test.xi, st.cfg.solver.workers);
    o.det_rep = violation_frequency(study.cc, o.det.x, st.test.xi, st.cfg.solver.workers);
  }
  return o;
}

int cmd_solve(const Overrides& ov, const std::string& model) {
  RunConfig cfg = load_with_overrides(ov);
  cfg.model = model;
  fs::path dir = cfg.output_dir;
  Log log(dir / "log.txt");
  Study st = prepare(cfg, log);
  const int s = st.train.size();
  int k = resolve_k(cfg, s);
  auto eps = optimal_epsilon(k, s);
  if (cfg.epsilon_target)
    log("k = {} chosen for epsilon target {} with S = {} (epsilon* = {:.6f})", k, *cfg.epsilon_target, s, eps.epsilon);
  else
    log("k = {} of S = {} (epsilon* = {:.6f})", k, s, eps.epsilon);

  json report;
  report["config"] = cfg.digest;
  report["model"] = model;
  report["k"] = k;
  report["s"] = s;
  report["epsilon_star"] = eps.epsilon;
  report["bound"] = eps.bound;
  report["train_seed"] = st.train.seed;
  report["test_seed"] = st.test.seed;
  SelectionStatus status;

  if (model == "dc") {
    auto t0 = std::chrono::steady_clock::now();
    DcOutcome o = run_dc(st, k, log);
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    status = o.kl.status;
    report["status"] = to_string(status);
    report["message"] = o.kl.message;
    if (status == SelectionStatus::Optimal || status == SelectionStatus::GapLimit) {
      std::vector<std::string> names;
      for (int g = 0; g < st.net.n_gen(); ++g) names.push_back(fmt::format("pg_{}", g + 1));
      write_file(dir / "solution.csv", values_csv(names, o.kl.x * st.net.base_mva, cfg.digest));
      write_file(dir / "selection.csv", selection_csv(o.kl, cfg.digest));
      auto study = make_dc_study(st.net, st.fleet);
      report["cost"] = o.kl.objective;
      report["deterministic_cost"] = o.det.objective;
      report["ro_cost"] = o.ro.objective;
      report["cost_vs_ro"] = o.kl.objective / o.ro.objective;
      report["joint_violation_rate"] = o.rep.joint_rate;
      report["deterministic_violation_rate"] = o.det_rep.joint_rate;
      report["per_row_rates"] = rates_json(study.cc.names, o.rep);
      report["relaxed"] = one_based(o.kl.relaxed());
      report["nodes"] = o.kl.stats.nodes;
      for (int g = 0; g < st.net.n_gen(); ++g)
        log("  pg_{} = {:.6f} MW (deterministic {:.6f} MW)", g + 1, o.kl.x[g] * st.net.base_mva,
            o.det.x[g] * st.net.base_mva);
      log("cost {:.6f} (deterministic {:.6f}, robust {:.6f}), test violation rate {:.4f} (deterministic {:.4f})",
          o.kl.objective, o.det.objective, o.ro.objective, o.rep.joint_rate, o.det_rep.joint_rate);
    }
    report["time_s"] = cfg.report_timing ? dt : 0.0;
  } else {
    auto t0 = std::chrono::steady_clock::now();
    auto m = build_ac_model(st.net);
    AcSolveOptions opt;
    opt.selection = cfg.solver;
    opt.eta = cfg.fp_eta;
    opt.max_outer = cfg.fp_max_outer;
    auto fp = fixed_point_solve(m, st.fleet, st.train.xi, k, opt);
    double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    status = fp.converged ? fp.solution.status : SelectionStatus::NumericalFailure;
    for (std::size_t t = 0; t < fp.distances.size(); ++t)
      log("outer iteration {}: distance {:.3e} cost {:.6f}", t + 1, fp.distances[t], fp.objectives[t]);
    report["status"] = to_string(status);
    report["message"] = fp.message;
    report["iterations"] = fp.iterations;
    report["distances"] = fp.distances;
    write_file(dir / "trace.csv", fixed_point_trace_csv(fp));
    if (fp.converged) {
      auto ctl = control_layout(m);
      auto rows = build_ac_rows(m, st.fleet, ctl);
      auto rep = ac_violation_frequency(m, st.fleet, rows, fp.solution.state, fp.solution.u, st.test.xi,
                                        cfg.solver.workers);
      auto det_rep = ac_violation_frequency(m, st.fleet, rows, fp.deterministic.state, fp.deterministic.u,
                                            st.test.xi, cfg.solver.workers);
      std::vector<std::string> names;
      for (int g : ctl.gens) names.push_back(fmt::format("pg_{}", g + 1));
      for (int b : ctl.vbus) names.push_back(fmt::format("v_{}", st.net.buses[b].id));
      write_file(dir / "solution.csv", values_csv(names, fp.solution.u, cfg.digest));
      write_file(dir / "selection.csv", selection_csv(fp.solution.selection, cfg.digest));
      write_file(dir / "ac_state.csv", fmt::format("# config={}\n", cfg.digest) + ac_state_csv(m, fp.solution.state));
      report["cost"] = fp.solution.cost;
      report["deterministic_cost"] = fp.deterministic.cost;
      report["joint_violation_rate"] = rep.joint_rate;
      report["deterministic_violation_rate"] = det_rep.joint_rate;
      report["newton_failures"] = rep.failures;
      report["per_row_rates"] = rates_json(rows.names, rep);
      report["relaxed"] = one_based(fp.solution.selection.relaxed());
      log("cost {:.6f} (deterministic {:.6f}), test violation rate {:.4f} (deterministic {:.4f})", fp.solution.cost,
          fp.deterministic.cost, rep.joint_rate, det_rep.joint_rate);
    } else {
      log("fixed point failed: {}", fp.message);
    }
    report["time_s"] = cfg.report_timing ? dt : 0.0;
  }
  write_file(dir / "report.json", report.dump(2) + "\n");
  log("status {}", to_string(status));
  return exit_code(status);
}

// ---------------------------------------------------------------------------
// Sweep

int cmd_sweep(const Overrides& ov) {
  RunConfig cfg = load_with_overrides(ov);
  if (cfg.sweep_k.empty()) throw ConfigError("config key 'sweep': empty k list");
  fs::path dir = cfg.output_dir;
  Log log(dir / "log.txt");
  Study st = prepare(cfg, log);
  const int s = st.train.size();
  SweepResult res;
  if (cfg.model == "dc") {
    auto study = make_dc_study(st.net, st.fleet);
    auto det = solve_dc_deterministic(study);
    if (det.status != SelectionStatus::Optimal) {
      log("deterministic dispatch failed: {}", det.message);
      return exit_code(det.status);
    }
    auto ro_xi = ro_set(cfg, st.net, st.fleet, st.train);
    auto ro = ro_baseline(study, ro_xi.xi, cfg.solver);
    if (ro.status != SelectionStatus::Optimal) {
      log("robust baseline failed: {}", ro.message);
      return exit_code(ro.status);
    }
    auto solve = [&](int k) {
      auto sol = solve_dc_kl(study, st.train.xi, k, cfg.solver);
      SweepPoint pt;
      pt.status = to_string(sol.status);
      pt.cost = sol.objective;
      if (sol.x.size()) pt.joint_violation = violation_frequency(study.cc, sol.x, st.test.xi, cfg.solver.workers).joint_rate;
      pt.relaxed = sol.relaxed();
      log("k = {}: {} cost {:.10g} violation {:.4f}", k, pt.status, pt.cost, pt.joint_violation);
      return pt;
    };
    res = sweep_k(cfg.sweep_k, s, solve, ro.objective, cfg.report_timing);
    res.det_cost = det.objective;
    res.det_violation = violation_frequency(study.cc, det.x, st.test.xi, cfg.solver.workers).joint_rate;
    res.ro_violation = violation_frequency(study.cc, ro.x, st.test.xi, cfg.solver.workers).joint_rate;
  } else {
    auto m = build_ac_model(st.net);
    auto ctl = control_layout(m);
    auto rows = build_ac_rows(m, st.fleet, ctl);
    AcSolveOptions opt;
    opt.selection = cfg.solver;
    opt.eta = cfg.fp_eta;
    opt.max_outer = cfg.fp_max_outer;
    auto ro = fixed_point_solve(m, st.fleet, st.train.xi, s, opt);
    if (!ro.converged) {
      log("robust baseline failed: {}", ro.message);
      return kNumerical;
    }
    auto solve = [&](int k) {
      auto fp = fixed_point_solve(m, st.fleet, st.train.xi, k, opt);
      SweepPoint pt;
      pt.status = fp.converged ? to_string(fp.solution.status) : "NO_FIXED_POINT";
      if (fp.converged) {
        pt.cost = fp.solution.cost;
        pt.joint_violation = ac_violation_frequency(m, st.fleet, rows, fp.solution.state, fp.solution.u, st.test.xi,
                                                    cfg.solver.workers)
                                 .joint_rate;
        pt.relaxed = fp.solution.selection.relaxed();
      }
      log("k = {}: {} cost {:.10g} violation {:.4f} outer iterations {}", k, pt.status, pt.cost, pt.joint_violation,
          fp.iterations);
      return pt;
    };
    res = sweep_k(cfg.sweep_k, s, solve, ro.solution.cost, cfg.report_timing);
    res.det_cost = ro.deterministic.cost;
    res.det_violation = ac_violation_frequency(m, st.fleet, rows, ro.deterministic.state, ro.deterministic.u,
                                               st.test.xi, cfg.solver.workers)
                            .joint_rate;
    res.ro_violation = ac_violation_frequency(m, st.fleet, rows, ro.solution.state, ro.solution.u, st.test.xi,
                                              cfg.solver.workers)
                           .joint_rate;
  }
  write_file(dir / "sweep.csv", sweep_csv(res, cfg.digest));
  std::string title = fmt::format("{} {} sweep, S = {}", fs::path(cfg.case_path).stem().string(), cfg.model, s);
  write_file(dir / "sweep.svg", sweep_svg(res, title, cfg.digest));
  log("wrote {} rows to {}", res.rows.size(), (dir / "sweep.csv").string());
  bool all_ok = true;
  for (const auto& row : res.rows) all_ok = all_ok && (row.status == "OPTIMAL" || row.status == "GAP_LIMIT");
  return all_ok ? kOk : kNumerical;
}

// ---------------------------------------------------------------------------
// Eval of a stored DC or AC solution

int cmd_eval(const Overrides& ov, const std::string& solution_path) {
  RunConfig cfg = load_with_overrides(ov);
  fs::path dir = cfg.output_dir;
  Log log(dir / "eval_log.txt");
  Study st = prepare(cfg, log);
  std::ifstream in(solution_path);
  if (!in) throw ConfigError(fmt::format("cannot open solution file '{}'", solution_path));
  std::map<std::string, double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line == "name,value") continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(fmt::format("malformed solution line '{}'", line));
    values[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
  }
  auto get = [&](const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) throw ParseError(fmt::format("solution file lacks '{}'", name));
    return it->second;
  };
  json report;
  report["config"] = cfg.digest;
  report["solution"] = fs::path(solution_path).filename().string();
  ViolationReport rep;
  std::vector<std::string> names;
  if (cfg.model == "dc") {
    auto study = make_dc_study(st.net, st.fleet);
    Vector x(st.net.n_gen());
    for (int g = 0; g < st.net.n_gen(); ++g) x[g] = get(fmt::format("pg_{}", g + 1)) / st.net.base_mva;
    rep = violation_frequency(study.cc, x, st.test.xi, cfg.solver.workers);
    names = study.cc.names;
    double cost = 0;
    for (int g = 0; g < st.net.n_gen(); ++g) cost += st.net.gens[g].cost(x[g]);
    report["cost"] = cost;
  } else {
    auto m = build_ac_model(st.net);
    auto ctl = control_layout(m);
    auto rows = build_ac_rows(m, st.fleet, ctl);
    Vector u(ctl.size());
    for (std::size_t i = 0; i < ctl.gens.size(); ++i) u[i] = get(fmt::format("pg_{}", ctl.gens[i] + 1));
    for (std::size_t i = 0; i < ctl.vbus.size(); ++i)
      u[ctl.gens.size() + i] = get(fmt::format("v_{}", st.net.buses[ctl.vbus[i]].id));
    auto s = pf_solve(m, spec_from_controls(m, st.fleet, ctl, u));
    if (!s.solved) {
      log("power flow at the stored controls failed: {}", s.message);
      return kNumerical;
    }
    rep = ac_violation_frequency(m, st.fleet, rows, s, u, st.test.xi, cfg.solver.workers);
    names = rows.names;
    report["cost"] = generation_cost(st.net, generator_outputs(m, st.fleet, ctl, s, u));
    report["newton_failures"] = rep.failures;
  }
  report["joint_violation_rate"] = rep.joint_rate;
  report["per_row_rates"] = rates_json(names, rep);
  report["test_seed"] = st.test.seed;
  write_file(dir / "eval.json", report.dump(2) + "\n");
  log("test violation rate {:.4f} over {} scenarios", rep.joint_rate, rep.scenarios);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributionally robust chance-constrained dispatch"};
  app.require_subcommand(1);

  // case info
  auto* case_cmd = app.add_subcommand("case", "inspect a MATPOWER case");
  case_cmd->require_subcommand(1);
  auto* info = case_cmd->add_subcommand("info", "print element counts and totals");
  std::string case_path;
  bool neg_x = false;
  info->add_option("case", case_path, "case file")->required();
  info->add_flag("--allow-negative-reactance", neg_x, "accept series-compensated branches");

  // scenario gen / stats
  auto* scen = app.add_subcommand("scenario", "generate or summarize scenario sets");
  scen->require_subcommand(1);
  auto* gen = scen->add_subcommand("gen", "draw a scenario set");
  std::string gen_config, gen_case, gen_buses, gen_mw, gen_out;
  double zeta = 0.05, rho = 0.2;
  bool no_clip = false;
  int gen_s = 100;
  std::uint64_t gen_seed = 1;
  gen->add_option("-c,--config", gen_config, "take case, fleet and recipe from a run configuration");
  gen->add_option("--case", gen_case, "case file");
  gen->add_option("--vre-buses", gen_buses, "comma-separated VRE bus ids");
  gen->add_option("--forecast-mw", gen_mw, "comma-separated VRE forecasts in MW");
  gen->add_option("--zeta", zeta, "variance scale");
  gen->add_option("--rho", rho, "correlation");
  gen->add_flag("--no-clip", no_clip, "keep the unclipped Gaussian draw");
  auto* s_opt = gen->add_option("--s", gen_s, "scenario count");
  auto* seed_opt = gen->add_option("--seed", gen_seed, "seed");
  gen->add_option("-o,--out", gen_out, "output CSV (default: stdout)");
  auto* stats = scen->add_subcommand("stats", "summarize a scenario CSV");
  std::string stats_path;
  stats->add_option("csv", stats_path, "scenario CSV")->required()->check(CLI::ExistingFile);

  // ambiguity eps / k / mink
  auto* amb = app.add_subcommand("ambiguity", "relative-entropy ambiguity arithmetic");
  amb->require_subcommand(1);
  int a_k = 0, a_s = 0, a_k_from = 0, a_k_to = 0;
  double a_eps = 0, a_radius = 0, a_target = 0;
  auto* eps_cmd = amb->add_subcommand("eps", "optimal violation level for k of S");
  eps_cmd->add_option("--k", a_k, "enforced scenarios");
  eps_cmd->add_option("--s", a_s, "scenario count")->required();
  eps_cmd->add_option("--k-from", a_k_from, "CSV sweep start");
  eps_cmd->add_option("--k-to", a_k_to, "CSV sweep end");
  auto* k_cmd = amb->add_subcommand("k", "scenarios to enforce for a violation level and radius");
  k_cmd->add_option("--eps", a_eps, "violation level")->required();
  k_cmd->add_option("--radius", a_radius, "relative-entropy radius")->required();
  k_cmd->add_option("--s", a_s, "scenario count")->required();
  auto* mink_cmd = amb->add_subcommand("mink", "smallest k whose optimal violation level meets a target");
  mink_cmd->add_option("--target", a_target, "violation target")->required();
  mink_cmd->add_option("--s", a_s, "scenario count")->required();

  // solve dc / ac, sweep, eval
  auto* solve = app.add_subcommand("solve", "solve one chance-constrained dispatch");
  solve->require_subcommand(1);
  Overrides solve_ov, sweep_ov, eval_ov;
  auto* solve_dc = solve->add_subcommand("dc", "DC network model");
  add_override_flags(solve_dc, solve_ov);
  auto* solve_ac = solve->add_subcommand("ac", "AC network model with the fixed-point loop");
  add_override_flags(solve_ac, solve_ov);
  auto* sweep = app.add_subcommand("sweep", "solve for each k of the configured list");
  add_override_flags(sweep, sweep_ov);
  auto* eval = app.add_subcommand("eval", "out-of-sample violation rate of a stored solution");
  add_override_flags(eval, eval_ov);
  std::string eval_solution;
  eval->add_option("--solution", eval_solution, "solution CSV written by solve")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (info->parsed()) {
      NetworkOptions opt;
      opt.allow_negative_reactance = neg_x;
      auto raw = load_matpower(case_path);
      auto net = to_network(raw, opt);
      for (const auto& w : raw.warnings) std::cerr << "warning: " << w << '\n';
      int pv = 0, pq = 0;
      for (const auto& b : net.buses) (b.kind == BusKind::PV ? pv : b.kind == BusKind::PQ ? pq : pv) += b.kind != BusKind::Slack;
      double pmax = 0;
      for (const auto& g : net.gens) pmax += g.pmax;
      int limited = 0;
      for (const auto& br : net.branches) limited += std::isfinite(br.limit);
      fmt::print("buses {}\ngenerators {}\nbranches {}\n", net.n_bus(), net.n_gen(), net.n_branch());
      fmt::print("slack_bus {}\npv_buses {}\npq_buses {}\n", net.buses[net.slack].id, pv, pq);
      fmt::print("base_mva {:.6g}\ntotal_load_mw {:.6f}\ncapacity_mw {:.6f}\nlimited_branches {}\n", net.base_mva,
                 net.total_load() * net.base_mva, pmax * net.base_mva, limited);
      return kOk;
    }
    if (gen->parsed()) {
      NetworkCase net;
      VreFleet fleet;
      GaussianSpec spec;
      if (!gen_config.empty()) {
        RunConfig c = load_config(gen_config);
        if (!gen_case.empty()) c.case_path = gen_case;
        net = load_network(c);
        fleet = fleet_from_config(c, net);
        spec = scenario_spec(c, fleet);
        if (!*s_opt) gen_s = c.scenarios.train_size;
        if (!*seed_opt) gen_seed = c.scenarios.train_seed;
      } else {
        if (gen_case.empty() || gen_buses.empty() || gen_mw.empty())
          throw ConfigError("scenario gen needs --config, or --case with --vre-buses and --forecast-mw");
        if (!fs::exists(gen_case)) throw ConfigError(fmt::format("case file '{}' does not exist", gen_case));
        net = to_network(load_matpower(gen_case));
        auto buses = parse_longs(gen_buses, "--vre-buses");
        for (long id : buses)
          if (!net.index_of.count(id)) throw ConfigError(fmt::format("--vre-buses: unknown bus {}", id));
        fleet = build_fleet_mw(net, buses, parse_doubles(gen_mw, "--forecast-mw"), 0);
        spec.forecast = fleet.forecast;
        spec.zeta = zeta;
        spec.rho = rho;
        spec.clip = !no_clip;
      }
      auto set = sample(spec, gen_s, gen_seed, default_workers());
      set.columns = vre_columns(net, fleet);
      if (gen_out.empty())
        std::cout << scenario_csv(set);
      else
        save_csv(set, gen_out);
      return kOk;
    }
    if (stats->parsed()) {
      auto set = load_csv(stats_path);
      auto st = summarize(set);
      fmt::print("scenarios {}\ncolumn,mean,stddev,min,max\n", set.size());
      for (int c = 0; c < set.dim(); ++c)
        fmt::print("{},{:.10g},{:.10g},{:.10g},{:.10g}\n", c < static_cast<int>(set.columns.size()) ? set.columns[c] : "",
                   st.mean[c], st.stddev[c], st.min[c], st.max[c]);
      fmt::print("total_mean {:.10g}\ntotal_p10 {:.10g}\ntotal_p50 {:.10g}\ntotal_p90 {:.10g}\n", st.total_mean,
                 st.total_p10, st.total_p50, st.total_p90);
      return kOk;
    }
    if (eps_cmd->parsed()) {
      if (a_k_from > 0 || a_k_to > 0) {
        if (a_k_from < 1 || a_k_to < a_k_from || a_k_to > a_s) throw ConfigError("--k-from/--k-to must satisfy 1 <= from <= to <= S");
        fmt::print("k,epsilon_star,bound,radius\n");
        for (int k = a_k_from; k <= a_k_to; ++k) {
          auto p = params_for_k(k, a_s);
          auto e = optimal_epsilon(k, a_s);
          fmt::print("{},{:.10f},{:.10f},{:.10f}\n", k, e.epsilon, e.bound, p.radius);
        }
        return kOk;
      }
      if (a_k < 1 || a_k > a_s) throw ConfigError("--k must lie in [1, S]");
      fmt::print("{:.6f}\n", optimal_epsilon(a_k, a_s).epsilon);
      return kOk;
    }
    if (k_cmd->parsed()) {
      int k = k_for(a_eps, a_radius, a_s);
      if (k == kWorstCaseRequired)
        fmt::print("worst-case\n");
      else
        fmt::print("{}\n", k);
      return kOk;
    }
    if (mink_cmd->parsed()) {
      fmt::print("{}\n", min_k_for_target(a_target, a_s));
      return kOk;
    }
    if (solve_dc->parsed()) return cmd_solve(solve_ov, "dc");
    if (solve_ac->parsed()) return cmd_solve(solve_ov, "ac");
    if (sweep->parsed()) return cmd_sweep(sweep_ov);
    if (eval->parsed()) return cmd_eval(eval_ov, eval_solution);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
