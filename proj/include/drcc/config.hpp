#pragma once

// Run configuration: one JSON document describing the case, the VRE fleet,
// the scenario recipe, the ambiguity inputs and the solver options.

#include <drcc/ambiguity.hpp>
#include <drcc/case_io.hpp>
#include <drcc/scenarios.hpp>
#include <drcc/selection.hpp>

#include <fmt/format.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace drcc {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct VreConfig {
  std::string placement = "explicit";  // explicit | largest_load
  std::vector<long> buses;             // external ids, explicit placement
  std::vector<double> forecast_mw;
  int count = 0;         // largest_load placement
  double each_mw = 0;    // largest_load placement
  double gamma = 0.1;
};

struct ScenarioConfig {
  double zeta = 0.05, rho = 0.2;
  bool clip = true;
  int train_size = 100;
  std::uint64_t train_seed = 1;
  int test_size = 10000;
  std::uint64_t test_seed = 2;
  std::string train_csv, test_csv;
};

struct RunConfig {
  std::string case_path;
  std::string model = "dc";
  VreConfig vre;
  std::string line_limit_mode = "keep";  // keep | thermal | default
  double default_line_mw = 0;
  bool allow_negative_reactance = false;
  std::vector<CostOverride> cost_overrides;
  ScenarioConfig scenarios;
  std::optional<int> k;
  std::optional<double> epsilon_target;
  SelectionOptions solver;
  std::string ro_mode = "training";  // training | large_sample
  int ro_samples = 10000;
  std::vector<int> sweep_k;
  double fp_eta = 1e-4;
  int fp_max_outer = 10;
  std::string output_dir = "out";
  bool report_timing = true;

  /// Digest of the canonical configuration, written into every output.
  std::string digest;
};

namespace detail {

using nlohmann::json;

class ConfigReader {
 public:
  explicit ConfigReader(const json& root) : root_(root) {}

  const json* find(const std::string& key) const {
    const json* at = &root_;
    std::size_t start = 0;
    for (;;) {
      auto dot = key.find('.', start);
      std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!at->is_object() || !at->contains(part)) return nullptr;
      at = &(*at)[part];
      if (dot == std::string::npos) return at;
      start = dot + 1;
    }
  }

  double number(const std::string& key, double fallback) const {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(fmt::format("config key '{}': expected a number", key));
    return v->get<double>();
  }
  std::optional<double> number(const std::string& key) const {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_number()) throw ConfigError(fmt::format("config key '{}': expected a number", key));
    return v->get<double>();
  }
  long integer(const std::string& key, long fallback) const {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) throw ConfigError(fmt::format("config key '{}': expected an integer", key));
    return v->get<long>();
  }
  std::uint64_t seed(const std::string& key, std::uint64_t fallback) const {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number_unsigned()) throw ConfigError(fmt::format("config key '{}': expected a nonnegative integer", key));
    return v->get<std::uint64_t>();
  }
  bool boolean(const std::string& key, bool fallback) const {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(fmt::format("config key '{}': expected true or false", key));
    return v->get<bool>();
  }
  std::string string(const std::string& key, const std::string& fallback) const {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(fmt::format("config key '{}': expected a string", key));
    return v->get<std::string>();
  }
  template <class T>
  std::vector<T> list(const std::string& key) const {
    const json* v = find(key);
    if (!v) return {};
    if (!v->is_array()) throw ConfigError(fmt::format("config key '{}': expected an array", key));
    std::vector<T> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const json& e = (*v)[i];
      bool ok = std::is_integral_v<T> ? e.is_number_integer() : e.is_number();
      if (!ok) throw ConfigError(fmt::format("config key '{}[{}]': expected a number", key, i));
      out.push_back(e.get<T>());
    }
    return out;
  }

 private:
  const json& root_;
};

inline void check_keys(const json& obj, const std::string& prefix, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(fmt::format("config key '{}': expected an object", prefix));
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError(fmt::format("unknown config key '{}{}'", prefix.empty() ? "" : prefix + ".", it.key()));
}

}  // namespace detail

/// Effective settings as canonical JSON. Paths are reduced to file names so the
/// result does not depend on where the repository lives.
inline nlohmann::json effective_json(const RunConfig& c) {
  using nlohmann::json;
  auto name = [](const std::string& p) { return p.empty() ? p : std::filesystem::path(p).filename().string(); };
  json j;
  j["case"] = name(c.case_path);
  j["model"] = c.model;
  j["vre"] = {{"placement", c.vre.placement}, {"buses", c.vre.buses}, {"forecast_mw", c.vre.forecast_mw},
              {"count", c.vre.count}, {"each_mw", c.vre.each_mw}, {"gamma", c.vre.gamma}};
  j["line_limits"] = {{"mode", c.line_limit_mode}, {"default_mw", c.default_line_mw}};
  j["allow_negative_reactance"] = c.allow_negative_reactance;
  j["cost_override"] = json::array();
  for (const auto& o : c.cost_overrides) j["cost_override"].push_back({{"gen", o.gen}, {"c0", o.c0}, {"c1", o.c1}, {"c2", o.c2}});
  const auto& sc = c.scenarios;
  j["scenarios"] = {{"zeta", sc.zeta}, {"rho", sc.rho}, {"clip", sc.clip}, {"train_size", sc.train_size},
                    {"train_seed", sc.train_seed}, {"test_size", sc.test_size}, {"test_seed", sc.test_seed},
                    {"train_csv", name(sc.train_csv)}, {"test_csv", name(sc.test_csv)}};
  j["ambiguity"] = json::object();
  if (c.k) j["ambiguity"]["k"] = *c.k;
  if (c.epsilon_target) j["ambiguity"]["epsilon_target"] = *c.epsilon_target;
  j["solver"] = {{"node_limit", c.solver.node_limit}, {"relative_gap", c.solver.relative_gap}};
  if (std::isfinite(c.solver.time_limit_s)) j["solver"]["time_limit_s"] = c.solver.time_limit_s;
  j["ro"] = {{"mode", c.ro_mode}, {"samples", c.ro_samples}};
  j["sweep"] = {{"k_values", c.sweep_k}};
  j["fixed_point"] = {{"eta", c.fp_eta}, {"max_outer", c.fp_max_outer}};
  return j;
}

/// Worker count, output location and timing do not change results and are
/// left out of the digest.
inline std::string config_digest(const RunConfig& c) { return hex_digest(effective_json(c).dump()); }

/// Parses and validates configuration text. Relative paths resolve against base_dir.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  using detail::json;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  detail::check_keys(root, "",
                     {"case", "model", "vre", "line_limits", "allow_negative_reactance", "cost_override", "scenarios",
                      "ambiguity", "solver", "ro", "sweep", "fixed_point", "output_dir", "report_timing"});
  static const std::map<std::string, std::set<std::string>> kSections{
      {"vre", {"placement", "buses", "forecast_mw", "count", "each_mw", "gamma"}},
      {"line_limits", {"mode", "default_mw"}},
      {"scenarios",
       {"zeta", "rho", "clip", "train_size", "train_seed", "test_size", "test_seed", "train_csv", "test_csv"}},
      {"ambiguity", {"k", "epsilon_target"}},
      {"solver", {"node_limit", "time_limit_s", "relative_gap", "workers"}},
      {"ro", {"mode", "samples"}},
      {"sweep", {"k_from", "k_to", "k_step", "k_values"}},
      {"fixed_point", {"eta", "max_outer"}}};
  for (const auto& [name, keys] : kSections)
    if (root.contains(name)) detail::check_keys(root[name], name, keys);

  detail::ConfigReader r(root);
  RunConfig c;
  auto resolve = [&](const std::string& p) {
    if (p.empty()) return p;
    std::filesystem::path path(p);
    return (path.is_absolute() || base_dir.empty() ? path : base_dir / path).lexically_normal().string();
  };

  c.case_path = resolve(r.string("case", ""));
  if (c.case_path.empty()) throw ConfigError("config key 'case' is required");
  c.model = r.string("model", "dc");
  if (c.model != "dc" && c.model != "ac") throw ConfigError("config key 'model': expected \"dc\" or \"ac\"");

  c.vre.placement = r.string("vre.placement", "explicit");
  c.vre.gamma = r.number("vre.gamma", 0.1);
  if (c.vre.placement == "explicit") {
    c.vre.buses = r.list<long>("vre.buses");
    c.vre.forecast_mw = r.list<double>("vre.forecast_mw");
    if (c.vre.buses.empty()) throw ConfigError("config key 'vre.buses': at least one VRE bus is required");
    if (c.vre.buses.size() != c.vre.forecast_mw.size())
      throw ConfigError("config key 'vre.forecast_mw': length differs from 'vre.buses'");
  } else if (c.vre.placement == "largest_load") {
    c.vre.count = static_cast<int>(r.integer("vre.count", 0));
    c.vre.each_mw = r.number("vre.each_mw", 0.0);
    if (c.vre.count < 1) throw ConfigError("config key 'vre.count': must be at least 1");
    if (!(c.vre.each_mw > 0)) throw ConfigError("config key 'vre.each_mw': must be positive");
  } else {
    throw ConfigError("config key 'vre.placement': expected \"explicit\" or \"largest_load\"");
  }

  c.line_limit_mode = r.string("line_limits.mode", "keep");
  if (c.line_limit_mode != "keep" && c.line_limit_mode != "thermal" && c.line_limit_mode != "default")
    throw ConfigError("config key 'line_limits.mode': expected \"keep\", \"thermal\" or \"default\"");
  c.default_line_mw = r.number("line_limits.default_mw", 0.0);
  if (c.line_limit_mode == "default" && !(c.default_line_mw > 0))
    throw ConfigError("config key 'line_limits.default_mw': must be positive in default mode");
  c.allow_negative_reactance = r.boolean("allow_negative_reactance", false);

  if (const json* ov = r.find("cost_override")) {
    if (!ov->is_array()) throw ConfigError("config key 'cost_override': expected an array");
    for (std::size_t i = 0; i < ov->size(); ++i) {
      const json& e = (*ov)[i];
      std::string key = fmt::format("cost_override[{}]", i);
      detail::check_keys(e, key, {"gen", "c0", "c1", "c2"});
      detail::ConfigReader er(e);
      CostOverride co;
      co.gen = static_cast<int>(er.integer("gen", 0));
      co.c0 = er.number("c0", 0.0);
      co.c1 = er.number("c1", 0.0);
      co.c2 = er.number("c2", 0.0);
      if (co.gen < 1) throw ConfigError(fmt::format("config key '{}.gen': must be a 1-based generator row", key));
      c.cost_overrides.push_back(co);
    }
  }

  auto& sc = c.scenarios;
  sc.zeta = r.number("scenarios.zeta", sc.zeta);
  sc.rho = r.number("scenarios.rho", sc.rho);
  sc.clip = r.boolean("scenarios.clip", sc.clip);
  sc.train_size = static_cast<int>(r.integer("scenarios.train_size", sc.train_size));
  sc.train_seed = r.seed("scenarios.train_seed", sc.train_seed);
  sc.test_size = static_cast<int>(r.integer("scenarios.test_size", sc.test_size));
  sc.test_seed = r.seed("scenarios.test_seed", sc.test_seed);
  sc.train_csv = resolve(r.string("scenarios.train_csv", ""));
  sc.test_csv = resolve(r.string("scenarios.test_csv", ""));
  if (!(sc.zeta > 0)) throw ConfigError("config key 'scenarios.zeta': must be positive");
  if (!(sc.rho >= 0 && sc.rho < 1)) throw ConfigError("config key 'scenarios.rho': must lie in [0, 1)");
  if (sc.train_size < 1) throw ConfigError("config key 'scenarios.train_size': must be at least 1");
  if (sc.test_size < 1) throw ConfigError("config key 'scenarios.test_size': must be at least 1");

  if (r.find("ambiguity.k")) c.k = static_cast<int>(r.integer("ambiguity.k", 0));
  c.epsilon_target = r.number("ambiguity.epsilon_target");
  if (c.k && c.epsilon_target) throw ConfigError("config keys 'ambiguity.k' and 'ambiguity.epsilon_target' are exclusive");
  if (c.epsilon_target && !(*c.epsilon_target > 0 && *c.epsilon_target < 1))
    throw ConfigError("config key 'ambiguity.epsilon_target': must lie in (0, 1)");

  c.solver.node_limit = r.integer("solver.node_limit", c.solver.node_limit);
  c.solver.time_limit_s = r.number("solver.time_limit_s", c.solver.time_limit_s);
  c.solver.relative_gap = r.number("solver.relative_gap", c.solver.relative_gap);
  c.solver.workers = static_cast<int>(r.integer("solver.workers", c.solver.workers));
  if (c.solver.node_limit < 1) throw ConfigError("config key 'solver.node_limit': must be at least 1");
  if (c.solver.workers < 1) throw ConfigError("config key 'solver.workers': must be at least 1");
  if (c.solver.relative_gap < 0) throw ConfigError("config key 'solver.relative_gap': must be nonnegative");

  c.ro_mode = r.string("ro.mode", c.ro_mode);
  c.ro_samples = static_cast<int>(r.integer("ro.samples", c.ro_samples));
  if (c.ro_mode != "training" && c.ro_mode != "large_sample")
    throw ConfigError("config key 'ro.mode': expected \"training\" or \"large_sample\"");
  if (c.ro_mode == "large_sample" && c.ro_samples < c.scenarios.train_size)
    throw ConfigError("config key 'ro.samples': must be at least the training size");

  if (r.find("sweep.k_values")) {
    c.sweep_k = r.list<int>("sweep.k_values");
    if (c.sweep_k.empty()) throw ConfigError("config key 'sweep.k_values': empty k list");
  } else if (r.find("sweep")) {
    long from = r.integer("sweep.k_from", 0), to = r.integer("sweep.k_to", 0), step = r.integer("sweep.k_step", 1);
    if (step < 1) throw ConfigError("config key 'sweep.k_step': must be at least 1");
    for (long k = from; k <= to; k += step) c.sweep_k.push_back(static_cast<int>(k));
    if (c.sweep_k.empty()) throw ConfigError("config key 'sweep': empty k list");
  }
  for (int k : c.sweep_k)
    if (k < 1 || k > sc.train_size)
      throw ConfigError(fmt::format("config key 'sweep': k = {} outside [1, {}]", k, sc.train_size));
  if (c.k && (*c.k < 1 || *c.k > sc.train_size))
    throw ConfigError(fmt::format("config key 'ambiguity.k': {} outside [1, {}]", *c.k, sc.train_size));

  c.fp_eta = r.number("fixed_point.eta", c.fp_eta);
  c.fp_max_outer = static_cast<int>(r.integer("fixed_point.max_outer", c.fp_max_outer));
  c.output_dir = resolve(r.string("output_dir", c.output_dir));
  c.report_timing = r.boolean("report_timing", c.report_timing);
  c.digest = config_digest(c);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Building the study inputs

inline NetworkCase load_network(const RunConfig& c) {
  if (!std::filesystem::exists(c.case_path)) throw ConfigError(fmt::format("case file '{}' does not exist", c.case_path));
  NetworkOptions opt;
  opt.allow_negative_reactance = c.allow_negative_reactance;
  opt.thermal_line_limits = c.line_limit_mode == "thermal";
  if (c.line_limit_mode == "default") opt.default_line_limit_mw = c.default_line_mw;
  opt.cost_overrides = c.cost_overrides;
  return to_network(load_matpower(c.case_path), opt);
}

/// Explicit bus list, or the `count` PQ buses with the largest demand (ties by bus order).
inline VreFleet fleet_from_config(const RunConfig& c, const NetworkCase& net) {
  if (c.vre.placement == "explicit") {
    for (long id : c.vre.buses)
      if (!net.index_of.count(id)) throw ConfigError(fmt::format("config key 'vre.buses': unknown bus {}", id));
    return build_fleet_mw(net, c.vre.buses, c.vre.forecast_mw, c.vre.gamma);
  }
  std::vector<int> order;
  for (int b = 0; b < net.n_bus(); ++b)
    if (net.buses[b].kind == BusKind::PQ) order.push_back(b);
  if (static_cast<int>(order.size()) < c.vre.count) throw ConfigError("config key 'vre.count': not enough PQ buses");
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return net.buses[a].pd > net.buses[b].pd; });
  order.resize(c.vre.count);
  std::sort(order.begin(), order.end());
  return build_fleet(net, order, Vector::Constant(c.vre.count, c.vre.each_mw / net.base_mva), c.vre.gamma);
}

inline GaussianSpec scenario_spec(const RunConfig& c, const VreFleet& fleet) {
  GaussianSpec spec;
  spec.forecast = fleet.forecast;
  spec.zeta = c.scenarios.zeta;
  spec.rho = c.scenarios.rho;
  spec.clip = c.scenarios.clip;
  return spec;
}

inline std::vector<std::string> vre_columns(const NetworkCase& net, const VreFleet& fleet) {
  std::vector<std::string> cols;
  for (int b : fleet.buses) cols.push_back(fmt::format("vre_{}", net.buses[b].id));
  return cols;
}

inline ScenarioSet training_set(const RunConfig& c, const NetworkCase& net, const VreFleet& fleet) {
  auto spec = scenario_spec(c, fleet);
  if (!c.scenarios.train_csv.empty()) return load_csv(c.scenarios.train_csv, &spec);
  auto set = sample(spec, c.scenarios.train_size, c.scenarios.train_seed, c.solver.workers);
  set.columns = vre_columns(net, fleet);
  return set;
}

inline ScenarioSet test_set(const RunConfig& c, const NetworkCase& net, const VreFleet& fleet) {
  auto spec = scenario_spec(c, fleet);
  if (!c.scenarios.test_csv.empty()) return load_csv(c.scenarios.test_csv, &spec);
  auto set = sample(spec, c.scenarios.test_size, c.scenarios.test_seed, c.solver.workers);
  set.columns = vre_columns(net, fleet);
  return set;
}

/// Scenarios for the robust baseline. The large-sample draw extends the
/// training stream, so its first rows are the training set.
inline ScenarioSet ro_set(const RunConfig& c, const NetworkCase& net, const VreFleet& fleet, const ScenarioSet& train) {
  if (c.ro_mode == "training" || !c.scenarios.train_csv.empty()) return train;
  auto spec = scenario_spec(c, fleet);
  auto set = sample(spec, c.ro_samples, c.scenarios.train_seed, c.solver.workers);
  set.columns = vre_columns(net, fleet);
  return set;
}

/// k from the config: explicit, or the smallest k whose epsilon* meets the target.
inline int resolve_k(const RunConfig& c, int s) {
  if (c.k) return *c.k;
  if (c.epsilon_target) {
    try {
      return min_k_for_target(*c.epsilon_target, s);
    } catch (const Error&) {
      throw ConfigError(fmt::format("config key 'ambiguity.epsilon_target': {} is not reachable with {} scenarios",
                                    *c.epsilon_target, s));
    }
  }
  throw ConfigError("config needs one of 'ambiguity.k' or 'ambiguity.epsilon_target'");
}

}  // namespace drcc
