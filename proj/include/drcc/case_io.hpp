#pragma once

// MATPOWER case ingestion: text -> RawCase -> per-unit NetworkCase, plus the
// VRE fleet overlay (forecast injections and AGC participation factors).

#include <drcc/common.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace drcc {

/// MATPOWER column indices (0-based) for the tables used here.
namespace col {
inline constexpr int kBusId = 0, kBusType = 1, kPd = 2, kQd = 3, kGs = 4, kBs = 5,
                     kVm = 7, kVa = 8, kBaseKv = 9, kVmax = 11, kVmin = 12;
inline constexpr int kGenBus = 0, kPg = 1, kQg = 2, kQmax = 3, kQmin = 4, kVg = 5,
                     kGenStatus = 7, kPmax = 8, kPmin = 9;
inline constexpr int kFrom = 0, kTo = 1, kR = 2, kX = 3, kB = 4, kRateA = 5, kTap = 8,
                     kShift = 9, kBrStatus = 10, kAngMin = 11, kAngMax = 12;
inline constexpr int kCostModel = 0, kNCost = 3, kCostCoef = 4;
}  // namespace col

inline constexpr int kMinBusCols = 13, kMinGenCols = 21, kMinBranchCols = 13, kMinGencostCols = 4;

/// Verbatim matrices of a MATPOWER v2 case.
struct RawCase {
  double base_mva = 100.0;
  Matrix bus, gen, branch, gencost;  // gencost may have zero rows
  std::vector<std::string> warnings;

  bool operator==(const RawCase& o) const {
    auto same = [](const Matrix& a, const Matrix& b) {
      return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
    };
    return base_mva == o.base_mva && same(bus, o.bus) && same(gen, o.gen) &&
           same(branch, o.branch) && same(gencost, o.gencost);
  }
};

namespace detail {

class CaseLexer {
 public:
  explicit CaseLexer(std::string_view text) : text_(text) {}

  int line() const { return line_; }
  bool done() {
    skip_space(true);
    return pos_ >= text_.size();
  }
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
  char get() {
    char c = text_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }

  /// Skips blanks and comments. Newlines are skipped only when asked.
  void skip_space(bool newlines) {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == '%') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else if (c == '\n' ? newlines : (c == ' ' || c == '\t' || c == '\r')) {
        get();
      } else if (c == '.' && text_.substr(pos_, 3) == "...") {
        // line continuation
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
        if (pos_ < text_.size()) get();
      } else {
        break;
      }
    }
  }

  std::string identifier() {
    std::string id;
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.') {
        id.push_back(c);
        ++pos_;
      } else {
        break;
      }
    }
    return id;
  }

  double number() {
    skip_space(false);
    const char* begin = text_.data() + pos_;
    // strtod needs a terminated buffer; copy the token.
    std::size_t end = pos_;
    while (end < text_.size() && !std::isspace(static_cast<unsigned char>(text_[end])) &&
           text_[end] != ';' && text_[end] != ',' && text_[end] != ']' && text_[end] != '%')
      ++end;
    std::string token(begin, text_.data() + end);
    if (token == "Inf" || token == "inf") token = "inf";
    if (token == "-Inf") token = "-inf";
    char* parsed_end = nullptr;
    double value = std::strtod(token.c_str(), &parsed_end);
    if (token.empty() || parsed_end != token.c_str() + token.size())
      throw ParseError(fmt::format("syntax error: invalid number '{}'", token), line_);
    pos_ = end;
    return value;
  }

  void skip_string() {
    get();  // opening quote
    while (pos_ < text_.size() && text_[pos_] != '\'' && text_[pos_] != '\n') ++pos_;
    if (peek() != '\'') throw ParseError("syntax error: unterminated string", line_);
    get();
  }

  void skip_cell() {
    int depth = 0;
    do {
      if (pos_ >= text_.size()) throw ParseError("syntax error: unterminated cell array", line_);
      char c = peek();
      if (c == '\'') {
        skip_string();
        continue;
      }
      if (c == '%') {
        skip_space(false);
        continue;
      }
      if (c == '{') ++depth;
      if (c == '}') --depth;
      get();
    } while (depth > 0);
  }

  void skip_to_eol() {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
  }

  Matrix matrix(const std::string& name) {
    get();  // '['
    std::vector<std::vector<double>> rows;
    std::vector<double> row;
    auto flush = [&] {
      if (row.empty()) return;
      if (!rows.empty() && row.size() != rows.front().size())
        throw ParseError(fmt::format("ragged matrix '{}': row has {} entries, expected {}", name,
                                     row.size(), rows.front().size()),
                         line_);
      rows.push_back(std::move(row));
      row.clear();
    };
    for (;;) {
      skip_space(false);
      char c = peek();
      if (c == '\0') throw ParseError(fmt::format("syntax error: unterminated matrix '{}'", name), line_);
      if (c == ']') {
        get();
        flush();
        break;
      }
      if (c == ';' || c == '\n') {
        get();
        flush();
      } else if (c == ',') {
        get();
      } else {
        row.push_back(number());
      }
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()),
             rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

inline void check_columns(const Matrix& m, int min_cols, const char* name) {
  if (m.rows() > 0 && m.cols() < min_cols)
    throw ParseError(fmt::format("matrix '{}' has {} columns, MATPOWER v2 requires at least {}",
                                 name, m.cols(), min_cols));
}

}  // namespace detail

/// Parses the baseMVA/bus/gen/branch/gencost subset of a MATPOWER case.
inline RawCase parse_matpower(std::string_view text) {
  detail::CaseLexer lex(text);
  RawCase raw;
  bool have_base = false, have_bus = false, have_gen = false, have_branch = false;

  while (!lex.done()) {
    int stmt_line = lex.line();
    std::string id = lex.identifier();
    if (id.empty())
      throw ParseError(fmt::format("syntax error: unexpected character '{}'", lex.peek()), stmt_line);
    if (id == "function") {
      lex.skip_to_eol();
      continue;
    }
    lex.skip_space(false);
    if (lex.peek() != '=') throw ParseError(fmt::format("syntax error: expected '=' after '{}'", id), stmt_line);
    lex.get();
    lex.skip_space(false);

    auto dot = id.find('.');
    std::string field = dot == std::string::npos ? id : id.substr(dot + 1);
    char c = lex.peek();
    if (c == '[') {
      Matrix m = lex.matrix(field);
      if (field == "bus") {
        raw.bus = std::move(m);
        have_bus = true;
      } else if (field == "gen") {
        raw.gen = std::move(m);
        have_gen = true;
      } else if (field == "branch") {
        raw.branch = std::move(m);
        have_branch = true;
      } else if (field == "gencost") {
        raw.gencost = std::move(m);
      } else {
        raw.warnings.push_back(fmt::format("ignored field '{}'", field));
      }
    } else if (c == '\'') {
      lex.skip_string();
      if (field != "version") raw.warnings.push_back(fmt::format("ignored field '{}'", field));
    } else if (c == '{') {
      lex.skip_cell();
      raw.warnings.push_back(fmt::format("ignored field '{}'", field));
    } else {
      double value = lex.number();
      if (field == "baseMVA") {
        raw.base_mva = value;
        have_base = true;
      } else {
        raw.warnings.push_back(fmt::format("ignored field '{}'", field));
      }
    }
    lex.skip_space(false);
    if (lex.peek() == ';') lex.get();
    lex.skip_space(false);
    if (lex.peek() != '\n' && lex.peek() != '\0')
      throw ParseError("syntax error: trailing characters after statement", lex.line());
  }

  if (!have_base) throw ParseError("missing mandatory matrix 'baseMVA'");
  if (!have_bus) throw ParseError("missing mandatory matrix 'bus'");
  if (!have_gen) throw ParseError("missing mandatory matrix 'gen'");
  if (!have_branch) throw ParseError("missing mandatory matrix 'branch'");

  detail::check_columns(raw.bus, kMinBusCols, "bus");
  detail::check_columns(raw.gen, kMinGenCols, "gen");
  detail::check_columns(raw.branch, kMinBranchCols, "branch");
  detail::check_columns(raw.gencost, kMinGencostCols, "gencost");
  for (Eigen::Index i = 0; i < raw.gencost.rows(); ++i) {
    int ncost = static_cast<int>(raw.gencost(i, col::kNCost));
    int needed = raw.gencost(i, col::kCostModel) == 1 ? col::kCostCoef + 2 * ncost : col::kCostCoef + ncost;
    if (raw.gencost.cols() < needed)
      throw ParseError(fmt::format("gencost row {} needs {} columns, has {}", i + 1, needed,
                                   raw.gencost.cols()));
  }

  std::unordered_map<long, int> ids;
  for (Eigen::Index i = 0; i < raw.bus.rows(); ++i) {
    long id = std::lround(raw.bus(i, col::kBusId));
    if (!ids.emplace(id, static_cast<int>(i)).second)
      throw ParseError(fmt::format("duplicate bus id {}", id));
  }
  auto check_ref = [&](double v, const char* what, Eigen::Index row) {
    if (!ids.count(std::lround(v)))
      throw ParseError(fmt::format("{} row {} references unknown bus {}", what, row + 1, v));
  };
  for (Eigen::Index i = 0; i < raw.gen.rows(); ++i) check_ref(raw.gen(i, col::kGenBus), "gen", i);
  for (Eigen::Index i = 0; i < raw.branch.rows(); ++i) {
    check_ref(raw.branch(i, col::kFrom), "branch", i);
    check_ref(raw.branch(i, col::kTo), "branch", i);
  }
  return raw;
}

inline RawCase load_matpower(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open case file '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_matpower(buf.str());
}

/// Writes the matrices back as MATPOWER text with full double precision.
inline std::string serialize_matpower(const RawCase& raw, std::string_view name = "mpc_case") {
  std::string out = fmt::format("function mpc = {}\nmpc.version = '2';\nmpc.baseMVA = {:.17g};\n",
                                name, raw.base_mva);
  auto emit = [&out](const char* field, const Matrix& m) {
    out += fmt::format("mpc.{} = [\n", field);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      out += '\t';
      for (Eigen::Index j = 0; j < m.cols(); ++j) out += fmt::format("{}{:.17g}", j ? "\t" : "", m(i, j));
      out += ";\n";
    }
    out += "];\n";
  };
  emit("bus", raw.bus);
  emit("gen", raw.gen);
  emit("branch", raw.branch);
  if (raw.gencost.rows() > 0) emit("gencost", raw.gencost);
  return out;
}

// ---------------------------------------------------------------------------

enum class BusKind { PQ, PV, Slack };

inline const char* to_string(BusKind k) {
  switch (k) {
    case BusKind::PQ: return "PQ";
    case BusKind::PV: return "PV";
    case BusKind::Slack: return "slack";
  }
  return "?";
}

struct Bus {
  long id = 0;  // external MATPOWER number
  BusKind kind = BusKind::PQ;
  double pd = 0, qd = 0;  // p.u.
  double gs = 0, bs = 0;  // p.u. shunt at v = 1
  double vm = 1, va = 0;  // initial magnitude, angle (rad)
  double vmin_sq = 0, vmax_sq = kInf;
  double base_kv = 0;
};

/// Conventional generator. Costs are per-unit: c1 in $/p.u., c2 in $/p.u.^2.
struct Generator {
  int bus = 0;
  double pg = 0, qg = 0;
  double pmin = 0, pmax = 0, qmin = 0, qmax = 0;
  double vg = 1;
  double c0 = 0, c1 = 0, c2 = 0;
  int source_row = 0;

  double cost(double p) const { return c0 + c1 * p + c2 * p * p; }
};

struct Branch {
  int from = 0, to = 0;
  double r = 0, x = 0, b = 0;
  double limit = kInf;  // active-flow limit (p.u.)
  double tap = 1, shift = 0;
  double angmin = -2 * std::numbers::pi, angmax = 2 * std::numbers::pi;
  int source_row = 0;
};

struct NetworkCase {
  double base_mva = 100;
  std::vector<Bus> buses;
  std::vector<Generator> gens;
  std::vector<Branch> branches;
  int slack = 0;
  std::unordered_map<long, int> index_of;  // external id -> internal index

  int n_bus() const { return static_cast<int>(buses.size()); }
  int n_gen() const { return static_cast<int>(gens.size()); }
  int n_branch() const { return static_cast<int>(branches.size()); }

  int bus_index(long external_id) const {
    auto it = index_of.find(external_id);
    if (it == index_of.end()) throw ModelError(fmt::format("unknown bus {}", external_id));
    return it->second;
  }
  std::vector<int> gens_at(int bus) const {
    std::vector<int> out;
    for (int g = 0; g < n_gen(); ++g)
      if (gens[g].bus == bus) out.push_back(g);
    return out;
  }
  double total_load() const {
    double s = 0;
    for (const auto& b : buses) s += b.pd;
    return s;
  }
};

/// Generator cost override in MATPOWER units ($, $/MW, $/MW^2). `gen` is the
/// 1-based row of the in-service generator.
struct CostOverride {
  int gen = 0;
  double c0 = 0, c1 = 0, c2 = 0;
};

struct NetworkOptions {
  /// Replacement for missing (zero) rateA, in MW. Unset keeps +inf.
  std::optional<double> default_line_limit_mw;
  /// Derive missing limits from voltage bounds and branch impedance instead.
  bool thermal_line_limits = false;
  /// Series-compensated branches (x < 0) are rejected unless enabled.
  bool allow_negative_reactance = false;
  std::vector<CostOverride> cost_overrides;
};

namespace detail {

/// Flow bound implied by the voltage limits and the angle-difference limit
/// (capped at 60 degrees when unbounded), as used by common OPF toolchains.
inline double thermal_limit(const Branch& br, const std::vector<Bus>& buses) {
  constexpr double kPad = 1.0472;
  double amin = br.angmin, amax = br.angmax;
  if (amin <= -std::numbers::pi / 2 || (amin == 0 && amax == 0)) amin = -kPad;
  if (amax >= std::numbers::pi / 2 || (amax == 0 && br.angmin == 0)) amax = kPad;
  double theta_max = std::max(std::abs(amin), std::abs(amax));
  double vf = std::sqrt(buses[br.from].vmax_sq), vt = std::sqrt(buses[br.to].vmax_sq);
  double y_mag = 1.0 / std::hypot(br.r, br.x);
  double c_max = std::sqrt(vf * vf + vt * vt - 2 * vf * vt * std::cos(theta_max));
  return y_mag * std::max(vf, vt) * c_max;
}

}  // namespace detail

/// Converts to per-unit, drops out-of-service elements, remaps bus ids.
inline NetworkCase to_network(const RawCase& raw, const NetworkOptions& opt = {}) {
  NetworkCase net;
  const double base = raw.base_mva;
  if (!(base > 0)) throw ModelError("baseMVA must be positive");
  net.base_mva = base;
  constexpr double kDeg = std::numbers::pi / 180.0;

  int slack_count = 0;
  for (Eigen::Index i = 0; i < raw.bus.rows(); ++i) {
    Bus b;
    b.id = std::lround(raw.bus(i, col::kBusId));
    int type = static_cast<int>(raw.bus(i, col::kBusType));
    switch (type) {
      case 1: b.kind = BusKind::PQ; break;
      case 2: b.kind = BusKind::PV; break;
      case 3:
        b.kind = BusKind::Slack;
        ++slack_count;
        net.slack = static_cast<int>(i);
        break;
      default: throw ModelError(fmt::format("bus {} has unsupported type {}", b.id, type));
    }
    b.pd = raw.bus(i, col::kPd) / base;
    b.qd = raw.bus(i, col::kQd) / base;
    b.gs = raw.bus(i, col::kGs) / base;
    b.bs = raw.bus(i, col::kBs) / base;
    b.vm = raw.bus(i, col::kVm);
    b.va = raw.bus(i, col::kVa) * kDeg;
    b.base_kv = raw.bus(i, col::kBaseKv);
    double vmax = raw.bus(i, col::kVmax), vmin = raw.bus(i, col::kVmin);
    b.vmax_sq = vmax * vmax;
    b.vmin_sq = vmin * vmin;
    net.index_of[b.id] = static_cast<int>(i);
    net.buses.push_back(b);
  }
  if (slack_count != 1)
    throw ModelError(fmt::format("expected exactly one slack bus, found {}", slack_count));

  int n_gen_rows = static_cast<int>(raw.gen.rows());
  if (raw.gencost.rows() > 0 && raw.gencost.rows() < n_gen_rows)
    throw ModelError("gencost has fewer rows than gen");
  for (int i = 0; i < n_gen_rows; ++i) {
    if (raw.gen(i, col::kGenStatus) <= 0) continue;
    Generator g;
    g.source_row = i;
    g.bus = net.bus_index(std::lround(raw.gen(i, col::kGenBus)));
    g.pg = raw.gen(i, col::kPg) / base;
    g.qg = raw.gen(i, col::kQg) / base;
    g.qmax = raw.gen(i, col::kQmax) / base;
    g.qmin = raw.gen(i, col::kQmin) / base;
    g.pmax = raw.gen(i, col::kPmax) / base;
    g.pmin = raw.gen(i, col::kPmin) / base;
    g.vg = raw.gen(i, col::kVg);
    if (g.pmin > g.pmax || g.qmin > g.qmax)
      throw ModelError(fmt::format("generator row {} has inverted limits", i + 1));
    if (raw.gencost.rows() > 0) {
      if (raw.gencost(i, col::kCostModel) != 2)
        throw ModelError(fmt::format("gencost row {}: only polynomial costs are supported", i + 1));
      int n = static_cast<int>(raw.gencost(i, col::kNCost));
      if (n > 3)
        throw ModelError(fmt::format("gencost row {}: polynomial degree {} exceeds 2", i + 1, n - 1));
      double c[3] = {0, 0, 0};  // c0, c1, c2 in MW units
      for (int d = 0; d < n; ++d) c[d] = raw.gencost(i, col::kCostCoef + (n - 1 - d));
      g.c0 = c[0];
      g.c1 = c[1] * base;
      g.c2 = c[2] * base * base;
    }
    net.gens.push_back(g);
  }
  for (const auto& ov : opt.cost_overrides) {
    if (ov.gen < 1 || ov.gen > net.n_gen())
      throw ModelError(fmt::format("cost override references generator {}", ov.gen));
    auto& g = net.gens[ov.gen - 1];
    g.c0 = ov.c0;
    g.c1 = ov.c1 * base;
    g.c2 = ov.c2 * base * base;
  }
  for (int i = 0; i < net.n_gen(); ++i)
    if (net.gens[i].c2 < 0)
      throw ModelError(fmt::format("generator {} has negative quadratic cost", i + 1));

  for (auto& b : net.buses)
    if (b.kind == BusKind::PV && net.gens_at(static_cast<int>(&b - net.buses.data())).empty())
      b.kind = BusKind::PQ;

  for (Eigen::Index i = 0; i < raw.branch.rows(); ++i) {
    if (raw.branch(i, col::kBrStatus) <= 0) continue;
    Branch br;
    br.source_row = static_cast<int>(i);
    br.from = net.bus_index(std::lround(raw.branch(i, col::kFrom)));
    br.to = net.bus_index(std::lround(raw.branch(i, col::kTo)));
    br.r = raw.branch(i, col::kR);
    br.x = raw.branch(i, col::kX);
    br.b = raw.branch(i, col::kB);
    if (br.x == 0 || (br.x < 0 && !opt.allow_negative_reactance))
      throw ModelError(fmt::format("branch row {} has nonpositive reactance {}", i + 1, br.x));
    double tap = raw.branch(i, col::kTap);
    br.tap = tap == 0 ? 1.0 : tap;
    br.shift = raw.branch(i, col::kShift) * kDeg;
    br.angmin = raw.branch(i, col::kAngMin) * kDeg;
    br.angmax = raw.branch(i, col::kAngMax) * kDeg;
    double rate = raw.branch(i, col::kRateA);
    if (rate > 0) {
      br.limit = rate / base;
    } else if (opt.thermal_line_limits) {
      br.limit = detail::thermal_limit(br, net.buses);
    } else if (opt.default_line_limit_mw) {
      br.limit = *opt.default_line_limit_mw / base;
    }
    net.branches.push_back(br);
  }
  return net;
}

// ---------------------------------------------------------------------------

/// VRE units and the AGC participation that compensates their forecast error.
struct VreFleet {
  std::vector<int> buses;  // internal bus index per VRE unit
  Vector forecast;         // p.u.
  double gamma = 0;        // reactive / active ratio of the forecast error
  Vector omega_bus;        // per bus, sums to one
  Vector omega_gen;        // per generator, sums to one

  int size() const { return static_cast<int>(buses.size()); }
};

/// Participation proportional to generator capacity.
inline VreFleet build_fleet(const NetworkCase& net, std::vector<int> vre_buses,
                            const Vector& forecasts, double gamma) {
  if (static_cast<Eigen::Index>(vre_buses.size()) != forecasts.size())
    throw ModelError("VRE bus list and forecast vector differ in length");
  for (int b : vre_buses)
    if (b < 0 || b >= net.n_bus()) throw ModelError(fmt::format("VRE bus index {} out of range", b));
  if ((forecasts.array() <= 0).any()) throw ModelError("VRE forecasts must be positive");

  VreFleet fleet;
  fleet.buses = std::move(vre_buses);
  fleet.forecast = forecasts;
  fleet.gamma = gamma;
  fleet.omega_gen = Vector::Zero(net.n_gen());
  fleet.omega_bus = Vector::Zero(net.n_bus());
  double total = 0;
  for (const auto& g : net.gens) total += std::max(g.pmax, 0.0);
  if (!(total > 0)) throw ModelError("no conventional generator with positive capacity");
  for (int g = 0; g < net.n_gen(); ++g) {
    fleet.omega_gen[g] = std::max(net.gens[g].pmax, 0.0) / total;
    fleet.omega_bus[net.gens[g].bus] += fleet.omega_gen[g];
  }
  return fleet;
}

/// Convenience overload taking external bus ids and MW forecasts.
inline VreFleet build_fleet_mw(const NetworkCase& net, const std::vector<long>& external_buses,
                               const std::vector<double>& forecasts_mw, double gamma) {
  std::vector<int> idx;
  Vector p(static_cast<Eigen::Index>(forecasts_mw.size()));
  for (long id : external_buses) idx.push_back(net.bus_index(id));
  for (std::size_t i = 0; i < forecasts_mw.size(); ++i) p[i] = forecasts_mw[i] / net.base_mva;
  return build_fleet(net, std::move(idx), p, gamma);
}

/// Net injection of the VRE forecasts per bus.
inline Vector vre_injection(const NetworkCase& net, const VreFleet& fleet) {
  Vector p = Vector::Zero(net.n_bus());
  for (int i = 0; i < fleet.size(); ++i) p[fleet.buses[i]] += fleet.forecast[i];
  return p;
}

}  // namespace drcc
