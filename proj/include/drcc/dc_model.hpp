#pragma once

// PTDF-based DC network model, its closed-form response to forecast errors and
// the stacked chance-constraint rows shared with the AC model.

#include <drcc/case_io.hpp>
#include <drcc/qp.hpp>

#include <fmt/format.h>

#include <string>
#include <vector>

namespace drcc {

struct PtdfMatrix {
  Matrix phi;  // n_branch x n_bus
  int slack = 0;
};

/// Flow sensitivities from the reduced susceptance matrix. Branch susceptance
/// is 1/x; taps and phase shifts are ignored in the DC model.
inline PtdfMatrix build_ptdf(const NetworkCase& net) {
  const int n = net.n_bus(), L = net.n_branch(), s = net.slack;
  Matrix bbus = Matrix::Zero(n, n);
  Matrix bf = Matrix::Zero(L, n);
  for (int l = 0; l < L; ++l) {
    const auto& br = net.branches[l];
    if (br.x == 0) throw ModelError(fmt::format("branch {} has zero reactance", l));
    double b = 1.0 / br.x;
    bf(l, br.from) += b;
    bf(l, br.to) -= b;
    bbus(br.from, br.from) += b;
    bbus(br.to, br.to) += b;
    bbus(br.from, br.to) -= b;
    bbus(br.to, br.from) -= b;
  }
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (i != s) keep.push_back(i);
  const int r = n - 1;
  Matrix bred(r, r), bfred(L, r);
  for (int i = 0; i < r; ++i) {
    bfred.col(i) = bf.col(keep[i]);
    for (int j = 0; j < r; ++j) bred(i, j) = bbus(keep[i], keep[j]);
  }
  PtdfMatrix out;
  out.slack = s;
  out.phi = Matrix::Zero(L, n);
  if (r == 0) return out;
  Eigen::FullPivLU<Matrix> lu(bred);
  if (lu.rank() < r) throw ModelError("network is disconnected: reduced susceptance matrix is singular");
  // B_red is symmetric, so Phi_red' = B_red^-1 Bf_red'.
  Matrix phired_t = lu.solve(Matrix(bfred.transpose()));
  for (int i = 0; i < r; ++i) out.phi.col(keep[i]) = phired_t.row(i).transpose();
  return out;
}

struct DcResponse {
  Matrix m_matrix;   // n_bus x n_vre: injection change per unit of each error
  Matrix flow_sens;  // n_branch x n_vre
};

inline DcResponse dc_response(const NetworkCase& net, const VreFleet& fleet, const PtdfMatrix& ptdf) {
  DcResponse r;
  const int n = net.n_bus(), nv = fleet.size();
  r.m_matrix = Matrix::Zero(n, nv);
  for (int j = 0; j < nv; ++j) {
    r.m_matrix.col(j) = -fleet.omega_bus;
    r.m_matrix(fleet.buses[j], j) += 1.0;
  }
  r.flow_sens = ptdf.phi * r.m_matrix;
  return r;
}

/// Chance-constrained quantities q(x, xi) = T x + t + G xi <= rhs. The decision
/// vector x is model specific (generator outputs for DC, control deviations for AC).
struct CcSystem {
  Matrix T;
  Vector t;
  Matrix sens;  // G
  Vector rhs;
  std::vector<std::string> names;

  int rows() const { return static_cast<int>(rhs.size()); }
  Vector base(const Vector& x) const { return T * x + t; }
  /// Largest row excess at a scenario, <= 0 when every row holds.
  double violation(const Vector& x, const Vector& xi) const {
    Vector q = base(x) + sens * xi - rhs;
    double v = -kInf;
    for (int i = 0; i < rows(); ++i)
      if (std::isfinite(rhs[i])) v = std::max(v, q[i]);
    return v;
  }
};

/// Writes one row per constraint: name, base value, sensitivities, rhs.
inline std::string cc_system_csv(const CcSystem& cc, const Vector& x) {
  Vector base = cc.base(x);
  std::string out = "name,base";
  for (Eigen::Index j = 0; j < cc.sens.cols(); ++j) out += fmt::format(",d_xi{}", j);
  out += ",rhs\n";
  for (int i = 0; i < cc.rows(); ++i) {
    out += fmt::format("{},{:.17g}", cc.names[i], base[i]);
    for (Eigen::Index j = 0; j < cc.sens.cols(); ++j) out += fmt::format(",{:.17g}", cc.sens(i, j));
    out += fmt::format(",{:.17g}\n", cc.rhs[i]);
  }
  return out;
}

struct DcOptions {
  /// Keep finite bounds on the slack generator's chance-constrained rows.
  bool include_slack_rows = false;
};

/// Everything the DC dispatch problems share.
struct DcModel {
  const NetworkCase* net = nullptr;
  VreFleet fleet;
  PtdfMatrix ptdf;
  DcResponse response;
  Matrix gen_incidence;  // n_bus x n_gen
  Vector net_load;       // per bus: demand minus VRE forecast

  int n_gen() const { return net->n_gen(); }
  /// Branch flows for generator outputs p at zero forecast error.
  Vector flows(const Vector& p) const { return ptdf.phi * (gen_incidence * p - net_load); }
};

inline DcModel build_dc_model(const NetworkCase& net, const VreFleet& fleet) {
  DcModel m;
  m.net = &net;
  m.fleet = fleet;
  m.ptdf = build_ptdf(net);
  m.response = dc_response(net, fleet, m.ptdf);
  m.gen_incidence = Matrix::Zero(net.n_bus(), net.n_gen());
  for (int g = 0; g < net.n_gen(); ++g) m.gen_incidence(net.gens[g].bus, g) = 1.0;
  m.net_load = Vector::Zero(net.n_bus());
  for (int i = 0; i < net.n_bus(); ++i) m.net_load[i] = net.buses[i].pd;
  m.net_load -= vre_injection(net, fleet);
  return m;
}

/// Rows: generator upper, generator lower (negated), flow upper, flow lower
/// (negated). The slack generator's rows carry rhs = +inf unless requested.
inline CcSystem assemble_cc_system(const DcModel& m, const DcOptions& opt = {}) {
  const NetworkCase& net = *m.net;
  const int ng = net.n_gen(), L = net.n_branch(), nv = m.fleet.size();
  const int rows = 2 * ng + 2 * L;
  CcSystem cc;
  cc.T = Matrix::Zero(rows, ng);
  cc.t = Vector::Zero(rows);
  cc.sens = Matrix::Zero(rows, nv);
  cc.rhs = Vector::Zero(rows);
  cc.names.resize(rows);

  for (int g = 0; g < ng; ++g) {
    const auto& gen = net.gens[g];
    bool inert = gen.bus == net.slack && !opt.include_slack_rows;
    // Generator output under error xi: p_g - omega_g * sum(xi).
    cc.T(g, g) = 1;
    cc.sens.row(g).setConstant(-m.fleet.omega_gen[g]);
    cc.rhs[g] = inert ? kInf : gen.pmax;
    cc.names[g] = fmt::format("pg_max_{}", g + 1);
    cc.T(ng + g, g) = -1;
    cc.sens.row(ng + g).setConstant(m.fleet.omega_gen[g]);
    cc.rhs[ng + g] = inert ? kInf : -gen.pmin;
    cc.names[ng + g] = fmt::format("pg_min_{}", g + 1);
  }
  Matrix flow_t = m.ptdf.phi * m.gen_incidence;
  Vector flow_c = -m.ptdf.phi * m.net_load;
  for (int l = 0; l < L; ++l) {
    const auto& br = net.branches[l];
    int up = 2 * ng + l, dn = 2 * ng + L + l;
    cc.T.row(up) = flow_t.row(l);
    cc.t[up] = flow_c[l];
    cc.sens.row(up) = m.response.flow_sens.row(l);
    cc.rhs[up] = br.limit;
    cc.names[up] = fmt::format("flow_max_{}_{}", net.buses[br.from].id, net.buses[br.to].id);
    cc.T.row(dn) = -flow_t.row(l);
    cc.t[dn] = -flow_c[l];
    cc.sens.row(dn) = -m.response.flow_sens.row(l);
    cc.rhs[dn] = br.limit;
    cc.names[dn] = fmt::format("flow_min_{}_{}", net.buses[br.from].id, net.buses[br.to].id);
  }
  return cc;
}

/// Deterministic DC OPF as a QP in the generator outputs: convex cost,
/// power balance, generator limits, flow limits.
inline QpProblem dc_opf_qp(const DcModel& m) {
  const NetworkCase& net = *m.net;
  const int ng = net.n_gen(), L = net.n_branch();
  QpProblem qp;
  qp.H = Matrix::Zero(ng, ng);
  qp.g = Vector::Zero(ng);
  for (int g = 0; g < ng; ++g) {
    qp.H(g, g) = 2 * net.gens[g].c2;
    qp.g[g] = net.gens[g].c1;
    qp.c0 += net.gens[g].c0;
  }
  qp.E = Matrix::Ones(1, ng);
  qp.f = Vector::Constant(1, m.net_load.sum());

  std::vector<int> finite_lines;
  for (int l = 0; l < L; ++l)
    if (std::isfinite(net.branches[l].limit)) finite_lines.push_back(l);
  const int nl = static_cast<int>(finite_lines.size());
  qp.A = Matrix::Zero(2 * ng + 2 * nl, ng);
  qp.b = Vector::Zero(2 * ng + 2 * nl);
  for (int g = 0; g < ng; ++g) {
    qp.A(g, g) = 1;
    qp.b[g] = net.gens[g].pmax;
    qp.A(ng + g, g) = -1;
    qp.b[ng + g] = -net.gens[g].pmin;
  }
  Matrix flow_t = m.ptdf.phi * m.gen_incidence;
  Vector flow_c = -m.ptdf.phi * m.net_load;
  for (int i = 0; i < nl; ++i) {
    int l = finite_lines[i];
    qp.A.row(2 * ng + i) = flow_t.row(l);
    qp.b[2 * ng + i] = net.branches[l].limit - flow_c[l];
    qp.A.row(2 * ng + nl + i) = -flow_t.row(l);
    qp.b[2 * ng + nl + i] = net.branches[l].limit + flow_c[l];
  }
  return qp;
}

struct DcDispatch {
  QpStatus status = QpStatus::NumericalFailure;
  Vector p;  // per generator, p.u.
  double cost = kInf;
  Vector flows;
  std::string message;
};

inline DcDispatch solve_deterministic_dc(const DcModel& m) {
  const NetworkCase& net = *m.net;
  DcDispatch d;
  double load = m.net_load.sum(), pmin = 0, pmax = 0;
  for (const auto& g : net.gens) {
    pmin += g.pmin;
    pmax += g.pmax;
  }
  if (load > pmax + kFeasibilityTol) {
    d.status = QpStatus::Infeasible;
    d.message = fmt::format("net load {:.6g} MW exceeds total generator capacity {:.6g} MW",
                            load * net.base_mva, pmax * net.base_mva);
    return d;
  }
  if (load < pmin - kFeasibilityTol) {
    d.status = QpStatus::Infeasible;
    d.message = fmt::format("net load {:.6g} MW is below total minimum generation {:.6g} MW",
                            load * net.base_mva, pmin * net.base_mva);
    return d;
  }
  auto qp = dc_opf_qp(m);
  auto r = qp_solve(qp);
  d.status = r.status;
  d.message = r.message;
  if (r.status == QpStatus::Infeasible) {
    d.message = "flow limits cannot be met with the available generation";
    return d;
  }
  if (r.status != QpStatus::Optimal) return d;
  d.p = r.x;
  d.cost = r.value;
  d.flows = m.flows(r.x);
  return d;
}

/// Convenience overload for a network without VRE.
inline DcDispatch solve_deterministic_dc(const NetworkCase& net) {
  VreFleet empty;
  empty.forecast = Vector(0);
  empty.omega_bus = Vector::Zero(net.n_bus());
  empty.omega_gen = Vector::Zero(net.n_gen());
  return solve_deterministic_dc(build_dc_model(net, empty));
}

}  // namespace drcc
