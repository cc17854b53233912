#pragma once

// AC power flow in polar form, the quadratic-form residuals in rectangular
// voltages, the implicit response of an operating point to forecast errors,
// and the fixed-point chance-constrained AC dispatch.

#include <drcc/case_io.hpp>
#include <drcc/dc_model.hpp>
#include <drcc/selection.hpp>

#include <Eigen/Sparse>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <optional>
#include <queue>
#include <string>
#include <vector>

namespace drcc {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using SparseMatrix = Eigen::SparseMatrix<double>;

struct Admittance {
  CMatrix ybus;    // n x n
  CMatrix yf, yt;  // L x n: current leaving the from / to end of each branch
};

/// Pi-model branches with off-nominal tap and phase shift, plus bus shunts.
inline Admittance build_admittance(const NetworkCase& net) {
  const int n = net.n_bus(), L = net.n_branch();
  Admittance y;
  y.ybus = CMatrix::Zero(n, n);
  y.yf = CMatrix::Zero(L, n);
  y.yt = CMatrix::Zero(L, n);
  for (int l = 0; l < L; ++l) {
    const auto& br = net.branches[l];
    Complex ys = 1.0 / Complex(br.r, br.x);
    Complex tap = std::polar(br.tap, br.shift);
    Complex ytt = ys + Complex(0, br.b / 2);
    Complex yff = ytt / (br.tap * br.tap);
    Complex yft = -ys / std::conj(tap);
    Complex ytf = -ys / tap;
    y.yf(l, br.from) += yff;
    y.yf(l, br.to) += yft;
    y.yt(l, br.from) += ytf;
    y.yt(l, br.to) += ytt;
    y.ybus(br.from, br.from) += yff;
    y.ybus(br.from, br.to) += yft;
    y.ybus(br.to, br.from) += ytf;
    y.ybus(br.to, br.to) += ytt;
  }
  for (int i = 0; i < n; ++i) y.ybus(i, i) += Complex(net.buses[i].gs, net.buses[i].bs);
  return y;
}

/// Operating point w = (P, Q, v, theta, l): net injections, squared voltage
/// magnitudes, angles and directed active branch flows (from ends, then to ends).
struct AcState {
  Vector p, q, v, theta, ell;
  bool solved = false;
  double mismatch = kInf;
  int iterations = 0;
  std::string message;

  CVector voltage() const {
    CVector V(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) V[i] = std::polar(std::sqrt(v[i]), theta[i]);
    return V;
  }
  Vector w() const {
    Vector out(p.size() * 4 + ell.size());
    out << p, q, v, theta, ell;
    return out;
  }
};

struct AcModel {
  const NetworkCase* net = nullptr;
  Admittance y;
  int slack = 0;
  std::vector<int> pv, pq, non_slack;

  int n() const { return net->n_bus(); }
  int n_flow() const { return 2 * net->n_branch(); }
  int w_size() const { return 4 * n() + n_flow(); }
  // Offsets of the blocks of w.
  int off_q() const { return n(); }
  int off_v() const { return 2 * n(); }
  int off_theta() const { return 3 * n(); }
  int off_ell() const { return 4 * n(); }
};

inline AcModel build_ac_model(const NetworkCase& net) {
  const int n = net.n_bus();
  std::vector<std::vector<int>> adj(n);
  for (const auto& br : net.branches) {
    adj[br.from].push_back(br.to);
    adj[br.to].push_back(br.from);
  }
  std::vector<bool> seen(n, false);
  std::queue<int> todo;
  todo.push(net.slack);
  seen[net.slack] = true;
  int reached = 1;
  while (!todo.empty()) {
    int b = todo.front();
    todo.pop();
    for (int o : adj[b])
      if (!seen[o]) {
        seen[o] = true;
        ++reached;
        todo.push(o);
      }
  }
  if (reached != n) throw ModelError("network is disconnected");

  AcModel m;
  m.net = &net;
  m.y = build_admittance(net);
  m.slack = net.slack;
  for (int i = 0; i < n; ++i) {
    if (i == net.slack) continue;
    m.non_slack.push_back(i);
    (net.buses[i].kind == BusKind::PV ? m.pv : m.pq).push_back(i);
  }
  return m;
}

/// Full state from polar voltages.
inline AcState evaluate_state(const AcModel& m, const Vector& vm, const Vector& theta) {
  const int n = m.n(), L = m.net->n_branch();
  CVector V(n);
  for (int i = 0; i < n; ++i) V[i] = std::polar(vm[i], theta[i]);
  CVector S = V.cwiseProduct((m.y.ybus * V).conjugate());
  CVector If = m.y.yf * V, It = m.y.yt * V;
  AcState s;
  s.p = S.real();
  s.q = S.imag();
  s.v = vm.cwiseProduct(vm);
  s.theta = theta;
  s.ell.resize(2 * L);
  for (int l = 0; l < L; ++l) {
    const auto& br = m.net->branches[l];
    s.ell[l] = (V[br.from] * std::conj(If[l])).real();
    s.ell[L + l] = (V[br.to] * std::conj(It[l])).real();
  }
  return s;
}

namespace detail {

struct PowerDerivatives {
  CMatrix ds_dvm, ds_dva;  // bus injections
  CMatrix df_dvm, df_dva;  // from-end branch power
  CMatrix dt_dvm, dt_dva;  // to-end branch power
};

/// Partial derivatives of complex power with respect to voltage magnitude and angle.
inline PowerDerivatives power_derivatives(const AcModel& m, const CVector& V, bool branches) {
  const int n = m.n(), L = m.net->n_branch();
  const Complex j(0, 1);
  CVector vnorm = V.array() / V.array().abs();
  CVector ibus = m.y.ybus * V;
  PowerDerivatives d;
  d.ds_dvm = V.asDiagonal() * (m.y.ybus * vnorm.asDiagonal()).conjugate();
  d.ds_dvm.diagonal() += ibus.conjugate().cwiseProduct(vnorm);
  CMatrix t = -(m.y.ybus * V.asDiagonal());
  t.diagonal() += ibus;
  d.ds_dva = j * V.asDiagonal() * t.conjugate();
  if (!branches) return d;
  CVector If = m.y.yf * V, It = m.y.yt * V;
  d.df_dvm = CMatrix::Zero(L, n);
  d.df_dva = CMatrix::Zero(L, n);
  d.dt_dvm = CMatrix::Zero(L, n);
  d.dt_dva = CMatrix::Zero(L, n);
  for (int l = 0; l < L; ++l) {
    int f = m.net->branches[l].from, to = m.net->branches[l].to;
    for (int k = 0; k < n; ++k) {
      d.df_dvm(l, k) = V[f] * std::conj(m.y.yf(l, k) * vnorm[k]);
      d.df_dva(l, k) = -j * V[f] * std::conj(m.y.yf(l, k) * V[k]);
      d.dt_dvm(l, k) = V[to] * std::conj(m.y.yt(l, k) * vnorm[k]);
      d.dt_dva(l, k) = -j * V[to] * std::conj(m.y.yt(l, k) * V[k]);
    }
    d.df_dvm(l, f) += std::conj(If[l]) * vnorm[f];
    d.df_dva(l, f) += j * V[f] * std::conj(If[l]);
    d.dt_dvm(l, to) += std::conj(It[l]) * vnorm[to];
    d.dt_dva(l, to) += j * V[to] * std::conj(It[l]);
  }
  return d;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Power flow

/// Specified quantities: net active injection at non-slack buses, net reactive
/// injection at PQ buses, voltage magnitude at PV and slack buses.
struct PfSpec {
  Vector p, q, vm;
};

struct PfOptions {
  double tol = 1e-10;
  int max_iterations = 30;
  int max_halvings = 5;
};

/// Newton-Raphson on the polar mismatch equations. Starts flat unless a start
/// state is supplied.
inline AcState pf_solve(const AcModel& m, const PfSpec& spec, const AcState* start = nullptr,
                        const PfOptions& opt = {}) {
  const int n = m.n();
  const int ns = static_cast<int>(m.non_slack.size()), npq = static_cast<int>(m.pq.size());
  Vector vm = Vector::Ones(n), th = Vector::Zero(n);
  if (start) {
    vm = start->v.cwiseSqrt();
    th = start->theta;
  }
  for (int b : m.pv) vm[b] = spec.vm[b];
  vm[m.slack] = spec.vm[m.slack];
  th[m.slack] = 0;

  auto mismatch = [&](const Vector& a, const Vector& t) {
    CVector V(n);
    for (int i = 0; i < n; ++i) V[i] = std::polar(a[i], t[i]);
    CVector S = V.cwiseProduct((m.y.ybus * V).conjugate());
    Vector F(ns + npq);
    for (int i = 0; i < ns; ++i) F[i] = S[m.non_slack[i]].real() - spec.p[m.non_slack[i]];
    for (int i = 0; i < npq; ++i) F[ns + i] = S[m.pq[i]].imag() - spec.q[m.pq[i]];
    return F;
  };
  auto apply = [&](Vector& a, Vector& t, const Vector& dx, double alpha) {
    for (int i = 0; i < ns; ++i) t[m.non_slack[i]] += alpha * dx[i];
    for (int i = 0; i < npq; ++i) a[m.pq[i]] += alpha * dx[ns + i];
  };

  AcState out;
  Vector F = mismatch(vm, th);
  double norm = F.size() ? F.lpNorm<Eigen::Infinity>() : 0.0;
  int it = 0;
  bool polished = false;
  for (;;) {
    if (!std::isfinite(norm)) {
      out.message = "power flow diverged";
      break;
    }
    if (norm <= opt.tol) {
      // One extra step pushes the mismatch to round-off so that differences
      // of nearby solutions are smooth; kept only if it helps.
      if (polished || norm <= 1e-13 || it >= opt.max_iterations) break;
      polished = true;
    } else if (it >= opt.max_iterations) {
      out.message = fmt::format("power flow did not converge in {} iterations, mismatch {:.3e}", it, norm);
      break;
    }
    CVector V(n);
    for (int i = 0; i < n; ++i) V[i] = std::polar(vm[i], th[i]);
    auto d = detail::power_derivatives(m, V, false);
    Matrix J(ns + npq, ns + npq);
    for (int r = 0; r < ns; ++r) {
      for (int c = 0; c < ns; ++c) J(r, c) = d.ds_dva(m.non_slack[r], m.non_slack[c]).real();
      for (int c = 0; c < npq; ++c) J(r, ns + c) = d.ds_dvm(m.non_slack[r], m.pq[c]).real();
    }
    for (int r = 0; r < npq; ++r) {
      for (int c = 0; c < ns; ++c) J(ns + r, c) = d.ds_dva(m.pq[r], m.non_slack[c]).imag();
      for (int c = 0; c < npq; ++c) J(ns + r, ns + c) = d.ds_dvm(m.pq[r], m.pq[c]).imag();
    }
    Eigen::PartialPivLU<Matrix> lu(J);
    Vector dx = -lu.solve(F);
    if (!dx.allFinite() || (J * dx + F).lpNorm<Eigen::Infinity>() > 1e-6 * (1 + norm) || lu.rcond() < 1e-14) {
      out.message = fmt::format("singular power-flow Jacobian, mismatch {:.3e}", norm);
      break;
    }
    ++it;
    double alpha = 1;
    Vector a = vm, t = th, Ft;
    double nt = kInf;
    for (int h = 0; h <= opt.max_halvings; ++h, alpha /= 2) {
      a = vm;
      t = th;
      apply(a, t, dx, alpha);
      Ft = mismatch(a, t);
      nt = Ft.lpNorm<Eigen::Infinity>();
      if (nt <= norm) break;
    }
    if (polished && !(nt < norm)) break;
    vm = a;
    th = t;
    F = Ft;
    norm = nt;
  }
  AcState s = evaluate_state(m, vm, th);
  s.iterations = it;
  s.mismatch = norm;
  s.solved = std::isfinite(norm) && norm <= opt.tol && (vm.array() > 0).all();
  s.message = s.solved ? "" : (out.message.empty() ? "power flow failed" : out.message);
  return s;
}

/// Specification that reproduces a solved state.
inline PfSpec spec_of(const AcModel& m, const AcState& s) {
  PfSpec spec;
  spec.p = s.p;
  spec.q = s.q;
  spec.vm = s.v.cwiseSqrt();
  (void)m;
  return spec;
}

// ---------------------------------------------------------------------------
// Quadratic forms in X = (Re V, Im V)

struct QuadraticFormModel {
  std::vector<SparseMatrix> y, ybar, mk;  // per bus: P, Q and v
  std::vector<SparseMatrix> y_flow;       // per directed branch: active flow
};

namespace detail {

/// Real symmetric forms for Re and Im of V_k conj(sum_m a_m V_m).
inline void add_row_forms(int k, const std::vector<std::pair<int, Complex>>& row, int n,
                          std::vector<Eigen::Triplet<double>>& re, std::vector<Eigen::Triplet<double>>& im) {
  for (auto [mm, coef] : row) {
    double a = coef.real(), b = coef.imag();
    int xk = k, yk = n + k, xm = mm, ym = n + mm;
    auto sym = [](std::vector<Eigen::Triplet<double>>& t, int r, int c, double v) {
      t.emplace_back(r, c, v / 2);
      t.emplace_back(c, r, v / 2);
    };
    sym(re, xk, xm, a);
    sym(re, yk, ym, a);
    sym(re, yk, xm, b);
    sym(re, xk, ym, -b);
    sym(im, yk, xm, a);
    sym(im, xk, ym, -a);
    sym(im, xk, xm, -b);
    sym(im, yk, ym, -b);
  }
}

inline SparseMatrix from_triplets(int dim, const std::vector<Eigen::Triplet<double>>& t) {
  SparseMatrix s(dim, dim);
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

}  // namespace detail

inline QuadraticFormModel build_quadratic_forms(const AcModel& m) {
  const int n = m.n(), L = m.net->n_branch(), dim = 2 * n;
  QuadraticFormModel qf;
  for (int k = 0; k < n; ++k) {
    std::vector<std::pair<int, Complex>> row;
    for (int j = 0; j < n; ++j)
      if (m.y.ybus(k, j) != Complex(0, 0)) row.emplace_back(j, m.y.ybus(k, j));
    std::vector<Eigen::Triplet<double>> re, im, mk{{k, k, 1.0}, {n + k, n + k, 1.0}};
    detail::add_row_forms(k, row, n, re, im);
    qf.y.push_back(detail::from_triplets(dim, re));
    qf.ybar.push_back(detail::from_triplets(dim, im));
    qf.mk.push_back(detail::from_triplets(dim, mk));
  }
  qf.y_flow.resize(2 * L);
  for (int side = 0; side < 2; ++side)
    for (int l = 0; l < L; ++l) {
      const CMatrix& yb = side == 0 ? m.y.yf : m.y.yt;
      int k = side == 0 ? m.net->branches[l].from : m.net->branches[l].to;
      std::vector<std::pair<int, Complex>> row;
      for (int j = 0; j < n; ++j)
        if (yb(l, j) != Complex(0, 0)) row.emplace_back(j, yb(l, j));
      std::vector<Eigen::Triplet<double>> re, im;
      detail::add_row_forms(k, row, n, re, im);
      qf.y_flow[side * L + l] = detail::from_triplets(dim, re);
    }
  return qf;
}

inline Vector rectangular(const AcState& s) {
  CVector V = s.voltage();
  Vector X(2 * V.size());
  X << V.real(), V.imag();
  return X;
}

/// Residual blocks P - X'Y_k X, Q - X'Ybar_k X, v - X'M_k X and l - X'Y_l X.
inline Vector quadratic_residuals(const QuadraticFormModel& qf, const AcState& s) {
  const Vector X = rectangular(s);
  const auto n = static_cast<Eigen::Index>(qf.y.size());
  const auto nf = static_cast<Eigen::Index>(qf.y_flow.size());
  Vector r(3 * n + nf);
  for (Eigen::Index k = 0; k < n; ++k) {
    r[k] = s.p[k] - X.dot(qf.y[k] * X);
    r[n + k] = s.q[k] - X.dot(qf.ybar[k] * X);
    r[2 * n + k] = s.v[k] - X.dot(qf.mk[k] * X);
  }
  for (Eigen::Index l = 0; l < nf; ++l) r[3 * n + l] = s.ell[l] - X.dot(qf.y_flow[l] * X);
  return r;
}

// ---------------------------------------------------------------------------
// Response to forecast errors

/// Perturbed specification: active injections shifted by the error and the
/// AGC redispatch, reactive injections by gamma * xi at PQ buses.
inline PfSpec perturbed_spec(const AcModel& m, const VreFleet& fleet, const AcState& s, const Vector& xi) {
  PfSpec spec = spec_of(m, s);
  const double total = xi.sum();
  for (int b : m.non_slack) spec.p[b] -= fleet.omega_bus[b] * total;
  for (int i = 0; i < fleet.size(); ++i) {
    int b = fleet.buses[i];
    spec.p[b] += xi[i];
    if (m.net->buses[b].kind == BusKind::PQ) spec.q[b] += fleet.gamma * xi[i];
  }
  return spec;
}

/// Operating point after the forecast error xi, by Newton from the unperturbed state.
inline AcState respond(const AcModel& m, const VreFleet& fleet, const AcState& s, const Vector& xi,
                       const PfOptions& opt = {}) {
  return pf_solve(m, perturbed_spec(m, fleet, s, xi), &s, opt);
}

/// d Psi / d w for the stacked system: power flow (P, Q, l rows) followed by
/// the specification rows (active or slack angle, reactive or voltage).
inline Matrix psi_w(const AcModel& m, const AcState& s) {
  const int n = m.n(), nf = m.n_flow(), L = nf / 2, N = m.w_size();
  CVector V = s.voltage();
  auto d = detail::power_derivatives(m, V, true);
  Vector vm = s.v.cwiseSqrt();
  Matrix J = Matrix::Zero(N, N);
  // dS/dv = dS/d|V| / (2|V|)
  for (int k = 0; k < n; ++k) {
    J(k, k) = 1;
    J(n + k, m.off_q() + k) = 1;
    for (int c = 0; c < n; ++c) {
      J(k, m.off_v() + c) = -d.ds_dvm(k, c).real() / (2 * vm[c]);
      J(k, m.off_theta() + c) = -d.ds_dva(k, c).real();
      J(n + k, m.off_v() + c) = -d.ds_dvm(k, c).imag() / (2 * vm[c]);
      J(n + k, m.off_theta() + c) = -d.ds_dva(k, c).imag();
    }
  }
  for (int l = 0; l < nf; ++l) {
    int r = 2 * n + l;
    J(r, m.off_ell() + l) = 1;
    const CMatrix& dvm = l < L ? d.df_dvm : d.dt_dvm;
    const CMatrix& dva = l < L ? d.df_dva : d.dt_dva;
    int row = l < L ? l : l - L;
    for (int c = 0; c < n; ++c) {
      J(r, m.off_v() + c) = -dvm(row, c).real() / (2 * vm[c]);
      J(r, m.off_theta() + c) = -dva(row, c).real();
    }
  }
  const int spec0 = 2 * n + nf;
  for (int k = 0; k < n; ++k) {
    if (k == m.slack)
      J(spec0 + k, m.off_theta() + k) = 1;
    else
      J(spec0 + k, k) = 1;
    if (m.net->buses[k].kind == BusKind::PQ)
      J(spec0 + n + k, m.off_q() + k) = 1;
    else
      J(spec0 + n + k, m.off_v() + k) = 1;
  }
  return J;
}

/// d Psi / d xi: only the specification rows depend on the error.
inline Matrix psi_xi(const AcModel& m, const VreFleet& fleet) {
  const int n = m.n(), N = m.w_size(), spec0 = 2 * n + m.n_flow();
  Matrix D = Matrix::Zero(N, fleet.size());
  for (int j = 0; j < fleet.size(); ++j) {
    for (int k : m.non_slack) D(spec0 + k, j) = fleet.omega_bus[k];
    int b = fleet.buses[j];
    if (b != m.slack) D(spec0 + b, j) -= 1;
    if (m.net->buses[b].kind == BusKind::PQ) D(spec0 + n + b, j) = -fleet.gamma;
  }
  return D;
}

// ---------------------------------------------------------------------------
// Controls and chance-constrained rows

/// Dispatch controls u = (generator outputs except the slack absorber, squared
/// voltage magnitudes at PV and slack buses).
struct ControlLayout {
  std::vector<int> gens;  // generator indices
  std::vector<int> vbus;  // bus indices
  int absorber = -1;      // generator balancing the slack bus

  int size() const { return static_cast<int>(gens.size() + vbus.size()); }
};

inline ControlLayout control_layout(const AcModel& m) {
  const NetworkCase& net = *m.net;
  ControlLayout c;
  for (int g = 0; g < net.n_gen(); ++g) {
    if (net.gens[g].bus == m.slack && c.absorber < 0)
      c.absorber = g;
    else
      c.gens.push_back(g);
  }
  if (c.absorber < 0) throw ModelError("slack bus has no generator");
  for (int b = 0; b < net.n_bus(); ++b)
    if (b == m.slack || net.buses[b].kind == BusKind::PV) c.vbus.push_back(b);
  return c;
}

/// Controls from the case data, clamped into their limits.
inline Vector initial_controls(const AcModel& m, const ControlLayout& c) {
  const NetworkCase& net = *m.net;
  Vector u(c.size());
  for (std::size_t i = 0; i < c.gens.size(); ++i) {
    const auto& g = net.gens[c.gens[i]];
    u[i] = std::clamp(g.pg, g.pmin, g.pmax);
  }
  for (std::size_t i = 0; i < c.vbus.size(); ++i) {
    int b = c.vbus[i];
    double vg = net.buses[b].vm;
    for (const auto& g : net.gens)
      if (g.bus == b) {
        vg = g.vg;
        break;
      }
    u[c.gens.size() + i] = std::clamp(vg * vg, net.buses[b].vmin_sq, net.buses[b].vmax_sq);
  }
  return u;
}

/// Power-flow specification at zero forecast error for controls u.
inline PfSpec spec_from_controls(const AcModel& m, const VreFleet& fleet, const ControlLayout& c, const Vector& u) {
  const NetworkCase& net = *m.net;
  const int n = m.n();
  PfSpec spec;
  spec.p = Vector::Zero(n);
  spec.q = Vector::Zero(n);
  spec.vm = Vector::Ones(n);
  for (int b = 0; b < n; ++b) {
    spec.p[b] = -net.buses[b].pd;
    spec.q[b] = -net.buses[b].qd;
  }
  spec.p += vre_injection(net, fleet);
  for (std::size_t i = 0; i < c.gens.size(); ++i) spec.p[net.gens[c.gens[i]].bus] += u[i];
  for (const auto& g : net.gens)
    if (net.buses[g.bus].kind == BusKind::PQ) spec.q[g.bus] += g.qg;
  for (std::size_t i = 0; i < c.vbus.size(); ++i) spec.vm[c.vbus[i]] = std::sqrt(u[c.gens.size() + i]);
  return spec;
}

/// d Psi / d u for the specification rows.
inline Matrix psi_u(const AcModel& m, const ControlLayout& c) {
  const int n = m.n(), spec0 = 2 * n + m.n_flow();
  Matrix D = Matrix::Zero(m.w_size(), c.size());
  for (std::size_t i = 0; i < c.gens.size(); ++i) {
    int b = m.net->gens[c.gens[i]].bus;
    if (b != m.slack) D(spec0 + b, static_cast<Eigen::Index>(i)) = -1;
  }
  for (std::size_t i = 0; i < c.vbus.size(); ++i)
    D(spec0 + n + c.vbus[i], static_cast<Eigen::Index>(c.gens.size() + i)) = -1;
  return D;
}

/// Chance-constrained quantities q = C w + U u + D xi + c <= rhs: generator
/// active outputs (AGC response), generator-bus reactive outputs, squared
/// voltage magnitudes and directed active flows.
struct AcCcRows {
  Matrix C, U, D;
  Vector c, rhs;
  std::vector<std::string> names;

  int rows() const { return static_cast<int>(rhs.size()); }
  Vector value(const AcState& s, const Vector& u, const Vector& xi) const { return C * s.w() + U * u + D * xi + c; }
};

inline AcCcRows build_ac_rows(const AcModel& m, const VreFleet& fleet, const ControlLayout& ctl) {
  const NetworkCase& net = *m.net;
  const int n = m.n(), L = net.n_branch(), N = m.w_size(), nv = fleet.size(), nu = ctl.size();
  struct Row {
    Eigen::RowVectorXd c, u, d;
    double c0, rhs;
    std::string name;
  };
  std::vector<Row> rows;
  auto add = [&](std::string name, double rhs) -> Row& {
    rows.push_back({Eigen::RowVectorXd::Zero(N), Eigen::RowVectorXd::Zero(nu), Eigen::RowVectorXd::Zero(nv), 0, rhs,
                    std::move(name)});
    return rows.back();
  };
  for (std::size_t i = 0; i < ctl.gens.size(); ++i) {
    int g = ctl.gens[i];
    double om = fleet.omega_gen[g];
    auto& up = add(fmt::format("pg_max_{}", g + 1), net.gens[g].pmax);
    up.u[static_cast<Eigen::Index>(i)] = 1;
    up.d.setConstant(-om);
    auto& dn = add(fmt::format("pg_min_{}", g + 1), -net.gens[g].pmin);
    dn.u[static_cast<Eigen::Index>(i)] = -1;
    dn.d.setConstant(om);
  }
  for (int b = 0; b < n; ++b) {
    auto gens = net.gens_at(b);
    if (gens.empty()) continue;
    double qmax = 0, qmin = 0;
    for (int g : gens) {
      qmax += net.gens[g].qmax;
      qmin += net.gens[g].qmin;
    }
    // Q_G = Q + Qd - gamma * xi at the bus; PQ-bus units keep their fixed qg.
    Eigen::RowVectorXd vre = Eigen::RowVectorXd::Zero(nv);
    for (int j = 0; j < nv; ++j)
      if (fleet.buses[j] == b) vre[j] = fleet.gamma;
    long id = net.buses[b].id;
    auto& up = add(fmt::format("qg_max_{}", id), qmax);
    up.c[m.off_q() + b] = 1;
    up.c0 = net.buses[b].qd;
    up.d = -vre;
    auto& dn = add(fmt::format("qg_min_{}", id), -qmin);
    dn.c[m.off_q() + b] = -1;
    dn.c0 = -net.buses[b].qd;
    dn.d = vre;
  }
  for (int b = 0; b < n; ++b) {
    long id = net.buses[b].id;
    auto& up = add(fmt::format("v_max_{}", id), net.buses[b].vmax_sq);
    up.c[m.off_v() + b] = 1;
    auto& dn = add(fmt::format("v_min_{}", id), -net.buses[b].vmin_sq);
    dn.c[m.off_v() + b] = -1;
  }
  for (int side = 0; side < 2; ++side)
    for (int l = 0; l < L; ++l) {
      const auto& br = net.branches[l];
      if (!std::isfinite(br.limit)) continue;
      long a = net.buses[side ? br.to : br.from].id, z = net.buses[side ? br.from : br.to].id;
      auto& up = add(fmt::format("flow_max_{}_{}", a, z), br.limit);
      up.c[m.off_ell() + side * L + l] = 1;
      auto& dn = add(fmt::format("flow_min_{}_{}", a, z), br.limit);
      dn.c[m.off_ell() + side * L + l] = -1;
    }

  AcCcRows out;
  const auto R = static_cast<Eigen::Index>(rows.size());
  out.C = Matrix::Zero(R, N);
  out.U = Matrix::Zero(R, nu);
  out.D = Matrix::Zero(R, nv);
  out.c = Vector::Zero(R);
  out.rhs = Vector::Zero(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    out.C.row(r) = rows[r].c;
    out.U.row(r) = rows[r].u;
    out.D.row(r) = rows[r].d;
    out.c[r] = rows[r].c0;
    out.rhs[r] = rows[r].rhs;
    out.names.push_back(rows[r].name);
  }
  return out;
}

struct ResponseJacobian {
  Matrix dw;        // d w / d xi, w_size x n_vre
  Matrix j_matrix;  // chance-constrained rows x n_vre
};

/// Implicit-function sensitivity of the operating point: -[dPsi/dw]^-1 dPsi/dxi.
inline ResponseJacobian response_jacobian(const AcModel& m, const VreFleet& fleet, const AcCcRows& rows,
                                          const AcState& s) {
  Matrix J = psi_w(m, s);
  Eigen::PartialPivLU<Matrix> lu(J);
  if (!(lu.rcond() > 1e-14)) throw NumericalError("singular response system at the operating point");
  ResponseJacobian r;
  r.dw = -lu.solve(psi_xi(m, fleet));
  if (!r.dw.allFinite()) throw NumericalError("non-finite response sensitivity");
  r.j_matrix = rows.C * r.dw + rows.D;
  return r;
}

// ---------------------------------------------------------------------------
// Chance-constrained AC dispatch

struct AcSolveOptions {
  SelectionOptions selection;
  PfOptions pf;
  int max_slp_iterations = 100;
  double step_tol = 1e-6;
  double trust_p = 0.5;   // p.u.
  double trust_v = 0.05;  // p.u.^2
  double prox = 1.0;      // proximal weight on the control step
  int max_outer = 10;
  double eta = 1e-4;
};

struct AcSolution {
  SelectionStatus status = SelectionStatus::NumericalFailure;
  AcState state;
  Vector u;
  double cost = kInf;
  SelectionSolution selection;
  int slp_iterations = 0;
  std::string message;
};

/// Generator outputs at zero error: controlled units from u, the absorber from the slack injection.
inline Vector generator_outputs(const AcModel& m, const VreFleet& fleet, const ControlLayout& c, const AcState& s,
                                const Vector& u) {
  const NetworkCase& net = *m.net;
  Vector pg = Vector::Zero(net.n_gen());
  for (std::size_t i = 0; i < c.gens.size(); ++i) pg[c.gens[i]] = u[i];
  double slack_gen = s.p[m.slack] + net.buses[m.slack].pd - vre_injection(net, fleet)[m.slack];
  for (std::size_t i = 0; i < c.gens.size(); ++i)
    if (net.gens[c.gens[i]].bus == m.slack) slack_gen -= u[i];
  pg[c.absorber] = slack_gen;
  return pg;
}

inline double generation_cost(const NetworkCase& net, const Vector& pg) {
  double cost = 0;
  for (int g = 0; g < net.n_gen(); ++g) cost += net.gens[g].cost(pg[g]);
  return cost;
}

/// Sequential linearization of the selection problem for a frozen error
/// sensitivity: linearize the power flow at the current controls, solve the
/// scenario-selection QP in the control step, re-solve the power flow, repeat.
/// `j_frozen` empty means no error terms (deterministic rows only).
inline AcSolution solve_ac_selection(const AcModel& m, const VreFleet& fleet, const ControlLayout& ctl,
                                     const AcCcRows& rows, const Matrix& xi, int k, const Matrix& j_frozen,
                                     Vector u, const AcSolveOptions& opt = {}) {
  const NetworkCase& net = *m.net;
  const int nu = ctl.size(), ng = static_cast<int>(ctl.gens.size());
  AcSolution out;
  Vector trust(nu);
  for (int i = 0; i < nu; ++i) trust[i] = i < ng ? opt.trust_p : opt.trust_v;
  Vector prev_step = Vector::Zero(nu);
  const Matrix pu = psi_u(m, ctl);
  const auto& absorber = net.gens[ctl.absorber];
  const double vre_slack = vre_injection(net, fleet)[m.slack];
  Matrix sens = j_frozen.size() ? j_frozen : Matrix::Zero(rows.rows(), xi.cols());
  std::optional<AcState> warm;

  for (int it = 0; it < opt.max_slp_iterations; ++it) {
    AcState s = pf_solve(m, spec_from_controls(m, fleet, ctl, u), warm ? &*warm : nullptr, opt.pf);
    if (!s.solved && warm) s = pf_solve(m, spec_from_controls(m, fleet, ctl, u), nullptr, opt.pf);
    if (!s.solved) {
      out.message = "power flow failed during linearization: " + s.message;
      out.state = s;
      return out;
    }
    warm = s;
    Matrix Jw = psi_w(m, s);
    Eigen::PartialPivLU<Matrix> lu(Jw);
    if (!(lu.rcond() > 1e-14)) {
      out.message = "singular power-flow linearization";
      return out;
    }
    Matrix Wu = -lu.solve(pu);

    CcSystem cc;
    cc.T = rows.C * Wu + rows.U;
    cc.t = rows.C * s.w() + rows.U * u + rows.c;
    cc.sens = sens;
    cc.rhs = rows.rhs;
    cc.names = rows.names;

    // Absorber output as an affine function of the control step.
    Eigen::RowVectorXd a = Wu.row(m.slack);
    for (int i = 0; i < ng; ++i)
      if (net.gens[ctl.gens[i]].bus == m.slack) a[i] -= 1;
    double pa0 = s.p[m.slack] + net.buses[m.slack].pd - vre_slack;
    for (int i = 0; i < ng; ++i)
      if (net.gens[ctl.gens[i]].bus == m.slack) pa0 -= u[i];

    QpProblem qp;
    qp.H = opt.prox * Matrix::Identity(nu, nu) + 2 * absorber.c2 * a.transpose() * a;
    qp.g = (absorber.c1 + 2 * absorber.c2 * pa0) * a.transpose();
    qp.c0 = absorber.cost(pa0);
    for (int i = 0; i < ng; ++i) {
      const auto& g = net.gens[ctl.gens[i]];
      qp.H(i, i) += 2 * g.c2;
      qp.g[i] += g.c1 + 2 * g.c2 * u[i];
      qp.c0 += g.cost(u[i]);
    }
    std::vector<int> fin;
    for (int r = 0; r < cc.rows(); ++r)
      if (std::isfinite(cc.rhs[r])) fin.push_back(r);
    const int nf = static_cast<int>(fin.size());
    qp.A = Matrix::Zero(nf + 2 + 2 * nu, nu);
    qp.b = Vector::Zero(nf + 2 + 2 * nu);
    for (int i = 0; i < nf; ++i) {
      qp.A.row(i) = cc.T.row(fin[i]);
      qp.b[i] = cc.rhs[fin[i]] - cc.t[fin[i]];
    }
    qp.A.row(nf) = a;
    qp.b[nf] = absorber.pmax - pa0;
    qp.A.row(nf + 1) = -a;
    qp.b[nf + 1] = pa0 - absorber.pmin;
    qp.A.block(nf + 2, 0, nu, nu) = Matrix::Identity(nu, nu);
    qp.A.block(nf + 2 + nu, 0, nu, nu) = -Matrix::Identity(nu, nu);

    SelectionSolution sol;
    for (int widen = 0;; ++widen) {
      qp.b.segment(nf + 2, nu) = trust;
      qp.b.segment(nf + 2 + nu, nu) = trust;
      auto prob = build_selection_from_ccopf(cc, xi, qp, k);
      sol = solve_selection(prob, opt.selection);
      if (sol.status != SelectionStatus::Infeasible || widen >= 6) break;
      trust *= 4;
    }
    out.selection = sol;
    out.slp_iterations = it + 1;
    if (sol.status == SelectionStatus::Infeasible || sol.status == SelectionStatus::NumericalFailure) {
      out.status = sol.status;
      out.state = s;
      out.u = u;
      out.message = "linearized selection problem failed: " + sol.message;
      return out;
    }
    Vector du = sol.x;
    for (int i = 0; i < nu; ++i) {
      if (du[i] * prev_step[i] < 0) trust[i] = std::max(trust[i] / 2, 1e-9);
      if (du[i] != 0) prev_step[i] = du[i];
    }
    u += du;
    if (du.norm() <= opt.step_tol) {
      AcState fin_state = pf_solve(m, spec_from_controls(m, fleet, ctl, u), &s, opt.pf);
      if (!fin_state.solved) {
        out.message = "power flow failed at the final controls";
        out.state = fin_state;
        return out;
      }
      out.state = fin_state;
      out.u = u;
      out.cost = generation_cost(net, generator_outputs(m, fleet, ctl, fin_state, u));
      out.status = sol.status;
      return out;
    }
  }
  out.state = *warm;
  out.u = u;
  out.message = fmt::format("sequential linearization did not settle in {} iterations", opt.max_slp_iterations);
  return out;
}

struct FixedPointResult {
  AcSolution solution;
  AcSolution deterministic;
  ResponseJacobian jacobian;  // at the returned point
  std::vector<double> distances, objectives;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

/// 2-norm over (v at slack and PV buses, P at PV buses).
inline double fixed_point_distance(const AcModel& m, const AcState& a, const AcState& b) {
  double d = (a.v[m.slack] - b.v[m.slack]) * (a.v[m.slack] - b.v[m.slack]);
  for (int k : m.pv) {
    d += (a.v[k] - b.v[k]) * (a.v[k] - b.v[k]);
    d += (a.p[k] - b.p[k]) * (a.p[k] - b.p[k]);
  }
  return std::sqrt(d);
}

/// Alternates between solving the selection problem with the response
/// sensitivity frozen at the current point and re-linearizing at the result.
inline FixedPointResult fixed_point_solve(const AcModel& m, const VreFleet& fleet, const Matrix& xi, int k,
                                          const AcSolveOptions& opt = {}) {
  FixedPointResult r;
  const auto ctl = control_layout(m);
  const auto rows = build_ac_rows(m, fleet, ctl);
  Matrix zero = Matrix::Zero(1, fleet.size());
  r.deterministic = solve_ac_selection(m, fleet, ctl, rows, zero, 1, Matrix(), initial_controls(m, ctl), opt);
  if (r.deterministic.status != SelectionStatus::Optimal) {
    r.solution = r.deterministic;
    r.message = "deterministic AC dispatch failed: " + r.deterministic.message;
    return r;
  }
  AcSolution cur = r.deterministic;
  for (int t = 1; t <= opt.max_outer; ++t) {
    ResponseJacobian jac = response_jacobian(m, fleet, rows, cur.state);
    AcSolution next = solve_ac_selection(m, fleet, ctl, rows, xi, k, jac.j_matrix, cur.u, opt);
    r.iterations = t;
    if (next.status != SelectionStatus::Optimal && next.status != SelectionStatus::GapLimit) {
      r.solution = next;
      r.message = fmt::format("outer iteration {} failed: {}", t, next.message);
      return r;
    }
    double d = fixed_point_distance(m, next.state, cur.state);
    r.distances.push_back(d);
    r.objectives.push_back(next.cost);
    cur = next;
    if (d <= opt.eta) {
      r.converged = true;
      break;
    }
  }
  r.solution = cur;
  r.jacobian = response_jacobian(m, fleet, rows, cur.state);
  if (!r.converged) {
    std::string trace;
    for (double d : r.distances) trace += fmt::format(" {:.3e}", d);
    r.message = fmt::format("no fixed point within {} iterations; distances:{}", opt.max_outer, trace);
  }
  return r;
}

/// One line per iteration: t, distance, objective.
inline std::string fixed_point_trace_csv(const FixedPointResult& r) {
  std::string out = "t,distance,objective\n";
  for (std::size_t t = 0; t < r.distances.size(); ++t)
    out += fmt::format("{},{:.17g},{:.17g}\n", t + 1, r.distances[t], r.objectives[t]);
  return out;
}

/// Bus table (P, Q, v, theta) followed by the directed-flow table.
inline std::string ac_state_csv(const AcModel& m, const AcState& s) {
  const NetworkCase& net = *m.net;
  std::string out = "bus,p,q,v,theta\n";
  for (int b = 0; b < m.n(); ++b)
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", net.buses[b].id, s.p[b], s.q[b], s.v[b], s.theta[b]);
  out += "from,to,flow\n";
  const int L = net.n_branch();
  for (int side = 0; side < 2; ++side)
    for (int l = 0; l < L; ++l) {
      const auto& br = net.branches[l];
      out += fmt::format("{},{},{:.17g}\n", net.buses[side ? br.to : br.from].id,
                         net.buses[side ? br.from : br.to].id, s.ell[side * L + l]);
    }
  return out;
}

}  // namespace drcc
