#pragma once

// k-of-S scenario selection: minimize a convex quadratic subject to base
// constraints and at least k of S scenario blocks, by branch-and-bound over
// enforce/relax decisions with convex QP relaxations.

#include <drcc/dc_model.hpp>
#include <drcc/qp.hpp>
#include <drcc/scenarios.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <memory>
#include <queue>
#include <thread>
#include <vector>

namespace drcc {

/// Rows A x <= b for one scenario. Blocks that share the matrix pointer are
/// bounded jointly in the relaxation.
struct ScenarioBlock {
  std::shared_ptr<const Matrix> A;
  Vector b;
};

struct SelectionProblem {
  QpProblem base;
  std::vector<ScenarioBlock> blocks;
  int k = 1;

  int n() const { return base.n(); }
  int s() const { return static_cast<int>(blocks.size()); }
};

enum class SelectionStatus { Optimal, Infeasible, GapLimit, NumericalFailure };

inline const char* to_string(SelectionStatus s) {
  switch (s) {
    case SelectionStatus::Optimal: return "OPTIMAL";
    case SelectionStatus::Infeasible: return "INFEASIBLE";
    case SelectionStatus::GapLimit: return "GAP_LIMIT";
    case SelectionStatus::NumericalFailure: return "NUMERICAL_FAILURE";
  }
  return "?";
}

struct SelectionStats {
  long nodes = 0;
  long subproblems = 0;
  double wall_time_s = 0;
  double gap = 0;
};

struct SelectionSolution {
  SelectionStatus status = SelectionStatus::NumericalFailure;
  Vector x;
  std::vector<std::uint8_t> z;  // 1 = scenario relaxed
  double objective = kInf;
  double lower_bound = -kInf;
  std::vector<int> enforced;  // blocks satisfied at x
  SelectionStats stats;
  std::string message;

  std::vector<int> relaxed() const {
    std::vector<int> out;
    for (std::size_t j = 0; j < z.size(); ++j)
      if (z[j]) out.push_back(static_cast<int>(j));
    return out;
  }
};

struct SelectionOptions {
  long node_limit = 1000000;
  double time_limit_s = kInf;
  double relative_gap = 0;
  int workers = 1;
  /// Nodes evaluated per round. Fixed independently of `workers` so results do
  /// not depend on the thread count.
  int batch = 8;
  double feas_tol = kFeasibilityTol;
  bool greedy_start = true;
};

namespace detail {

enum : std::uint8_t { kUndecided = 0, kEnforced = 1, kRelaxed = 2 };

inline double block_violation(const ScenarioBlock& blk, const Vector& x) {
  Vector r = (*blk.A) * x - blk.b;
  double v = -kInf;
  for (Eigen::Index i = 0; i < r.size(); ++i)
    if (std::isfinite(blk.b[i])) v = std::max(v, r[i] / (1.0 + std::abs(blk.b[i])));
  return v;
}

/// Groups of block indices sharing a matrix, in order of first appearance.
inline std::vector<std::vector<int>> matrix_groups(const SelectionProblem& p) {
  std::vector<std::vector<int>> groups;
  std::vector<const Matrix*> keys;
  for (int j = 0; j < p.s(); ++j) {
    auto it = std::find(keys.begin(), keys.end(), p.blocks[j].A.get());
    if (it == keys.end()) {
      keys.push_back(p.blocks[j].A.get());
      groups.push_back({j});
    } else {
      groups[it - keys.begin()].push_back(j);
    }
  }
  return groups;
}

struct RowOrigin {
  int group = -1;
  int row = -1;
};

/// Relaxation at a node: base rows plus, per shared matrix and per row, the
/// tightest bound implied by any completion. Enforced blocks contribute their
/// rhs; at most `budget` undecided blocks may still be relaxed, so the
/// (budget+1)-th smallest undecided rhs is also valid.
inline QpProblem node_relaxation(const SelectionProblem& p, const std::vector<std::vector<int>>& groups,
                                 const std::vector<std::uint8_t>& state, int budget,
                                 std::vector<RowOrigin>* origins = nullptr) {
  QpProblem qp = p.base;
  const int n = p.n();
  std::vector<Eigen::Index> rows_per_group;
  std::vector<Vector> bounds;
  Eigen::Index extra = 0;
  std::vector<double> und;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Matrix& A = *p.blocks[groups[gi][0]].A;
    Vector bound = Vector::Constant(A.rows(), kInf);
    std::vector<int> undecided;
    for (int j : groups[gi]) {
      if (state[j] == kEnforced) bound = bound.cwiseMin(p.blocks[j].b);
      if (state[j] == kUndecided) undecided.push_back(j);
    }
    if (static_cast<int>(undecided.size()) > budget) {
      for (Eigen::Index r = 0; r < A.rows(); ++r) {
        und.clear();
        for (int j : undecided) und.push_back(p.blocks[j].b[r]);
        std::nth_element(und.begin(), und.begin() + budget, und.end());
        bound[r] = std::min(bound[r], und[budget]);
      }
    }
    for (Eigen::Index r = 0; r < A.rows(); ++r)
      if (std::isfinite(bound[r])) ++extra;
    bounds.push_back(std::move(bound));
  }
  const Eigen::Index m0 = qp.A.rows();
  Matrix A(m0 + extra, n);
  Vector b(m0 + extra);
  if (m0) {
    A.topRows(m0) = qp.A;
    b.head(m0) = qp.b;
  }
  if (origins) origins->assign(m0, RowOrigin{});
  Eigen::Index at = m0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Matrix& G = *p.blocks[groups[gi][0]].A;
    for (Eigen::Index r = 0; r < G.rows(); ++r) {
      if (!std::isfinite(bounds[gi][r])) continue;
      A.row(at) = G.row(r);
      b[at] = bounds[gi][r];
      if (origins) origins->push_back({static_cast<int>(gi), static_cast<int>(r)});
      ++at;
    }
  }
  qp.A = std::move(A);
  qp.b = std::move(b);
  return qp;
}

template <class F>
void parallel_for(int count, int workers, F&& fn) {
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (int i = w; i < count; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Relaxes blocks one at a time, each time the enforced block carrying the
/// largest total multiplier, until S - k blocks are relaxed.
inline SelectionSolution greedy_incumbent(const SelectionProblem& p, const SelectionOptions& opt = {}) {
  const int s = p.s();
  auto groups = detail::matrix_groups(p);
  std::vector<std::uint8_t> state(s, detail::kEnforced);
  SelectionSolution sol;
  sol.z.assign(s, 0);

  std::vector<detail::RowOrigin> origins;
  QpOptions qopt;
  qopt.feas_tol = opt.feas_tol;
  auto qp = detail::node_relaxation(p, groups, state, 0, &origins);
  auto res = qp_solve(qp, qopt);
  ++sol.stats.subproblems;
  if (res.status != QpStatus::Optimal) {
    sol.status = res.status == QpStatus::Infeasible ? SelectionStatus::Infeasible : SelectionStatus::NumericalFailure;
    sol.message = "all-enforced problem: " + res.message;
    return sol;
  }
  for (int round = 0; round < s - p.k; ++round) {
    // Attribute each row multiplier to the enforced block attaining the bound.
    std::vector<double> weight(s, 0.0);
    for (Eigen::Index i = 0; i < res.duals.size(); ++i) {
      const auto& o = origins[i];
      if (o.group < 0 || res.duals[i] <= 0) continue;
      int owner = -1;
      for (int j : groups[o.group])
        if (state[j] == detail::kEnforced && (owner < 0 || p.blocks[j].b[o.row] < p.blocks[owner].b[o.row]))
          owner = j;
      if (owner >= 0) weight[owner] += res.duals[i];
    }
    int pick = -1;
    for (int j = 0; j < s; ++j)
      if (state[j] == detail::kEnforced && weight[j] > 0 && (pick < 0 || weight[j] > weight[pick])) pick = j;
    if (pick < 0) break;
    state[pick] = detail::kRelaxed;
    qopt.x0 = res.x;
    auto next = qp_solve(detail::node_relaxation(p, groups, state, 0, &origins), qopt);
    ++sol.stats.subproblems;
    if (next.status != QpStatus::Optimal) {
      state[pick] = detail::kEnforced;
      break;
    }
    res = std::move(next);
  }
  sol.status = SelectionStatus::Optimal;
  sol.x = res.x;
  sol.objective = res.value;
  for (int j = 0; j < s; ++j) {
    if (detail::block_violation(p.blocks[j], sol.x) <= opt.feas_tol)
      sol.enforced.push_back(j);
    else
      sol.z[j] = 1;
  }
  return sol;
}

inline SelectionSolution solve_selection(const SelectionProblem& p, const SelectionOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const int s = p.s();
  if (p.k < 1 || p.k > s) throw Error(fmt::format("selection needs 1 <= k <= S, got k={} S={}", p.k, s));
  for (const auto& blk : p.blocks)
    if (blk.A->cols() != p.n() || blk.A->rows() != blk.b.size()) throw Error("scenario block dimensions disagree");
  const int max_relaxed = s - p.k;
  auto groups = detail::matrix_groups(p);
  QpOptions qopt;
  qopt.feas_tol = opt.feas_tol;

  SelectionSolution best;
  best.z.assign(s, 0);
  bool numerical_trouble = false;
  std::string trouble;

  auto accept = [&](const Vector& x, double value) {
    int satisfied = 0;
    for (int j = 0; j < s; ++j) satisfied += detail::block_violation(p.blocks[j], x) <= opt.feas_tol;
    if (satisfied < p.k) return false;
    if (value < best.objective) {
      best.x = x;
      best.objective = value;
    }
    return true;
  };

  // Base constraints alone must be feasible.
  {
    auto base = qp_solve(p.base, qopt);
    ++best.stats.subproblems;
    if (base.status == QpStatus::Infeasible) {
      best.status = SelectionStatus::Infeasible;
      best.message = "base constraints are infeasible: " + base.message;
      return best;
    }
  }
  if (opt.greedy_start) {
    auto g = greedy_incumbent(p, opt);
    best.stats.subproblems += g.stats.subproblems;
    if (g.status == SelectionStatus::Optimal) accept(g.x, g.objective);
  }

  struct Node {
    std::vector<std::uint8_t> state;
    int relaxed = 0;
    double bound = -kInf;
    Vector warm;
    long seq = 0;
  };
  struct Worse {
    bool operator()(const std::shared_ptr<Node>& a, const std::shared_ptr<Node>& b) const {
      return a->bound != b->bound ? a->bound > b->bound : a->seq > b->seq;
    }
  };
  std::vector<std::shared_ptr<Node>> dive;  // LIFO until the first incumbent
  std::priority_queue<std::shared_ptr<Node>, std::vector<std::shared_ptr<Node>>, Worse> heap;
  long seq = 0;
  {
    auto root = std::make_shared<Node>();
    root->state.assign(s, detail::kUndecided);
    root->seq = seq++;
    if (std::isfinite(best.objective))
      heap.push(root);
    else
      dive.push_back(root);
  }

  auto fathom_level = [&] {
    if (!std::isfinite(best.objective)) return kInf;
    double tol = std::max(opt.relative_gap * std::abs(best.objective), 1e-9 * (1.0 + std::abs(best.objective)));
    return best.objective - tol;
  };

  bool limit_hit = false;
  while (!dive.empty() || !heap.empty()) {
    double elapsed = std::chrono::duration<double>(clock::now() - start).count();
    if (best.stats.nodes >= opt.node_limit || elapsed > opt.time_limit_s) {
      limit_hit = true;
      break;
    }
    if (std::isfinite(best.objective))
      while (!dive.empty()) {
        heap.push(dive.back());
        dive.pop_back();
      }

    std::vector<std::shared_ptr<Node>> batch;
    while (static_cast<int>(batch.size()) < opt.batch) {
      std::shared_ptr<Node> nd;
      if (!dive.empty()) {
        nd = dive.back();
        dive.pop_back();
      } else if (!heap.empty()) {
        nd = heap.top();
        heap.pop();
      } else {
        break;
      }
      if (nd->bound >= fathom_level()) continue;
      batch.push_back(nd);
    }
    if (batch.empty()) continue;

    std::vector<QpResult> results(batch.size());
    detail::parallel_for(static_cast<int>(batch.size()), opt.workers, [&](int i) {
      const Node& nd = *batch[i];
      auto qp = detail::node_relaxation(p, groups, nd.state, max_relaxed - nd.relaxed);
      QpOptions o = qopt;
      if (nd.warm.size()) o.x0 = nd.warm;
      results[i] = qp_solve(qp, o);
      if (results[i].status == QpStatus::NumericalFailure && nd.warm.size()) {
        o.x0.reset();
        results[i] = qp_solve(qp, o);
      }
    });
    best.stats.nodes += static_cast<long>(batch.size());
    best.stats.subproblems += static_cast<long>(batch.size());

    std::vector<std::shared_ptr<Node>> children;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Node& nd = *batch[i];
      const QpResult& r = results[i];
      if (r.status == QpStatus::Infeasible) continue;
      if (r.status != QpStatus::Optimal) {
        numerical_trouble = true;
        trouble = r.message;
        continue;
      }
      if (r.value >= fathom_level()) continue;
      if (accept(r.x, r.value)) continue;

      // Branch on the undecided block with the largest violation.
      int pick = -1;
      double worst = -kInf;
      for (int j = 0; j < s; ++j) {
        if (nd.state[j] != detail::kUndecided) continue;
        double v = detail::block_violation(p.blocks[j], r.x);
        if (v > worst) {
          worst = v;
          pick = j;
        }
      }
      if (pick < 0 || nd.relaxed >= max_relaxed) {
        numerical_trouble = true;
        trouble = "relaxation optimum violates a block with no branching freedom left";
        continue;
      }
      auto enforce = std::make_shared<Node>(Node{nd.state, nd.relaxed, r.value, r.x, 0});
      enforce->state[pick] = detail::kEnforced;
      auto relax = std::make_shared<Node>(Node{nd.state, nd.relaxed + 1, r.value, r.x, 0});
      relax->state[pick] = detail::kRelaxed;
      children.push_back(enforce);
      children.push_back(relax);
    }
    for (auto& c : children) {
      c->seq = seq++;
      if (std::isfinite(best.objective))
        heap.push(c);
      else
        dive.push_back(c);  // relax child lands on top of the stack
    }
  }

  double open_bound = kInf;
  for (const auto& nd : dive) open_bound = std::min(open_bound, nd->bound);
  while (!heap.empty()) {
    if (heap.top()->bound < fathom_level()) open_bound = std::min(open_bound, heap.top()->bound);
    heap.pop();
  }

  best.stats.wall_time_s = std::chrono::duration<double>(clock::now() - start).count();
  if (!std::isfinite(best.objective)) {
    best.status = numerical_trouble || limit_hit ? SelectionStatus::NumericalFailure : SelectionStatus::Infeasible;
    best.message = numerical_trouble ? trouble : limit_hit ? "limit reached before any feasible selection" :
                                                            "no selection of k scenario blocks is feasible";
    return best;
  }
  for (int j = 0; j < s; ++j) {
    if (detail::block_violation(p.blocks[j], best.x) <= opt.feas_tol) {
      best.enforced.push_back(j);
      best.z[j] = 0;
    } else {
      best.z[j] = 1;
    }
  }
  best.lower_bound = limit_hit ? std::min(open_bound, best.objective) : best.objective;
  best.stats.gap = (best.objective - best.lower_bound) / std::max(1.0, std::abs(best.objective));
  if (numerical_trouble) {
    best.status = SelectionStatus::NumericalFailure;
    best.message = "some subproblems failed: " + trouble;
  } else if (limit_hit && best.stats.gap > opt.relative_gap) {
    best.status = SelectionStatus::GapLimit;
    best.message = fmt::format("stopped at a node or time limit with gap {:.3e}", best.stats.gap);
  } else {
    best.status = SelectionStatus::Optimal;
  }
  return best;
}

/// Scenario j becomes the block T x <= rhs - t - G xi_j over the finite rows of
/// the chance-constraint system; `base` carries cost, balance and the
/// deterministic limits.
inline SelectionProblem build_selection_from_ccopf(const CcSystem& cc, const Matrix& xi, const QpProblem& base,
                                                   int k) {
  if (xi.cols() != cc.sens.cols())
    throw Error(fmt::format("scenarios have {} columns, the model has {} VRE units", xi.cols(), cc.sens.cols()));
  if (cc.T.cols() != base.n()) throw Error("chance-constraint rows and base problem disagree in dimension");
  std::vector<int> rows;
  for (int i = 0; i < cc.rows(); ++i)
    if (std::isfinite(cc.rhs[i])) rows.push_back(i);
  auto A = std::make_shared<Matrix>(rows.size(), cc.T.cols());
  Vector offset(rows.size());
  Matrix G(rows.size(), cc.sens.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    A->row(r) = cc.T.row(rows[r]);
    offset[r] = cc.rhs[rows[r]] - cc.t[rows[r]];
    G.row(r) = cc.sens.row(rows[r]);
  }
  SelectionProblem p;
  p.base = base;
  p.k = k;
  std::shared_ptr<const Matrix> shared = A;
  for (Eigen::Index j = 0; j < xi.rows(); ++j)
    p.blocks.push_back({shared, offset - G * xi.row(j).transpose()});
  return p;
}

}  // namespace drcc
