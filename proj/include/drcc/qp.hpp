#pragma once

// Dense primal active-set solver for convex quadratic programs
//   min 1/2 x'Hx + g'x + c0  s.t.  A x <= b,  E x = f
// with H symmetric positive semidefinite. Infeasibility is certified by a
// Farkas combination of the rows.

#include <drcc/common.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace drcc {

struct QpProblem {
  Matrix H;  // n x n, may be empty for a linear objective
  Vector g;
  double c0 = 0;
  Matrix A;  // m x n
  Vector b;  // +inf entries are ignored
  Matrix E;  // p x n
  Vector f;

  int n() const { return static_cast<int>(g.size()); }
  double objective(const Vector& x) const {
    double v = c0 + g.dot(x);
    if (H.size() > 0) v += 0.5 * x.dot(H * x);
    return v;
  }
};

enum class QpStatus { Optimal, Infeasible, NumericalFailure };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "OPTIMAL";
    case QpStatus::Infeasible: return "INFEASIBLE";
    case QpStatus::NumericalFailure: return "NUMERICAL_FAILURE";
  }
  return "?";
}

struct KktResiduals {
  double stationarity = 0, primal = 0, dual = 0, complementarity = 0;
  double max() const { return std::max({stationarity, primal, dual, complementarity}); }
};

struct QpResult {
  QpStatus status = QpStatus::NumericalFailure;
  Vector x;
  double value = kInf;
  Vector duals;     // per inequality row, >= 0
  Vector eq_duals;  // per equality row
  /// When infeasible: y >= 0, mu with A'y + E'mu = 0 and b'y + f'mu < 0.
  Vector farkas, farkas_eq;
  std::vector<int> active;  // inequality rows in the final working set
  KktResiduals kkt;
  int iterations = 0;
  std::string message;
};

struct QpOptions {
  std::optional<Vector> x0;
  int max_iterations = 5000;
  /// Tolerance on the scaled KKT residuals of the returned point.
  double kkt_tol = 1e-7;
  double feas_tol = kFeasibilityTol;
};

namespace detail {

class ActiveSetSolver {
 public:
  ActiveSetSolver(const Matrix& H, const Vector& g, const Matrix& A, const Vector& b,
                  const Matrix& E, const Vector& f, double feas_tol, int max_iter)
      : H_(H), g_(g), A_(A), b_(b), E_(E), f_(f), feas_tol_(feas_tol), max_iter_(max_iter) {
    n_ = static_cast<int>(g.size());
    grad_scale_ = 1.0 + (g.size() ? g.cwiseAbs().maxCoeff() : 0.0) + (H.size() ? H.cwiseAbs().maxCoeff() : 0.0);
  }

  /// Runs from a feasible x. Returns false on an unbounded direction or an
  /// iteration cap.
  bool run(Vector& x, std::string& message) {
    working_.clear();
    seed_working_set(x);
    int degenerate_steps = 0;
    for (iterations_ = 0; iterations_ < max_iter_; ++iterations_) {
      Matrix aw = working_matrix();
      Vector grad = gradient(x);
      Matrix z = null_space(aw);
      Vector p = Vector::Zero(n_);
      bool unbounded_ray = false;
      if (z.cols() > 0) {
        Vector gz = z.transpose() * grad;
        Matrix hz = H_.size() ? Matrix(z.transpose() * H_ * z) : Matrix::Zero(z.cols(), z.cols());
        Eigen::SelfAdjointEigenSolver<Matrix> eig(hz);
        const Vector& lam = eig.eigenvalues();
        const Matrix& v = eig.eigenvectors();
        Vector vg = v.transpose() * gz;
        double lam_tol = 1e-10 * std::max(1.0, lam.cwiseAbs().maxCoeff());
        Vector flat = Vector::Zero(vg.size());
        bool any_flat = false;
        for (Eigen::Index i = 0; i < lam.size(); ++i)
          if (lam[i] <= lam_tol && std::abs(vg[i]) > 1e-12 * grad_scale_) {
            flat[i] = -vg[i];
            any_flat = true;
          }
        if (any_flat) {
          p = z * (v * flat);
          unbounded_ray = true;
        } else {
          Vector pz = Vector::Zero(vg.size());
          for (Eigen::Index i = 0; i < lam.size(); ++i)
            if (lam[i] > lam_tol) pz[i] = -vg[i] / lam[i];
          p = z * (v * pz);
        }
      }

      double pnorm = p.size() ? p.cwiseAbs().maxCoeff() : 0.0;
      if (p.size() == 0 || pnorm <= 1e-14 * (1.0 + x.cwiseAbs().maxCoeff())) {
        // Stationary on the working set: inspect multipliers.
        Vector lambda = multipliers(aw, grad);
        int drop = -1;
        double most_negative = -1e-10 * grad_scale_;
        for (std::size_t w = 0; w < working_.size(); ++w) {
          if (lambda[n_eq() + w] < most_negative) {
            if (degenerate_steps > 50) {
              // Bland: smallest row index among negative multipliers.
              if (drop < 0 || working_[w] < working_[drop]) drop = static_cast<int>(w);
            } else {
              most_negative = lambda[n_eq() + w];
              drop = static_cast<int>(w);
            }
          }
        }
        if (drop < 0) {
          lambda_ = lambda;
          return true;
        }
        working_.erase(working_.begin() + drop);
        continue;
      }

      // Ratio test. Ties go to the lowest row index.
      double alpha = unbounded_ray ? kInf : 1.0;
      int block = -1;
      for (int i = 0; i < static_cast<int>(A_.rows()); ++i) {
        if (!std::isfinite(b_[i]) || in_working(i)) continue;
        double ap = A_.row(i).dot(p);
        if (ap <= 1e-12 * (1.0 + A_.row(i).cwiseAbs().maxCoeff()) * pnorm) continue;
        double step = std::max(0.0, (b_[i] - A_.row(i).dot(x)) / ap);
        if (step < alpha) {
          alpha = step;
          block = i;
        }
      }
      if (!std::isfinite(alpha)) {
        message = "objective unbounded below along a feasible ray";
        return false;
      }
      x += alpha * p;
      if (block >= 0) {
        working_.push_back(block);
        degenerate_steps = alpha == 0 ? degenerate_steps + 1 : 0;
      } else {
        degenerate_steps = 0;
      }
    }
    message = fmt::format("active-set iteration cap {} reached", max_iter_);
    return false;
  }

  const Vector& lambda() const { return lambda_; }
  const std::vector<int>& working() const { return working_; }
  int iterations() const { return iterations_; }
  int n_eq() const { return static_cast<int>(E_.rows()); }

 private:
  Vector gradient(const Vector& x) const {
    Vector grad = g_;
    if (H_.size()) grad.noalias() += H_ * x;
    return grad;
  }

  bool in_working(int i) const { return std::find(working_.begin(), working_.end(), i) != working_.end(); }

  Matrix working_matrix() const {
    Matrix aw(n_eq() + working_.size(), n_);
    if (n_eq()) aw.topRows(n_eq()) = E_;
    for (std::size_t w = 0; w < working_.size(); ++w) aw.row(n_eq() + w) = A_.row(working_[w]);
    return aw;
  }

  static Matrix null_space(const Matrix& aw) {
    const Eigen::Index n = aw.cols();
    if (aw.rows() == 0) return Matrix::Identity(n, n);
    Eigen::ColPivHouseholderQR<Matrix> qr(aw.transpose());
    qr.setThreshold(1e-11);
    Eigen::Index r = qr.rank();
    Matrix q = qr.householderQ() * Matrix::Identity(n, n);
    return q.rightCols(n - r);
  }

  static Vector multipliers(const Matrix& aw, const Vector& grad) {
    if (aw.rows() == 0) return Vector();
    // Solve A_W' lambda = -grad in the least-squares sense.
    Eigen::ColPivHouseholderQR<Matrix> qr(aw.transpose());
    qr.setThreshold(1e-11);
    return qr.solve(Vector(-grad));
  }

  /// Adds rows active at x while they stay linearly independent of the set.
  void seed_working_set(const Vector& x) {
    Matrix aw = working_matrix();
    Eigen::Index rank = aw.rows() ? Eigen::ColPivHouseholderQR<Matrix>(aw.transpose()).rank() : 0;
    for (int i = 0; i < static_cast<int>(A_.rows()) && rank < n_; ++i) {
      if (!std::isfinite(b_[i])) continue;
      double scale = 1.0 + std::abs(b_[i]);
      if (std::abs(A_.row(i).dot(x) - b_[i]) > 1e-10 * scale) continue;
      Matrix trial(aw.rows() + 1, n_);
      trial.topRows(aw.rows()) = aw;
      trial.bottomRows(1) = A_.row(i);
      Eigen::ColPivHouseholderQR<Matrix> qr(trial.transpose());
      qr.setThreshold(1e-10);
      if (qr.rank() > rank) {
        working_.push_back(i);
        aw = std::move(trial);
        rank = qr.rank();
      }
    }
  }

  const Matrix& H_;
  const Vector& g_;
  const Matrix& A_;
  const Vector& b_;
  const Matrix& E_;
  const Vector& f_;
  double feas_tol_;
  int max_iter_;
  int n_ = 0;
  int iterations_ = 0;
  double grad_scale_ = 1;
  std::vector<int> working_;
  Vector lambda_;
};

inline double max_violation(const Matrix& A, const Vector& b, const Vector& x) {
  double v = 0;
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    if (std::isfinite(b[i])) v = std::max(v, A.row(i).dot(x) - b[i]);
  return v;
}

}  // namespace detail

/// Scaled KKT residuals of (x, duals, eq_duals).
inline KktResiduals kkt_residuals(const QpProblem& qp, const Vector& x, const Vector& y, const Vector& mu) {
  KktResiduals r;
  Vector grad = qp.g;
  if (qp.H.size()) grad += qp.H * x;
  double scale = 1.0 + grad.cwiseAbs().maxCoeff();
  Vector st = grad;
  if (qp.A.rows()) st += qp.A.transpose() * y;
  if (qp.E.rows()) st += qp.E.transpose() * mu;
  r.stationarity = st.size() ? st.cwiseAbs().maxCoeff() / scale : 0;
  for (Eigen::Index i = 0; i < qp.A.rows(); ++i) {
    if (!std::isfinite(qp.b[i])) continue;
    double slack = qp.b[i] - qp.A.row(i).dot(x);
    double row_scale = 1.0 + std::abs(qp.b[i]);
    r.primal = std::max(r.primal, -slack / row_scale);
    r.dual = std::max(r.dual, -y[i] / scale);
    r.complementarity = std::max(r.complementarity, std::abs(y[i] * slack) / (scale * row_scale));
  }
  for (Eigen::Index i = 0; i < qp.E.rows(); ++i)
    r.primal = std::max(r.primal, std::abs(qp.E.row(i).dot(x) - qp.f[i]) / (1.0 + std::abs(qp.f[i])));
  return r;
}

inline QpResult qp_solve(const QpProblem& qp, const QpOptions& opt = {}) {
  const int n = qp.n();
  const Eigen::Index m = qp.A.rows(), p = qp.E.rows();
  if (qp.A.cols() != n && m > 0) throw Error("qp_solve: A has wrong column count");
  if (qp.E.cols() != n && p > 0) throw Error("qp_solve: E has wrong column count");
  QpResult res;
  Matrix A = m ? qp.A : Matrix(0, n);
  Matrix E = p ? qp.E : Matrix(0, n);
  Vector b = m ? qp.b : Vector(0);
  Vector f = p ? qp.f : Vector(0);

  // Trivial rows: zero coefficients with a finite bound.
  for (Eigen::Index i = 0; i < m; ++i) {
    if (std::isfinite(b[i]) && A.row(i).cwiseAbs().maxCoeff() == 0.0) {
      if (b[i] < -opt.feas_tol) {
        res.status = QpStatus::Infeasible;
        res.farkas = Vector::Zero(m);
        res.farkas[i] = 1;
        res.farkas_eq = Vector::Zero(p);
        res.message = fmt::format("row {} reads 0 <= {}", i, b[i]);
        return res;
      }
      b[i] = kInf;
    }
  }

  // Starting point on the equality manifold.
  Vector x = opt.x0 && opt.x0->size() == n ? *opt.x0 : Vector(Vector::Zero(n));
  if (p > 0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(E);
    Vector r = f - E * x;
    x += qr.solve(r);
    Vector resid = f - E * x;
    if (resid.cwiseAbs().maxCoeff() > opt.feas_tol * (1.0 + f.cwiseAbs().maxCoeff())) {
      res.status = QpStatus::Infeasible;
      res.farkas = Vector::Zero(m);
      res.farkas_eq = -resid;
      res.message = "equality constraints are inconsistent";
      return res;
    }
  }

  // Phase 1: min t s.t. A x - t <= b, -t <= 0, E x = f.
  double viol = detail::max_violation(A, b, x);
  if (viol > opt.feas_tol * 0.1) {
    Matrix a1 = Matrix::Zero(m + 1, n + 1);
    a1.topLeftCorner(m, n) = A;
    a1.col(n).head(m).setConstant(-1.0);
    a1(m, n) = -1.0;
    Vector b1(m + 1);
    b1.head(m) = b;
    b1[m] = 0;
    Matrix e1 = Matrix::Zero(p, n + 1);
    if (p) e1.leftCols(n) = E;
    Vector g1 = Vector::Zero(n + 1);
    g1[n] = 1;
    Matrix h1;
    Vector x1(n + 1);
    x1.head(n) = x;
    x1[n] = viol;
    detail::ActiveSetSolver phase1(h1, g1, a1, b1, e1, f, opt.feas_tol, opt.max_iterations);
    std::string msg;
    if (!phase1.run(x1, msg)) {
      res.status = QpStatus::NumericalFailure;
      res.message = "phase 1: " + msg;
      return res;
    }
    res.iterations += phase1.iterations();
    if (x1[n] > opt.feas_tol) {
      res.status = QpStatus::Infeasible;
      res.x = x1.head(n);
      res.farkas = Vector::Zero(m);
      res.farkas_eq = Vector::Zero(p);
      const Vector& lam = phase1.lambda();
      for (int i = 0; i < p; ++i) res.farkas_eq[i] = lam[i];
      for (std::size_t w = 0; w < phase1.working().size(); ++w) {
        int row = phase1.working()[w];
        if (row < m) res.farkas[row] = lam[p + w];
      }
      res.message = fmt::format("minimum constraint violation {:.3e}", x1[n]);
      return res;
    }
    x = x1.head(n);
  }

  detail::ActiveSetSolver phase2(qp.H, qp.g, A, b, E, f, opt.feas_tol, opt.max_iterations);
  std::string msg;
  if (!phase2.run(x, msg)) {
    res.status = QpStatus::NumericalFailure;
    res.x = x;
    res.message = msg;
    return res;
  }
  res.iterations += phase2.iterations();
  res.x = x;
  res.value = qp.objective(x);
  res.duals = Vector::Zero(m);
  res.eq_duals = Vector::Zero(p);
  const Vector& lam = phase2.lambda();
  for (int i = 0; i < p; ++i) res.eq_duals[i] = lam[i];
  for (std::size_t w = 0; w < phase2.working().size(); ++w) {
    res.duals[phase2.working()[w]] = std::max(0.0, lam[p + w]);
    res.active.push_back(phase2.working()[w]);
  }
  std::sort(res.active.begin(), res.active.end());
  QpProblem view{qp.H, qp.g, qp.c0, A, b, E, f};
  res.kkt = kkt_residuals(view, x, res.duals, res.eq_duals);
  if (res.kkt.max() > opt.kkt_tol) {
    res.status = QpStatus::NumericalFailure;
    res.message = fmt::format("KKT residuals too large: stationarity {:.2e}, primal {:.2e}, dual {:.2e}, "
                              "complementarity {:.2e}",
                              res.kkt.stationarity, res.kkt.primal, res.kkt.dual, res.kkt.complementarity);
    return res;
  }
  res.status = QpStatus::Optimal;
  return res;
}

}  // namespace drcc
