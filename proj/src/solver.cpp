#include "rfeps/solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace rfeps {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

class FeasibleSet {
 public:
  explicit FeasibleSet(const ConstrainedProblem& p) : n_(p.dimension), rows_(p.equalities) {
    lo_ = p.lower.size() == n_ ? p.lower : Eigen::VectorXd::Constant(n_, -kInf);
    hi_ = p.upper.size() == n_ ? p.upper : Eigen::VectorXd::Constant(n_, kInf);
    if (p.lower.size() != 0 && p.lower.size() != n_) throw Error(ErrorKind::InvalidInput, "lower bound size mismatch");
    if (p.upper.size() != 0 && p.upper.size() != n_) throw Error(ErrorKind::InvalidInput, "upper bound size mismatch");
    for (Index i = 0; i < n_; ++i)
      if (!(lo_(i) <= hi_(i))) throw Error(ErrorKind::Infeasible, "lower bound exceeds upper bound");

    // Zero coefficients carry no constraint; drop them.
    std::vector<int> owner(static_cast<std::size_t>(n_), -1);
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      auto& terms = rows_[r].terms;
      if (!std::isfinite(rows_[r].rhs)) throw Error(ErrorKind::InvalidInput, "non-finite equality rhs");
      std::erase_if(terms, [](const auto& t) { return t.second == 0.0; });
      for (const auto& [i, a] : terms) {
        if (i < 0 || i >= n_) throw Error(ErrorKind::InvalidInput, "equality index out of range");
        if (!std::isfinite(a)) throw Error(ErrorKind::InvalidInput, "non-finite equality coefficient");
        if (owner[static_cast<std::size_t>(i)] >= 0) disjoint_ = false;
        owner[static_cast<std::size_t>(i)] = static_cast<int>(r);
      }
      if (terms.empty() && std::abs(rows_[r].rhs) > 0) throw Error(ErrorKind::Infeasible, "empty equality row");
    }
    in_row_.assign(static_cast<std::size_t>(n_), 0);
    for (std::size_t i = 0; i < owner.size(); ++i) in_row_[i] = owner[i] >= 0;

    if (!disjoint_) {
      dense_.setZero(static_cast<Index>(rows_.size()), n_);
      rhs_.resize(static_cast<Index>(rows_.size()));
      for (std::size_t r = 0; r < rows_.size(); ++r) {
        for (const auto& [i, a] : rows_[r].terms) dense_(static_cast<Index>(r), i) += a;
        rhs_(static_cast<Index>(r)) = rows_[r].rhs;
      }
      gram_.compute(dense_ * dense_.transpose());
      const Eigen::VectorXd x = affine_project(Eigen::VectorXd::Zero(n_));
      if ((dense_ * x - rhs_).cwiseAbs().maxCoeff() > 1e-9 * (1 + rhs_.cwiseAbs().maxCoeff()))
        throw Error(ErrorKind::Infeasible, "inconsistent equality rows");
    }
  }

  const Eigen::VectorXd& lower() const { return lo_; }
  const Eigen::VectorXd& upper() const { return hi_; }

  Eigen::VectorXd project(const Eigen::VectorXd& y) const {
    if (!disjoint_) return project_general(y);
    Eigen::VectorXd x = y.cwiseMax(lo_).cwiseMin(hi_);
    for (const auto& row : rows_) project_row(row, y, x);
    return x;
  }

  /// Zeroes non-free entries of v and removes its component along the rows
  /// restricted to the free variables.
  void null_space_project(Eigen::VectorXd& v, const std::vector<char>& free) const {
    for (Index i = 0; i < n_; ++i)
      if (!free[static_cast<std::size_t>(i)]) v(i) = 0;
    if (rows_.empty()) return;
    if (disjoint_) {
      for (const auto& row : rows_) {
        double dot = 0, norm2 = 0;
        for (const auto& [i, a] : row.terms)
          if (free[static_cast<std::size_t>(i)]) {
            dot += a * v(i);
            norm2 += a * a;
          }
        if (norm2 <= 0) continue;
        const double s = dot / norm2;
        for (const auto& [i, a] : row.terms)
          if (free[static_cast<std::size_t>(i)]) v(i) -= a * s;
      }
      return;
    }
    Eigen::MatrixXd af = dense_;
    for (Index i = 0; i < n_; ++i)
      if (!free[static_cast<std::size_t>(i)]) af.col(i).setZero();
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(af * af.transpose());
    v -= af.transpose() * cod.solve(af * v);
  }

 private:
  void project_row(const LinearEquality& row, const Eigen::VectorXd& y, Eigen::VectorXd& x) const {
    const auto& terms = row.terms;
    if (terms.empty()) return;
    auto value = [&](Index i, double a, double tau) { return std::clamp(y(i) - tau * a, lo_(i), hi_(i)); };
    auto h = [&](double tau) {
      double s = 0;
      for (const auto& [i, a] : terms) s += a * value(i, a, tau);
      return s - row.rhs;
    };

    std::vector<double> breaks;
    breaks.reserve(2 * terms.size());
    double slope_left = 0, slope_right = 0;
    for (const auto& [i, a] : terms) {
      if (std::isfinite(lo_(i))) breaks.push_back((y(i) - lo_(i)) / a);
      if (std::isfinite(hi_(i))) breaks.push_back((y(i) - hi_(i)) / a);
      // As tau -> -inf, y - tau*a runs to +inf*sign(a); the variable stays free if that bound is infinite.
      if ((a > 0 ? hi_(i) : lo_(i)) == (a > 0 ? kInf : -kInf)) slope_left -= a * a;
      if ((a > 0 ? lo_(i) : hi_(i)) == (a > 0 ? -kInf : kInf)) slope_right -= a * a;
    }
    const double tol = 1e-9 * (1 + std::abs(row.rhs));
    double tau = 0;
    if (breaks.empty()) {
      double ay = 0;
      for (const auto& [i, a] : terms) ay += a * y(i);
      tau = (ay - row.rhs) / -slope_left;
    } else {
      std::sort(breaks.begin(), breaks.end());
      const double h_first = h(breaks.front());
      const double h_last = h(breaks.back());
      if (h_first <= 0) {
        if (h_first == 0) tau = breaks.front();
        else if (slope_left < 0) tau = breaks.front() - h_first / slope_left;
        else if (h_first >= -tol) tau = breaks.front();
        else throw Error(ErrorKind::Infeasible, "equality rhs above the attainable range");
      } else if (h_last >= 0) {
        if (h_last == 0) tau = breaks.back();
        else if (slope_right < 0) tau = breaks.back() - h_last / slope_right;
        else if (h_last <= tol) tau = breaks.back();
        else throw Error(ErrorKind::Infeasible, "equality rhs below the attainable range");
      } else {
        std::size_t lo = 0, hi = breaks.size() - 1;
        double h_lo = h_first, h_hi = h_last;
        while (hi - lo > 1) {
          const std::size_t mid = (lo + hi) / 2;
          const double hm = h(breaks[mid]);
          if (hm > 0) {
            lo = mid;
            h_lo = hm;
          } else {
            hi = mid;
            h_hi = hm;
          }
        }
        // h is affine between consecutive breakpoints.
        tau = breaks[lo] + h_lo * (breaks[hi] - breaks[lo]) / (h_lo - h_hi);
      }
    }
    for (const auto& [i, a] : terms) x(i) = value(i, a, tau);
  }

  Eigen::VectorXd affine_project(const Eigen::VectorXd& z) const {
    return z - dense_.transpose() * gram_.solve(dense_ * z - rhs_);
  }

  Eigen::VectorXd project_general(const Eigen::VectorXd& y) const {
    bool bounded = false;
    for (Index i = 0; i < n_; ++i) bounded = bounded || std::isfinite(lo_(i)) || std::isfinite(hi_(i));
    if (!bounded) return affine_project(y);
    // Dykstra's alternating projections between the box and the affine set.
    Eigen::VectorXd x = y, p = Eigen::VectorXd::Zero(n_), q = Eigen::VectorXd::Zero(n_);
    for (int it = 0; it < 20000; ++it) {
      const Eigen::VectorXd yk = (x + p).cwiseMax(lo_).cwiseMin(hi_);
      p = x + p - yk;
      const Eigen::VectorXd xk = affine_project(yk + q);
      q = yk + q - xk;
      const double gap = (yk - xk).cwiseAbs().maxCoeff();
      const double move = (xk - x).cwiseAbs().maxCoeff();
      x = xk;
      if (gap <= 1e-13 * (1 + x.cwiseAbs().maxCoeff()) && move <= 1e-13 * (1 + x.cwiseAbs().maxCoeff()))
        return x.cwiseMax(lo_).cwiseMin(hi_);
    }
    throw Error(ErrorKind::Infeasible, "box and equality constraints do not intersect");
  }

  Index n_;
  std::vector<LinearEquality> rows_;
  Eigen::VectorXd lo_, hi_;
  bool disjoint_ = true;
  std::vector<char> in_row_;
  Eigen::MatrixXd dense_;
  Eigen::VectorXd rhs_;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> gram_;
};

struct Pair {
  Eigen::VectorXd s, y;
};

bool finite(double f, const Eigen::VectorXd& g) { return std::isfinite(f) && g.allFinite(); }

}  // namespace

Eigen::VectorXd project_feasible(const ConstrainedProblem& problem, const Eigen::VectorXd& y) {
  return FeasibleSet(problem).project(y);
}

SolveResult minimize(const ConstrainedProblem& problem, Eigen::VectorXd x0) {
  const Index n = problem.dimension;
  if (x0.size() != n) throw Error(ErrorKind::InvalidInput, "x0 has the wrong dimension");
  if (!problem.objective) throw Error(ErrorKind::InvalidInput, "missing objective");
  const FeasibleSet set(problem);
  const Eigen::VectorXd& lo = set.lower();
  const Eigen::VectorXd& hi = set.upper();

  SolveResult res;
  Eigen::VectorXd x = set.project(x0);
  Eigen::VectorXd g(n), gt(n);
  double f = problem.objective(x, g);
  if (!finite(f, g)) throw Error(ErrorKind::NumericalFailure, "objective not finite at the initial point");

  constexpr std::size_t kMemory = 8;
  constexpr double kArmijo = 1e-4;
  std::deque<Pair> history;
  std::vector<char> free(static_cast<std::size_t>(n), 1);
  Eigen::VectorXd mask(n);

  auto try_step = [&](const Eigen::VectorXd& d, double alpha, bool project, Eigen::VectorXd& xt, double& ft) {
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      xt = project ? set.project(x + alpha * d) : Eigen::VectorXd(x + alpha * d);
      const double decrease = g.dot(xt - x);
      if (!(decrease < 0)) {
        if (project) continue;
        return false;
      }
      ft = problem.objective(xt, gt);
      if (finite(ft, gt) && ft <= f + kArmijo * decrease) return true;
    }
    return false;
  };

  for (res.iterations = 0;; ++res.iterations) {
    const Eigen::VectorXd pstep = set.project(x - g);
    const Eigen::VectorXd pg = pstep - x;
    res.projected_gradient = n > 0 ? pg.cwiseAbs().maxCoeff() : 0.0;
    if (res.projected_gradient <= problem.grad_tol) {
      res.status = SolveStatus::Converged;
      break;
    }
    if (res.iterations >= problem.max_iterations) {
      res.status = SolveStatus::IterationLimit;
      break;
    }

    for (Index i = 0; i < n; ++i) {
      const bool at_lo = x(i) <= lo(i) && pstep(i) <= lo(i);
      const bool at_hi = x(i) >= hi(i) && pstep(i) >= hi(i);
      free[static_cast<std::size_t>(i)] = !(at_lo || at_hi);
      mask(i) = free[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
    Eigen::VectorXd gr = g;
    set.null_space_project(gr, free);

    // Two-loop recursion restricted to the free variables.
    Eigen::VectorXd q = gr;
    std::vector<double> alphas(history.size(), 0.0), rhos(history.size(), 0.0);
    double gamma = 1.0;
    bool have_pair = false;
    for (std::size_t k = history.size(); k-- > 0;) {
      const Eigen::VectorXd sf = history[k].s.cwiseProduct(mask);
      const Eigen::VectorXd yf = history[k].y.cwiseProduct(mask);
      const double sy = sf.dot(yf);
      if (!(sy > 1e-14 * sf.norm() * yf.norm()) || sy <= 0) continue;
      rhos[k] = 1.0 / sy;
      if (!have_pair) {
        gamma = sy / yf.squaredNorm();
        have_pair = true;
      }
      alphas[k] = rhos[k] * sf.dot(q);
      q -= alphas[k] * yf;
    }
    Eigen::VectorXd r = gamma * q;
    for (std::size_t k = 0; k < history.size(); ++k) {
      if (rhos[k] == 0) continue;
      const double beta = rhos[k] * history[k].y.cwiseProduct(mask).dot(r);
      r += history[k].s.cwiseProduct(mask) * (alphas[k] - beta);
    }
    Eigen::VectorXd d = -r;
    set.null_space_project(d, free);
    if (!(g.dot(d) < -1e-16 * g.norm() * d.norm()) || !d.allFinite()) {
      history.clear();
      d = -gr;
      have_pair = false;
    }

    Eigen::VectorXd xt;
    double ft = f;
    bool ok = false;
    if (d.squaredNorm() > 0) {
      const double alpha0 = have_pair ? 1.0 : std::min(1.0, 1.0 / d.cwiseAbs().maxCoeff());
      ok = try_step(d, alpha0, true, xt, ft);
    }
    if (!ok) {
      // Projected-gradient direction is always a feasible descent direction.
      history.clear();
      ok = try_step(pg, 1.0, false, xt, ft);
    }
    if (!ok) {
      res.status = SolveStatus::Stalled;
      break;
    }

    Pair pair{xt - x, gt - g};
    x = std::move(xt);
    f = ft;
    g = gt;
    if (pair.s.dot(pair.y) > 0) {
      history.push_back(std::move(pair));
      if (history.size() > kMemory) history.pop_front();
    }
  }

  res.x = std::move(x);
  res.f = f;
  return res;
}

double check_gradient(const ConstrainedProblem& problem, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(problem.dimension), scratch(problem.dimension);
  problem.objective(x, g);
  double worst = 0;
  Eigen::VectorXd xp = x;
  for (Index i = 0; i < problem.dimension; ++i) {
    xp(i) = x(i) + h;
    const double fp = problem.objective(xp, scratch);
    xp(i) = x(i) - h;
    const double fm = problem.objective(xp, scratch);
    xp(i) = x(i);
    const double fd = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(g(i) - fd) / (1 + std::abs(g(i))));
  }
  return worst;
}

}  // namespace rfeps
