#pragma once

#include "rfeps/common.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace rfeps {

/// Sparse linear equality row: sum_k coeff_k * x[index_k] = rhs.
struct LinearEquality {
  std::vector<std::pair<Index, double>> terms;
  double rhs = 0;
};

/// Smooth objective with per-variable bounds and linear equalities.
struct ConstrainedProblem {
  using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

  Index dimension = 0;
  Objective objective;
  Eigen::VectorXd lower;  // empty means unbounded; entries may be -inf
  Eigen::VectorXd upper;  // empty means unbounded; entries may be +inf
  std::vector<LinearEquality> equalities;
  double grad_tol = 1e-4;
  int max_iterations = 500;
};

enum class SolveStatus {
  Converged,       // projected-gradient norm <= grad_tol
  IterationLimit,  // max_iterations reached
  Stalled,         // no step gave sufficient decrease
};

struct SolveResult {
  Eigen::VectorXd x;
  double f = 0;
  SolveStatus status = SolveStatus::Converged;
  int iterations = 0;
  double projected_gradient = 0;  // ||P(x - g) - x||_inf at x
};

/// Projected limited-memory quasi-Newton minimization.
///
/// Iterates stay feasible: bounds hold exactly, equalities to rounding.
/// Bounds are handled with an active set identified from the projected
/// gradient step, equalities by projecting the quasi-Newton direction onto
/// the null space of the rows restricted to the free variables. The
/// objective never increases between accepted iterates.
///
/// Throws Infeasible when the constraint set is empty and NumericalFailure
/// when the objective is not finite at an iterate.
SolveResult minimize(const ConstrainedProblem& problem, Eigen::VectorXd x0);

/// Euclidean projection onto the feasible set of `problem`.
Eigen::VectorXd project_feasible(const ConstrainedProblem& problem, const Eigen::VectorXd& y);

/// max_i |g_i - fd_i| / (1 + |g_i|) with central differences of step h.
double check_gradient(const ConstrainedProblem& problem, const Eigen::VectorXd& x, double h);

}  // namespace rfeps
