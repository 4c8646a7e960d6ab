#include "doctest.h"

#include "rfeps/solver.hpp"
#include "rfeps/spherical.hpp"

#include <Eigen/Dense>

#include <random>

using namespace rfeps;

TEST_CASE("equality and box: symmetric optimum") {
  ConstrainedProblem p;
  p.dimension = 2;
  p.objective = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = 2 * x;
    return x.squaredNorm();
  };
  p.lower = Eigen::VectorXd::Zero(2);
  p.upper = Eigen::VectorXd::Ones(2);
  p.equalities.push_back({{{0, 1.0}, {1, 1.0}}, 1.0});
  const auto r = minimize(p, Eigen::Vector2d(1, 0));
  CHECK(r.status == SolveStatus::Converged);
  CHECK(r.x(0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(r.x(1) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(r.f == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("active upper bound") {
  ConstrainedProblem p;
  p.dimension = 1;
  p.objective = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g.resize(1);
    g(0) = 2 * (x(0) - 3);
    return (x(0) - 3) * (x(0) - 3);
  };
  p.lower = Eigen::VectorXd::Zero(1);
  p.upper = Eigen::VectorXd::Ones(1);
  const auto r = minimize(p, Eigen::VectorXd::Zero(1));
  CHECK(r.x(0) == 1.0);
}

TEST_CASE("convex quadratic with one equality matches the KKT solve") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 10;
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = g(rng);
    const Eigen::MatrixXd h = a * a.transpose() + Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b(n), c(n);
    for (int i = 0; i < n; ++i) {
      b(i) = g(rng);
      c(i) = g(rng);
    }
    const double rhs = g(rng);
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + 1, n + 1);
    kkt.topLeftCorner(n, n) = h;
    kkt.block(0, n, n, 1) = c;
    kkt.block(n, 0, 1, n) = c.transpose();
    Eigen::VectorXd r(n + 1);
    r.head(n) = -b;
    r(n) = rhs;
    const Eigen::VectorXd oracle = kkt.fullPivLu().solve(r).head(n);

    ConstrainedProblem p;
    p.dimension = n;
    p.grad_tol = 1e-10;
    p.max_iterations = 2000;
    p.objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
      grad = h * x + b;
      return 0.5 * x.dot(h * x) + b.dot(x);
    };
    LinearEquality row;
    for (int i = 0; i < n; ++i) row.terms.emplace_back(i, c(i));
    row.rhs = rhs;
    p.equalities.push_back(row);
    const auto res = minimize(p, Eigen::VectorXd::Zero(n));
    CHECK((res.x - oracle).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(std::abs(c.dot(res.x) - rhs) <= 1e-8 * (1 + std::abs(rhs)));
  }
}

TEST_CASE("overlapping equality rows use the general projection") {
  ConstrainedProblem p;
  p.dimension = 3;
  p.objective = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = 2 * (x - Eigen::Vector3d(1, 2, 3));
    return (x - Eigen::Vector3d(1, 2, 3)).squaredNorm();
  };
  p.lower = Eigen::VectorXd::Zero(3);
  p.upper = Eigen::VectorXd::Constant(3, 10);
  p.equalities.push_back({{{0, 1.0}, {1, 1.0}}, 1.0});
  p.equalities.push_back({{{1, 1.0}, {2, 1.0}}, 2.0});
  p.grad_tol = 1e-9;
  const auto r = minimize(p, Eigen::Vector3d(5, 5, 5));
  CHECK(r.x(0) + r.x(1) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.x(1) + r.x(2) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK((r.x.array() >= 0).all());
  // x = (t, 1 - t, 1 + t): minimize (t-1)^2 + (t+1)^2 + (t-2)^2 -> t = 2/3.
  CHECK(r.x(0) == doctest::Approx(2.0 / 3).epsilon(1e-6));
}

TEST_CASE("projection onto a half-sum simplex box") {
  ConstrainedProblem p;
  p.dimension = 6;
  p.lower = Eigen::VectorXd::Zero(6);
  p.upper = Eigen::VectorXd::Ones(6);
  LinearEquality row;
  for (int i = 0; i < 6; ++i) row.terms.emplace_back(i, 1.0);
  row.rhs = 3;
  p.equalities.push_back(row);
  Eigen::VectorXd y(6);
  y << 5, -2, 0.3, 0.9, 0.2, 0.4;
  const Eigen::VectorXd x = project_feasible(p, y);
  CHECK(x.sum() == doctest::Approx(3.0).epsilon(1e-12));
  CHECK((x.array() >= 0).all());
  CHECK((x.array() <= 1).all());
  // KKT of the projection: x_i = clamp(y_i - tau).
  const double tau = y(2) - x(2);
  for (int i = 0; i < 6; ++i) CHECK(x(i) == doctest::Approx(std::clamp(y(i) - tau, 0.0, 1.0)));
}

TEST_CASE("infeasible systems are reported") {
  ConstrainedProblem p;
  p.dimension = 2;
  p.objective = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = x;
    return 0.5 * x.squaredNorm();
  };
  p.lower = Eigen::VectorXd::Zero(2);
  p.upper = Eigen::VectorXd::Ones(2);
  p.equalities.push_back({{{0, 1.0}, {1, 1.0}}, 3.0});
  try {
    minimize(p, Eigen::VectorXd::Zero(2));
    FAIL("expected Infeasible");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Infeasible);
  }
}

TEST_CASE("non-finite objective is a numerical failure") {
  ConstrainedProblem p;
  p.dimension = 1;
  p.objective = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = x;
    return std::log(-1.0 - x(0) * x(0));
  };
  try {
    minimize(p, Eigen::VectorXd::Zero(1));
    FAIL("expected NumericalFailure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NumericalFailure);
  }
}

TEST_CASE("objective never increases on a Rosenbrock valley") {
  ConstrainedProblem p;
  p.dimension = 2;
  std::vector<double> seen;
  p.objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double a = 1 - x(0), b = x(1) - x(0) * x(0);
    g.resize(2);
    g(0) = -2 * a - 400 * x(0) * b;
    g(1) = 200 * b;
    return a * a + 100 * b * b;
  };
  p.grad_tol = 1e-8;
  p.max_iterations = 1000;
  const auto r = minimize(p, Eigen::Vector2d(-1.2, 1));
  CHECK(r.status == SolveStatus::Converged);
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.f <= 24.2);
}

TEST_CASE("gradient checker") {
  ConstrainedProblem p;
  p.dimension = 3;
  const Eigen::Matrix3d h = (Eigen::Matrix3d() << 3, 1, 0, 1, 2, 0.5, 0, 0.5, 1).finished();
  p.objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = h * x;
    return 0.5 * x.dot(h * x);
  };
  const Eigen::Vector3d x(0.3, -0.2, 0.9);
  CHECK(check_gradient(p, x, 1e-5) <= 1e-8);
  ConstrainedProblem wrong = p;
  wrong.objective = [&](const Eigen::VectorXd& y, Eigen::VectorXd& g) {
    g = 2 * h * y;
    return 0.5 * y.dot(h * y);
  };
  const double err = check_gradient(wrong, Eigen::Vector3d(10, 10, 10), 1e-5);
  CHECK(err > 0.4);
  CHECK(err < 0.51);
}

TEST_CASE("spherical embedding and rotated chart") {
  for (double u : {0.1, 1.0, 2.5})
    for (double v : {-2.0, 0.3, 3.0}) CHECK(embed(u, v).norm() == doctest::Approx(1.0).epsilon(1e-15));
  const Vector3 ref = Vector3(0, 0, 1);
  const NormalChart<double> chart(ref);
  CHECK(chart.normal(chart.origin_u(), chart.origin_v()).isApprox(ref, 1e-15));
  // Tangent directions at the origin are orthonormal and orthogonal to the reference.
  const Vector3 du = chart.d_du(chart.origin_u(), chart.origin_v());
  const Vector3 dv = chart.d_dv(chart.origin_u(), chart.origin_v());
  CHECK(std::abs(du.dot(ref)) <= 1e-15);
  CHECK(std::abs(dv.dot(ref)) <= 1e-15);
  CHECK(du.norm() == doctest::Approx(1.0));
  CHECK(dv.norm() == doctest::Approx(1.0));
  const auto s = chart.chart_of(Vector3(1, 2, 3).normalized());
  CHECK(chart.normal(s.u, s.v).isApprox(Vector3(1, 2, 3).normalized(), 1e-12));
  CHECK(angle_between<double>(Vector3::UnitX(), Vector3::UnitY()) == doctest::Approx(std::numbers::pi / 2));
}
