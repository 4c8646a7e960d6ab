#include "rfeps/edge_zone.hpp"

#include "rfeps/spherical.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <numeric>

namespace rfeps {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector3 rotate_away(const Vector3& n, double angle, const Vector3& hint) {
  Vector3 axis = n.cross(hint);
  if (axis.norm() < 1e-9) axis = n.cross(std::abs(n.x()) < 0.9 ? Vector3::UnitX() : Vector3::UnitY());
  return Eigen::AngleAxisd(angle, axis.normalized()) * n;
}

struct OmtModel {
  const NormalPatch& patch;
  NormalChart<double> ca, cb;
  double total_weight;

  OmtModel(const NormalPatch& p, const Vector3& a0, const Vector3& b0)
      : patch(p), ca(a0, b0), cb(b0, a0), total_weight(p.weights.sum()) {}

  Index size() const { return patch.size(); }

  void decode(const Eigen::VectorXd& x, Vector3& a, Vector3& b) const {
    a = ca.normal(x(0), x(1)).normalized();
    b = cb.normal(x(2), x(3)).normalized();
  }

  double eval(const Eigen::VectorXd& x, Eigen::VectorXd& g) const {
    const Index k = size();
    const Vector3 a = ca.normal(x(0), x(1));
    const Vector3 b = cb.normal(x(2), x(3));
    g.setZero(4 + k);
    double f = 0;
    Vector3 ga = Vector3::Zero(), gb = Vector3::Zero();
    for (Index j = 0; j < k; ++j) {
      const Vector3 nj = patch.normals.col(j);
      const double w = patch.weights(j) / total_weight;
      const double l = x(4 + j);
      const double ra = (nj - a).squaredNorm(), rb = (nj - b).squaredNorm();
      f += w * (l * ra + (1 - l) * rb);
      g(4 + j) = w * (ra - rb);
      ga += -2 * w * l * (nj - a);
      gb += -2 * w * (1 - l) * (nj - b);
    }
    g(0) = ga.dot(ca.d_du(x(0), x(1)));
    g(1) = ga.dot(ca.d_dv(x(0), x(1)));
    g(2) = gb.dot(cb.d_du(x(2), x(3)));
    g(3) = gb.dot(cb.d_dv(x(2), x(3)));
    return f;
  }

  ConstrainedProblem problem() const {
    const Index k = size();
    ConstrainedProblem prob;
    prob.dimension = 4 + k;
    prob.lower = Eigen::VectorXd::Constant(4 + k, -kInf);
    prob.upper = Eigen::VectorXd::Constant(4 + k, kInf);
    LinearEquality half;
    for (Index j = 0; j < k; ++j) {
      prob.lower(4 + j) = 0;
      prob.upper(4 + j) = 1;
      half.terms.emplace_back(4 + j, 1.0);
    }
    half.rhs = 0.5 * static_cast<double>(k);
    prob.equalities.push_back(std::move(half));
    return prob;
  }
};

// Exact minimizer over the lambdas for fixed normals: the k/2 cheapest
// neighbors go to `a` (one half-unit for odd k).
Eigen::VectorXd balanced_assignment(const NormalPatch& patch, const Vector3& a, const Vector3& b) {
  const Index k = patch.size();
  std::vector<double> c(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) {
    const Vector3 nj = patch.normals.col(j);
    c[static_cast<std::size_t>(j)] = patch.weights(j) * ((nj - a).squaredNorm() - (nj - b).squaredNorm());
  }
  std::vector<Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index x, Index y) { return c[static_cast<std::size_t>(x)] < c[static_cast<std::size_t>(y)]; });
  Eigen::VectorXd l = Eigen::VectorXd::Zero(k);
  const Index full = k / 2;
  for (Index r = 0; r < full; ++r) l(order[static_cast<std::size_t>(r)]) = 1;
  if (k % 2 == 1) l(order[static_cast<std::size_t>(full)]) = 0.5;
  return l;
}

Vector3 weighted_direction(const NormalPatch& patch, const Eigen::VectorXd& mass, const Vector3& fallback) {
  Vector3 s = Vector3::Zero();
  for (Index j = 0; j < patch.size(); ++j) s += patch.weights(j) * mass(j) * patch.normals.col(j);
  const double len = s.norm();
  return len > 1e-300 ? Vector3(s / len) : fallback;
}

bool lex_less(const Vector3& a, const Vector3& b) {
  return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
}

}  // namespace

NormalPatch make_patch(const Vector3& center, const Points& positions, const Points& normals,
                       const std::vector<Index>& neighbors, double eps_denom, bool weighted) {
  NormalPatch patch;
  const Index k = static_cast<Index>(neighbors.size());
  patch.normals.resize(3, k);
  patch.weights.resize(k);
  patch.indices = neighbors;
  for (Index a = 0; a < k; ++a) {
    const Index j = neighbors[static_cast<std::size_t>(a)];
    patch.normals.col(a) = normals.col(j);
    patch.weights(a) = weighted ? 1.0 / ((center - positions.col(j)).squaredNorm() + eps_denom) : 1.0;
  }
  return patch;
}

std::vector<Vector3> spherical_kmeans(const Points& normals, int clusters, int iterations) {
  const Index k = normals.cols();
  if (k == 0 || clusters < 1) throw Error(ErrorKind::InvalidInput, "k-means needs points and clusters");
  Vector3 mean = normals.rowwise().sum();
  mean = mean.norm() > 1e-12 ? Vector3(mean.normalized()) : Vector3(normals.col(0));

  std::vector<Vector3> centers;
  {
    Index far = 0;
    for (Index j = 1; j < k; ++j)
      if (normals.col(j).dot(mean) < normals.col(far).dot(mean)) far = j;
    centers.push_back(normals.col(far));
  }
  while (static_cast<int>(centers.size()) < clusters) {
    Index best = 0;
    double best_gap = -1;
    for (Index j = 0; j < k; ++j) {
      double gap = kInf;
      for (const auto& c : centers) gap = std::min(gap, angle_between<double>(normals.col(j), c));
      if (gap > best_gap) {
        best_gap = gap;
        best = j;
      }
    }
    Vector3 seed = normals.col(best);
    if (best_gap < 1e-3)
      seed = rotate_away(centers.back(), 1e-3, mean.isApprox(centers.back()) ? Vector3(Vector3::UnitX()) : mean);
    centers.push_back(seed);
  }

  std::vector<int> assign(static_cast<std::size_t>(k), -1);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (Index j = 0; j < k; ++j) {
      int best = 0;
      for (int c = 1; c < clusters; ++c)
        if (normals.col(j).dot(centers[static_cast<std::size_t>(c)]) >
            normals.col(j).dot(centers[static_cast<std::size_t>(best)]))
          best = c;
      if (assign[static_cast<std::size_t>(j)] != best) changed = true;
      assign[static_cast<std::size_t>(j)] = best;
    }
    if (!changed) break;
    for (int c = 0; c < clusters; ++c) {
      Vector3 s = Vector3::Zero();
      for (Index j = 0; j < k; ++j)
        if (assign[static_cast<std::size_t>(j)] == c) s += normals.col(j);
      if (s.norm() > 1e-12) centers[static_cast<std::size_t>(c)] = s.normalized();
    }
  }
  return centers;
}

double omt_cost(const NormalPatch& patch, const Eigen::VectorXd& lambdas, const Vector3& a, const Vector3& b) {
  double f = 0;
  const double total = patch.weights.sum();
  for (Index j = 0; j < patch.size(); ++j) {
    const Vector3 nj = patch.normals.col(j);
    f += patch.weights(j) * (lambdas(j) * (nj - a).squaredNorm() + (1 - lambdas(j)) * (nj - b).squaredNorm());
  }
  return f / total;
}

ConstrainedProblem omt_problem(const NormalPatch& patch, const Vector3& a0, const Vector3& b0,
                               const Eigen::VectorXd& lambdas0, Eigen::VectorXd* x0) {
  struct Holder {
    NormalPatch patch;
    OmtModel model;
    Holder(const NormalPatch& p, const Vector3& a, const Vector3& b) : patch(p), model(patch, a, b) {}
  };
  auto holder = std::make_shared<Holder>(patch, a0, b0);
  ConstrainedProblem prob = holder->model.problem();
  prob.objective = [holder](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return holder->model.eval(x, g); };
  if (x0) {
    x0->resize(4 + patch.size());
    (*x0)(0) = NormalChart<double>::origin_u();
    (*x0)(1) = NormalChart<double>::origin_v();
    (*x0)(2) = NormalChart<double>::origin_u();
    (*x0)(3) = NormalChart<double>::origin_v();
    x0->tail(patch.size()) = lambdas0;
  }
  return prob;
}

OmtResult solve_omt(const NormalPatch& patch, double grad_tol, int max_iterations) {
  const Index k = patch.size();
  if (k < 1) throw Error(ErrorKind::InvalidInput, "empty normal patch");
  const auto centers = spherical_kmeans(patch.normals, 2);

  // Exact block steps (best balanced assignment, then weighted means) from the
  // 2-means centers; each never increases the cost.
  auto alternate = [&](Vector3& a, Vector3& b, Eigen::VectorXd& l, double& cost) {
    for (int it = 0; it < 100; ++it) {
      const Eigen::VectorXd l2 = balanced_assignment(patch, a, b);
      const Vector3 a2 = weighted_direction(patch, l2, a);
      const Vector3 b2 = weighted_direction(patch, Eigen::VectorXd::Ones(k) - l2, b);
      const double c = omt_cost(patch, l2, a2, b2);
      if (!(c < cost - 1e-15)) break;
      cost = c;
      l = l2;
      a = a2;
      b = b2;
    }
  };
  // With both normals at their optimal directions the cost is
  // 2 - 2 (|s_a| + |s_b|) / W; exchanging two assignments moves s_a and s_b by
  // opposite amounts. Take best exchanges until none helps.
  auto exchange = [&](Eigen::VectorXd& l) {
    Vector3 sa = Vector3::Zero(), sb = Vector3::Zero();
    for (Index j = 0; j < k; ++j) {
      sa += patch.weights(j) * l(j) * patch.normals.col(j);
      sb += patch.weights(j) * (1 - l(j)) * patch.normals.col(j);
    }
    bool changed = false;
    for (int pass = 0; pass < 4 * k; ++pass) {
      double best = sa.norm() + sb.norm() + 1e-12 * patch.weights.sum();
      Index bi = -1, bj = -1;
      Vector3 bd = Vector3::Zero();
      for (Index i = 0; i < k; ++i)
        for (Index j = i + 1; j < k; ++j) {
          if (l(i) == l(j)) continue;
          const Vector3 d = (l(j) - l(i)) * (patch.weights(i) * patch.normals.col(i) - patch.weights(j) * patch.normals.col(j));
          const double v = (sa + d).norm() + (sb - d).norm();
          if (v > best) {
            best = v;
            bi = i;
            bj = j;
            bd = d;
          }
        }
      if (bi < 0) break;
      std::swap(l(bi), l(bj));
      sa += bd;
      sb -= bd;
      changed = true;
    }
    return changed;
  };
  auto polish = [&](Vector3& a, Vector3& b, Eigen::VectorXd& l, double& cost) {
    for (int round = 0; round < 20; ++round) {
      alternate(a, b, l, cost);
      Eigen::VectorXd l2 = l;
      if (!exchange(l2)) break;
      const Vector3 a2 = weighted_direction(patch, l2, a);
      const Vector3 b2 = weighted_direction(patch, Eigen::VectorXd::Ones(k) - l2, b);
      const double c = omt_cost(patch, l2, a2, b2);
      if (!(c < cost - 1e-15)) break;
      a = a2;
      b = b2;
      l = l2;
      cost = c;
    }
  };
  Vector3 a = centers[0], b = centers[1];
  Eigen::VectorXd l = Eigen::VectorXd::Constant(k, 0.5);
  double cost = omt_cost(patch, l, a, b);
  alternate(a, b, l, cost);
  {
    // Further starts: halve the patch along each principal direction of the normal scatter.
    const Vector3 m = weighted_direction(patch, Eigen::VectorXd::Ones(k), a);
    Matrix3 cov = Matrix3::Zero();
    for (Index j = 0; j < k; ++j) {
      const Vector3 d = patch.normals.col(j) - m;
      cov += patch.weights(j) * d * d.transpose();
    }
    const Matrix3 axes = Eigen::SelfAdjointEigenSolver<Matrix3>(cov).eigenvectors();
    for (int c : {2, 1}) {
      Vector3 a2 = (m + axes.col(c)).normalized(), b2 = (m - axes.col(c)).normalized();
      Eigen::VectorXd l2 = Eigen::VectorXd::Constant(k, 0.5);
      double cost2 = omt_cost(patch, l2, a2, b2);
      alternate(a2, b2, l2, cost2);
      if (cost2 < cost) {
        a = a2;
        b = b2;
        l = l2;
        cost = cost2;
      }
    }
  }

  // The constrained quasi-Newton solve then starts at a block-stationary point.
  const OmtModel model(patch, a, b);
  ConstrainedProblem prob = model.problem();
  prob.objective = [&model](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return model.eval(x, g); };
  prob.grad_tol = grad_tol;
  prob.max_iterations = max_iterations;
  Eigen::VectorXd x0(4 + k);
  x0 << NormalChart<double>::origin_u(), NormalChart<double>::origin_v(), NormalChart<double>::origin_u(),
      NormalChart<double>::origin_v(), l;
  const SolveResult res = minimize(prob, x0);

  OmtResult out;
  model.decode(res.x, out.n_hat1, out.n_hat2);
  out.lambdas = res.x.tail(k);
  out.cost = omt_cost(patch, out.lambdas, out.n_hat1, out.n_hat2);
  if (!(out.cost <= cost)) {
    out.n_hat1 = a;
    out.n_hat2 = b;
    out.lambdas = l;
    out.cost = cost;
  }
  polish(out.n_hat1, out.n_hat2, out.lambdas, out.cost);

  if (lex_less(out.n_hat2, out.n_hat1)) {
    std::swap(out.n_hat1, out.n_hat2);
    out.lambdas = (Eigen::VectorXd::Ones(k) - out.lambdas).eval();
  }
  out.cost = std::max(0.0, out.cost);
  out.angle = angle_between<double>(out.n_hat1, out.n_hat2);
  return out;
}

PointLabel classify(double angle, double cost, const PipelineConfig& config) {
  if (angle <= config.angle_thresh) return PointLabel::OffEdge;
  return cost <= config.cost_thresh ? PointLabel::EdgeZone : PointLabel::OffEdge;
}

EdgeZoneEntry omt_at(const Vector3& p, const OrientedCloud& cloud, const NeighborQuery& index,
                     const PipelineConfig& config, double delta, std::optional<Index> exclude) {
  std::vector<Index> nbrs;
  for (const auto& h : index.radius(p, config.radius_mult * delta, exclude)) nbrs.push_back(h.index);
  EdgeZoneEntry e;
  if (nbrs.size() < 4) {
    e.cost = kInf;
    e.sparse = true;
    e.classification = PointLabel::OffEdge;
    return e;
  }
  const NormalPatch patch = make_patch(p, cloud.positions, cloud.normals, nbrs, config.eps_denom, config.weighted_omt);
  OmtResult r = solve_omt(patch, config.grad_tol, config.max_iterations);
  e.cost = r.cost;
  e.n_hat1 = r.n_hat1;
  e.n_hat2 = r.n_hat2;
  e.angle = r.angle;
  e.lambdas = std::move(r.lambdas);
  e.classification = classify(e.angle, e.cost, config);
  return e;
}

EdgeZoneReport detect_edge_zone(const OrientedCloud& cloud, const NeighborQuery& index, const PipelineConfig& config,
                                double delta) {
  if (index.size() != cloud.size()) throw Error(ErrorKind::InvalidInput, "index does not match the cloud");
  EdgeZoneReport report;
  report.entries.resize(static_cast<std::size_t>(cloud.size()));
  parallel_for(cloud.size(), config.threads(), [&](Index i) {
    report.entries[static_cast<std::size_t>(i)] = omt_at(cloud.positions.col(i), cloud, index, config, delta, i);
  });
  for (const auto& e : report.entries) {
    if (e.classification == PointLabel::EdgeZone) ++report.edge_count;
    if (e.sparse) ++report.sparse_count;
  }
  if (report.sparse_count > 0)
    report.diagnostics.warn(std::to_string(report.sparse_count) + " points have fewer than 4 neighbors");
  return report;
}

}  // namespace rfeps
