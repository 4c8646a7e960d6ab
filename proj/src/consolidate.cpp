#include "rfeps/consolidate.hpp"

#include "rfeps/spherical.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>

namespace rfeps {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kCollapse = 1e-3;

struct ClusterModel {
  const NormalPatch& patch;
  std::array<NormalChart<double>, 3> charts;
  double total_weight;

  ClusterModel(const NormalPatch& p, const NormalTriple& start)
      : patch(p),
        charts{NormalChart<double>(start[0], start[1]), NormalChart<double>(start[1], start[2]),
               NormalChart<double>(start[2], start[0])},
        total_weight(p.weights.sum()) {}

  NormalTriple decode(const Eigen::VectorXd& x) const {
    NormalTriple m;
    for (int d = 0; d < 3; ++d) m[d] = charts[d].normal(x(2 * d), x(2 * d + 1)).normalized();
    return m;
  }

  double eval(const Eigen::VectorXd& x, Eigen::VectorXd& g) const {
    const Index k = patch.size();
    NormalTriple m;
    for (int d = 0; d < 3; ++d) m[d] = charts[d].normal(x(2 * d), x(2 * d + 1));
    g.setZero(6 + 3 * k);
    std::array<Vector3, 3> gm{Vector3::Zero(), Vector3::Zero(), Vector3::Zero()};
    double f = 0;
    for (Index j = 0; j < k; ++j) {
      const double w = patch.weights(j) / total_weight;
      const Vector3 nj = patch.normals.col(j);
      for (int d = 0; d < 3; ++d) {
        const double l = x(6 + 3 * j + d);
        const double rho = (nj - m[d]).squaredNorm();
        f += w * l * rho;
        g(6 + 3 * j + d) = w * rho;
        gm[d] += -2 * w * l * (nj - m[d]);
      }
    }
    for (int d = 0; d < 3; ++d) {
      g(2 * d) = gm[d].dot(charts[d].d_du(x(2 * d), x(2 * d + 1)));
      g(2 * d + 1) = gm[d].dot(charts[d].d_dv(x(2 * d), x(2 * d + 1)));
    }
    return f;
  }

  ConstrainedProblem problem() const {
    const Index k = patch.size();
    ConstrainedProblem prob;
    prob.dimension = 6 + 3 * k;
    prob.lower = Eigen::VectorXd::Constant(prob.dimension, -kInf);
    prob.upper = Eigen::VectorXd::Constant(prob.dimension, kInf);
    prob.lower.tail(3 * k).setZero();
    prob.upper.tail(3 * k).setOnes();
    for (Index j = 0; j < k; ++j)
      prob.equalities.push_back({{{6 + 3 * j, 1.0}, {7 + 3 * j, 1.0}, {8 + 3 * j, 1.0}}, 1.0});
    return prob;
  }
};

Eigen::VectorXd start_point(Index k, const Eigen::MatrixXd& lambdas) {
  Eigen::VectorXd x0(6 + 3 * k);
  for (int d = 0; d < 3; ++d) {
    x0(2 * d) = NormalChart<double>::origin_u();
    x0(2 * d + 1) = NormalChart<double>::origin_v();
  }
  for (Index j = 0; j < k; ++j)
    for (int d = 0; d < 3; ++d) x0(6 + 3 * j + d) = lambdas(j, d);
  return x0;
}

bool lex_less(const Vector3& a, const Vector3& b) {
  return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
}

}  // namespace

double cluster_cost(const NormalPatch& patch, const Eigen::MatrixXd& lambdas, const NormalTriple& m) {
  double f = 0;
  for (Index j = 0; j < patch.size(); ++j)
    for (int d = 0; d < 3; ++d)
      f += patch.weights(j) * lambdas(j, d) * (Vector3(patch.normals.col(j)) - m[d]).squaredNorm();
  return f / patch.weights.sum();
}

ConstrainedProblem cluster_problem(const NormalPatch& patch, const NormalTriple& start,
                                   const Eigen::MatrixXd& lambdas0, Eigen::VectorXd* x0) {
  struct Holder {
    NormalPatch patch;
    ClusterModel model;
    Holder(const NormalPatch& p, const NormalTriple& s) : patch(p), model(patch, s) {}
  };
  auto holder = std::make_shared<Holder>(patch, start);
  ConstrainedProblem prob = holder->model.problem();
  prob.objective = [holder](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return holder->model.eval(x, g); };
  if (x0) *x0 = start_point(patch.size(), lambdas0);
  return prob;
}

ClusterFit solve_clusters(const NormalPatch& patch, double grad_tol, int max_iterations) {
  const Index k = patch.size();
  if (k < 1) throw Error(ErrorKind::InvalidInput, "empty normal patch");
  const auto seeds = spherical_kmeans(patch.normals, 3);
  const NormalTriple start{seeds[0], seeds[1], seeds[2]};
  const ClusterModel model(patch, start);
  ConstrainedProblem prob = model.problem();
  prob.objective = [&model](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return model.eval(x, g); };
  prob.grad_tol = grad_tol;
  prob.max_iterations = max_iterations;
  const SolveResult res = minimize(prob, start_point(k, Eigen::MatrixXd::Constant(k, 3, 1.0 / 3)));

  ClusterFit fit;
  fit.normals = model.decode(res.x);
  fit.lambdas.resize(k, 3);
  for (Index j = 0; j < k; ++j)
    for (int d = 0; d < 3; ++d) fit.lambdas(j, d) = res.x(6 + 3 * j + d);
  fit.cost = cluster_cost(patch, fit.lambdas, fit.normals);

  // Exact block steps: nearest-normal assignment, then weighted means.
  for (int it = 0; it < 100; ++it) {
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(k, 3);
    for (Index j = 0; j < k; ++j) {
      int best = 0;
      for (int d = 1; d < 3; ++d)
        if ((Vector3(patch.normals.col(j)) - fit.normals[d]).squaredNorm() <
            (Vector3(patch.normals.col(j)) - fit.normals[best]).squaredNorm())
          best = d;
      l(j, best) = 1;
    }
    NormalTriple m = fit.normals;
    for (int d = 0; d < 3; ++d) {
      Vector3 s = Vector3::Zero();
      for (Index j = 0; j < k; ++j) s += patch.weights(j) * l(j, d) * patch.normals.col(j);
      if (s.norm() > 1e-300) m[d] = s.normalized();
    }
    const double c = cluster_cost(patch, l, m);
    if (!(c <= fit.cost + 1e-14)) break;
    const bool improved = c < fit.cost - 1e-15;
    fit.cost = c;
    fit.lambdas = l;
    fit.normals = m;
    if (!improved) break;
  }
  fit.cost = std::max(0.0, fit.cost);

  // Merge collapsed normals, then take the heaviest group.
  std::array<int, 3> group{0, 1, 2};
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b)
      if (angle_between<double>(fit.normals[a], fit.normals[b]) < kCollapse) {
        fit.collapsed = true;
        const int from = group[b], to = group[a];
        for (auto& g : group)
          if (g == from) g = to;
      }
  const Eigen::Vector3d mass = fit.lambdas.colwise().sum().transpose();
  double best_mass = -1;
  Vector3 best_normal = Vector3::UnitZ();
  for (int gid = 0; gid < 3; ++gid) {
    double m = 0;
    Vector3 dir = Vector3::Zero();
    Vector3 first = Vector3::Zero();
    bool any = false;
    for (int d = 0; d < 3; ++d)
      if (group[d] == gid) {
        if (!any) first = fit.normals[d];
        any = true;
        m += mass(d);
        dir += mass(d) * fit.normals[d];
      }
    if (!any) continue;
    const Vector3 rep = dir.norm() > 1e-300 ? Vector3(dir.normalized()) : first;
    const double tie = 1e-9 * static_cast<double>(k);
    if (m > best_mass + tie || (std::abs(m - best_mass) <= tie && lex_less(rep, best_normal))) {
      best_mass = m;
      best_normal = rep;
    }
  }
  fit.dominant = best_normal;
  return fit;
}

RegularizeResult regularize_normals(const OrientedCloud& cloud, const NeighborQuery& index,
                                    const PipelineConfig& config, double delta) {
  if (index.size() != cloud.size()) throw Error(ErrorKind::InvalidInput, "index does not match the cloud");
  RegularizeResult out;
  out.normals = cloud.normals;
  const double r = config.radius_mult * delta;
  std::vector<char> state(static_cast<std::size_t>(cloud.size()), 0);  // 1 updated, 2 kept
  parallel_for(cloud.size(), config.threads(), [&](Index i) {
    if (cloud.labels[static_cast<std::size_t>(i)] != PointLabel::EdgeZone) return;
    std::vector<Index> free;
    for (const auto& h : index.radius(i, r))
      if (cloud.labels[static_cast<std::size_t>(h.index)] != PointLabel::EdgeZone) free.push_back(h.index);
    if (free.size() < 3) {
      state[static_cast<std::size_t>(i)] = 2;
      return;
    }
    const NormalPatch patch =
        make_patch(cloud.positions.col(i), cloud.positions, cloud.normals, free, config.eps_denom, config.weighted_omt);
    out.normals.col(i) = solve_clusters(patch, config.grad_tol, config.max_iterations).dominant;
    state[static_cast<std::size_t>(i)] = 1;
  });
  for (char s : state) {
    if (s == 1) ++out.updated;
    if (s == 2) ++out.kept;
  }
  if (out.kept > 0)
    out.diagnostics.warn(std::to_string(out.kept) + " edge-zone points have fewer than 3 off-edge neighbors");
  return out;
}

std::vector<std::vector<Index>> similar_neighbors(const OrientedCloud& cloud, const NeighborQuery& index,
                                                  double radius, double angle_thresh, int threads) {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(cloud.size()));
  parallel_for(cloud.size(), threads, [&](Index i) {
    for (const auto& h : index.radius(i, radius))
      if (angle_between<double>(cloud.normals.col(i), cloud.normals.col(h.index)) <= angle_thresh)
        out[static_cast<std::size_t>(i)].push_back(h.index);
  });
  return out;
}

RefineResult refine_positions(const OrientedCloud& cloud, const NeighborQuery& index, const PipelineConfig& config,
                              double delta) {
  if (index.size() != cloud.size()) throw Error(ErrorKind::InvalidInput, "index does not match the cloud");
  PlanarityTerms terms{cloud.positions,
                       similar_neighbors(cloud, index, config.radius_mult * delta, config.angle_thresh,
                                         config.threads()),
                       0.0, delta};
  SweepOptions opt;
  opt.sweeps = config.refine_sweeps;
  opt.optimize_normals = false;
  opt.eps_bound = config.eps_clamp;
  opt.grad_tol = config.grad_tol;
  opt.max_iterations = config.max_iterations;
  opt.threads = config.threads();
  SweepResult sweep = minimize_planarity(terms, Eigen::VectorXd::Zero(cloud.size()), cloud.normals, opt);
  RefineResult out;
  out.cloud = cloud;
  out.cloud.positions = cloud.positions + cloud.normals * sweep.eps.asDiagonal();
  out.eps = std::move(sweep.eps);
  out.energy = std::move(sweep.energy);
  out.unmoved = sweep.isolated;
  return out;
}

double edge_residual(const Vector3& z, const Vector3& p, const Points& pts, const Points& nrm, double mu) {
  double f = mu * (z - p).squaredNorm();
  for (Index j = 0; j < pts.cols(); ++j) {
    const double t = (z - pts.col(j)).dot(nrm.col(j));
    f += t * t;
  }
  return f;
}

Vector3 edge_point(const Vector3& p, const Points& pts, const Points& nrm, double mu) {
  Matrix3 a = mu * Matrix3::Identity();
  Vector3 b = mu * p;
  for (Index j = 0; j < pts.cols(); ++j) {
    const Matrix3 nn = nrm.col(j) * nrm.col(j).transpose();
    a += nn;
    b += nn * pts.col(j);
  }
  return a.ldlt().solve(b);
}

ConstrainedProblem edge_problem(const Vector3& p, const Points& pts, const Points& nrm, double mu) {
  ConstrainedProblem prob;
  prob.dimension = 3;
  prob.objective = [p, pts, nrm, mu](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const Vector3 z = x.head<3>();
    Vector3 grad = 2 * mu * (z - p);
    double f = mu * (z - p).squaredNorm();
    for (Index j = 0; j < pts.cols(); ++j) {
      const double t = (z - pts.col(j)).dot(nrm.col(j));
      f += t * t;
      grad += 2 * t * nrm.col(j);
    }
    g = grad;
    return f;
  };
  return prob;
}

ProjectionResult project_to_edge(Index i, const OrientedCloud& cloud, const NeighborQuery& index,
                                 const PipelineConfig& config, double delta) {
  const auto hits = index.radius(i, config.radius_mult * delta);
  Points pts(3, static_cast<Index>(hits.size())), nrm(3, static_cast<Index>(hits.size()));
  for (std::size_t a = 0; a < hits.size(); ++a) {
    pts.col(static_cast<Index>(a)) = cloud.positions.col(hits[a].index);
    nrm.col(static_cast<Index>(a)) = cloud.normals.col(hits[a].index);
  }
  const Vector3 p = cloud.positions.col(i);
  ProjectionResult r;
  r.source = i;
  r.z = edge_point(p, pts, nrm, config.mu);
  r.residual = edge_residual(r.z, p, pts, nrm, config.mu);
  r.source_residual = edge_residual(p, p, pts, nrm, config.mu);
  return r;
}

AugmentResult augment(const OrientedCloud& cloud, const std::vector<ProjectionResult>& projections,
                      const PipelineConfig& config, double delta) {
  AugmentResult out;
  out.cloud = cloud;
  const double radius = config.dedup_mult * delta;
  const double weight = config.weight_mult * delta * delta;

  struct Cluster {
    Vector3 seed, sum, normal_sum;
    Index count;
  };
  std::vector<Cluster> clusters;
  // Hash grid over cluster seeds with cell = radius.
  auto key = [&](const Vector3& x) {
    const Eigen::Array3d c = (x.array() / radius).floor();
    return std::array<long long, 3>{static_cast<long long>(c(0)), static_cast<long long>(c(1)),
                                    static_cast<long long>(c(2))};
  };
  struct KeyHash {
    std::size_t operator()(const std::array<long long, 3>& k) const {
      return static_cast<std::size_t>(k[0] * 73856093LL ^ k[1] * 19349663LL ^ k[2] * 83492791LL);
    }
  };
  std::unordered_map<std::array<long long, 3>, std::vector<std::size_t>, KeyHash> grid;

  for (const auto& pr : projections) {
    if (!pr.z.allFinite()) continue;
    const Vector3 n = cloud.normals.col(pr.source);
    std::size_t hit = clusters.size();
    if (radius > 0) {
      const auto c = key(pr.z);
      double best = radius * radius;
      for (long long dx = -1; dx <= 1; ++dx)
        for (long long dy = -1; dy <= 1; ++dy)
          for (long long dz = -1; dz <= 1; ++dz) {
            const auto it = grid.find({c[0] + dx, c[1] + dy, c[2] + dz});
            if (it == grid.end()) continue;
            for (std::size_t id : it->second) {
              const double d2 = (clusters[id].seed - pr.z).squaredNorm();
              if (d2 < best) {
                best = d2;
                hit = id;
              }
            }
          }
    }
    if (hit < clusters.size()) {
      clusters[hit].sum += pr.z;
      clusters[hit].normal_sum += n;
      ++clusters[hit].count;
      ++out.merged;
    } else {
      clusters.push_back({pr.z, pr.z, n, 1});
      if (radius > 0) grid[key(pr.z)].push_back(clusters.size() - 1);
    }
  }
  for (const auto& c : clusters) {
    Vector3 n = c.normal_sum;
    n = n.norm() > 1e-12 ? Vector3(n.normalized()) : Vector3::UnitZ();
    out.cloud.append(c.sum / static_cast<double>(c.count), n, PointLabel::GeneratedEdge, weight);
  }
  out.generated = static_cast<Index>(clusters.size());
  return out;
}

}  // namespace rfeps
