#include "rfeps/denoise.hpp"

#include "rfeps/neighbor_query.hpp"
#include "rfeps/spherical.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>
#include <queue>
#include <string>
#include <tuple>

namespace rfeps {
namespace {

using Neighbors = std::vector<std::vector<Index>>;

Points displaced(const Points& base, const Eigen::VectorXd& eps, const Points& normals) {
  return base + normals * eps.asDiagonal();
}

// Energy in scaled units; gradients with respect to displaced positions and normals.
double scaled_energy(const Points& q, const Points& normals, const Eigen::VectorXd& eps, const Neighbors& nbrs,
                     double xi, Points* gq, Points* gn, int threads) {
  const Index n = q.cols();
  std::vector<double> terms(static_cast<std::size_t>(n), 0.0);
  if (gq) {
    gq->setZero(3, n);
    gn->setZero(3, n);
    for (Index i = 0; i < n; ++i) {
      const auto& list = nbrs[static_cast<std::size_t>(i)];
      const Vector3 ni = normals.col(i);
      Matrix3 m3 = Matrix3::Zero();
      for (Index j : list) {
        const Vector3 d = q.col(i) - q.col(j);
        m3 += d * d.transpose();
      }
      const Vector3 m = m3 * ni;
      terms[static_cast<std::size_t>(i)] = m.squaredNorm();
      for (Index j : list) {
        const Vector3 d = q.col(i) - q.col(j);
        const Vector3 a = 2 * (d.dot(ni) * m + m.dot(d) * ni);
        gq->col(i) += a;
        gq->col(j) -= a;
      }
      gn->col(i) += 2 * m3 * m;
    }
  } else {
    parallel_for(n, threads, [&](Index i) {
      Matrix3 m3 = Matrix3::Zero();
      for (Index j : nbrs[static_cast<std::size_t>(i)]) {
        const Vector3 d = q.col(i) - q.col(j);
        m3 += d * d.transpose();
      }
      terms[static_cast<std::size_t>(i)] = (m3 * normals.col(i)).squaredNorm();
    });
  }
  return std::accumulate(terms.begin(), terms.end(), 0.0) + xi * eps.squaredNorm();
}

void check_terms(const PlanarityTerms& terms, const Eigen::VectorXd& eps, const Points& normals) {
  const Index n = terms.base.cols();
  if (static_cast<Index>(terms.neighbors.size()) != n || eps.size() != n || normals.cols() != n)
    throw Error(ErrorKind::InvalidInput, "planarity terms size mismatch");
  if (!(terms.scale > 0)) throw Error(ErrorKind::InvalidInput, "planarity scale must be positive");
}

struct Frozen {
  Points q;      // scaled displaced positions
  Points cm;     // M_j n_j
};

Frozen freeze(const Points& base_s, const Eigen::VectorXd& eps_s, const Points& normals, const Neighbors& nbrs,
              int threads) {
  Frozen fz;
  fz.q = displaced(base_s, eps_s, normals);
  fz.cm.resize(3, base_s.cols());
  parallel_for(base_s.cols(), threads, [&](Index j) {
    Matrix3 m3 = Matrix3::Zero();
    for (Index k : nbrs[static_cast<std::size_t>(j)]) {
      const Vector3 d = fz.q.col(j) - fz.q.col(k);
      m3 += d * d.transpose();
    }
    fz.cm.col(j) = m3 * normals.col(j);
  });
  return fz;
}

struct BlockSolution {
  double eps = 0;
  Vector3 normal;
  bool failed = false;
};

// Minimizes the exact restriction of the energy to point i's variables.
BlockSolution solve_block(Index i, const Points& base_s, const Eigen::VectorXd& eps_s, const Points& normals,
                          const Frozen& fz, const Neighbors& nbrs, double xi, const SweepOptions& opt) {
  const auto& list = nbrs[static_cast<std::size_t>(i)];
  const Vector3 origin = fz.q.col(i);
  const Vector3 n0 = normals.col(i);
  const Vector3 p = base_s.col(i) - origin;
  const std::size_t k = list.size();
  std::vector<Vector3> qj(k), nj(k), cj(k);
  for (std::size_t a = 0; a < k; ++a) {
    const Index j = list[a];
    qj[a] = fz.q.col(j) - origin;
    nj[a] = normals.col(j);
    const Vector3 e0 = -qj[a];
    cj[a] = fz.cm.col(j) - e0 * e0.dot(nj[a]);
  }
  const NormalChart<double> chart(n0, k > 0 ? qj[0] : Vector3::Zero());
  const bool rotate = opt.optimize_normals;

  ConstrainedProblem prob;
  prob.dimension = rotate ? 3 : 1;
  prob.lower = Eigen::VectorXd::Constant(prob.dimension, -std::numeric_limits<double>::infinity());
  prob.upper = Eigen::VectorXd::Constant(prob.dimension, std::numeric_limits<double>::infinity());
  prob.lower(0) = -opt.eps_bound;
  prob.upper(0) = opt.eps_bound;
  prob.grad_tol = opt.grad_tol;
  prob.max_iterations = opt.max_iterations;
  prob.objective = [&](const Eigen::VectorXd& y, Eigen::VectorXd& g) {
    const double e = y(0);
    const Vector3 nn = rotate ? chart.normal(y(1), y(2)) : n0;
    const Vector3 q = p + e * nn;
    Matrix3 m3 = Matrix3::Zero();
    Vector3 dsum = Vector3::Zero();
    for (const auto& x : qj) {
      const Vector3 d = q - x;
      m3 += d * d.transpose();
      dsum += d;
    }
    const Vector3 m = m3 * nn;
    double f = m.squaredNorm();
    Vector3 gq = 2 * (dsum.dot(nn) * m + m.dot(dsum) * nn);
    const Vector3 gn = 2 * m3 * m;
    for (std::size_t a = 0; a < k; ++a) {
      const Vector3 d = q - qj[a];
      const double dn = d.dot(nj[a]);
      const Vector3 t = cj[a] + d * dn;
      f += t.squaredNorm();
      gq += 2 * (dn * t + t.dot(d) * nj[a]);
    }
    f += xi * e * e;
    g(0) = gq.dot(nn) + 2 * xi * e;
    if (rotate) {
      g(1) = (e * gq + gn).dot(chart.d_du(y(1), y(2)));
      g(2) = (e * gq + gn).dot(chart.d_dv(y(1), y(2)));
    }
    return f;
  };

  Eigen::VectorXd y0(prob.dimension);
  y0(0) = std::clamp(eps_s(i), -opt.eps_bound, opt.eps_bound);
  if (rotate) {
    y0(1) = NormalChart<double>::origin_u();
    y0(2) = NormalChart<double>::origin_v();
  }
  BlockSolution out{eps_s(i), n0, false};
  try {
    const SolveResult res = minimize(prob, y0);
    out.eps = res.x(0);
    out.normal = rotate ? chart.normal(res.x(1), res.x(2)).normalized() : n0;
    // (eps, n) and (-eps, -n) displace the point identically; keep the input orientation.
    if (out.normal.dot(n0) < 0) {
      out.normal = -out.normal;
      out.eps = -out.eps;
    }
  } catch (const Error& err) {
    if (err.kind() != ErrorKind::NumericalFailure) throw;
    out.failed = true;
  }
  return out;
}

}  // namespace

Points init_normals(const Points& positions, int k, int threads, Diagnostics* diag) {
  if (k < 3) throw Error(ErrorKind::InvalidInput, "PCA normals need k >= 3");
  const Index n = positions.cols();
  Points normals = Points::Zero(3, n);
  if (n == 0) return normals;
  const NeighborQuery index(positions);
  std::vector<std::vector<Index>> knn(static_cast<std::size_t>(n));
  std::vector<char> reliable(static_cast<std::size_t>(n), 0);

  parallel_for(n, threads, [&](Index i) {
    auto& list = knn[static_cast<std::size_t>(i)];
    for (const auto& h : index.knn(i, k)) list.push_back(h.index);
    Vector3 mean = positions.col(i);
    for (Index j : list) mean += positions.col(j);
    mean /= static_cast<double>(list.size() + 1);
    Matrix3 cov = (positions.col(i) - mean) * (positions.col(i) - mean).transpose();
    for (Index j : list) cov += (positions.col(j) - mean) * (positions.col(j) - mean).transpose();
    const Eigen::SelfAdjointEigenSolver<Matrix3> es(cov);
    const Vector3 ev = es.eigenvalues();
    // Rank < 2 leaves the plane undetermined.
    if (list.size() >= 2 && ev(1) > 1e-12 * std::max(ev(2), 1e-300)) {
      normals.col(i) = es.eigenvectors().col(0).normalized();
      reliable[static_cast<std::size_t>(i)] = 1;
    }
  });

  // Symmetric k-NN graph.
  std::vector<std::vector<Index>> graph(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    for (Index j : knn[static_cast<std::size_t>(i)]) {
      graph[static_cast<std::size_t>(i)].push_back(j);
      graph[static_cast<std::size_t>(j)].push_back(i);
    }
  for (auto& list : graph) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }

  // Fill unreliable normals breadth-first from reliable ones.
  Index filled = 0;
  {
    std::queue<Index> frontier;
    std::vector<char> known = reliable;
    for (Index i = 0; i < n; ++i)
      if (known[static_cast<std::size_t>(i)]) frontier.push(i);
    while (!frontier.empty()) {
      const Index i = frontier.front();
      frontier.pop();
      for (Index j : graph[static_cast<std::size_t>(i)])
        if (!known[static_cast<std::size_t>(j)]) {
          known[static_cast<std::size_t>(j)] = 1;
          normals.col(j) = normals.col(i);
          frontier.push(j);
          ++filled;
        }
    }
    for (Index i = 0; i < n; ++i)
      if (!known[static_cast<std::size_t>(i)]) {
        normals.col(i) = Vector3::UnitZ();
        ++filled;
      }
  }
  if (diag && filled > 0) diag->warn(std::to_string(filled) + " degenerate PCA patches filled from neighbors");

  // Orientation: Prim's MST per component, flipping children against parents.
  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return positions(2, a) > positions(2, b); });
  using Item = std::tuple<double, Index, Index>;  // cost, node, parent
  for (Index root : order) {
    if (visited[static_cast<std::size_t>(root)]) continue;
    if (normals(2, root) < 0) normals.col(root) = -normals.col(root);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    heap.emplace(0.0, root, Index{-1});
    while (!heap.empty()) {
      const auto [cost, v, parent] = heap.top();
      heap.pop();
      if (visited[static_cast<std::size_t>(v)]) continue;
      visited[static_cast<std::size_t>(v)] = 1;
      if (parent >= 0 && normals.col(v).dot(normals.col(parent)) < 0) normals.col(v) = -normals.col(v);
      for (Index w : graph[static_cast<std::size_t>(v)])
        if (!visited[static_cast<std::size_t>(w)])
          heap.emplace(1.0 - std::abs(normals.col(v).dot(normals.col(w))), w, v);
    }
  }
  return normals;
}

Matrix3 local_covariance(const Points& positions, Index i, const std::vector<Index>& neighbors) {
  Matrix3 m = Matrix3::Zero();
  for (Index j : neighbors) {
    const Vector3 d = positions.col(i) - positions.col(j);
    m += d * d.transpose();
  }
  return m;
}

double planarity_energy(const PlanarityTerms& terms, const Eigen::VectorXd& eps, const Points& normals) {
  check_terms(terms, eps, normals);
  const Eigen::VectorXd eps_s = eps / terms.scale;
  const Points q = displaced(terms.base / terms.scale, eps_s, normals);
  return scaled_energy(q, normals, eps_s, terms.neighbors, terms.xi, nullptr, nullptr, 1);
}

ConstrainedProblem planarity_problem(const PlanarityTerms& terms, const Eigen::VectorXd& eps, const Points& normals,
                                     bool with_normals, Eigen::VectorXd* x0) {
  check_terms(terms, eps, normals);
  const Index n = terms.base.cols();
  const int per = with_normals ? 3 : 1;
  std::vector<NormalChart<double>> charts;
  charts.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) charts.emplace_back(normals.col(i));
  if (x0) {
    x0->resize(per * n);
    for (Index i = 0; i < n; ++i) {
      (*x0)(per * i) = eps(i) / terms.scale;
      if (with_normals) {
        (*x0)(per * i + 1) = NormalChart<double>::origin_u();
        (*x0)(per * i + 2) = NormalChart<double>::origin_v();
      }
    }
  }
  ConstrainedProblem prob;
  prob.dimension = per * n;
  prob.objective = [base_s = Points(terms.base / terms.scale), nbrs = terms.neighbors, xi = terms.xi, charts,
                    fixed = normals, per, n](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    Eigen::VectorXd e(n);
    Points nn(3, n);
    for (Index i = 0; i < n; ++i) {
      e(i) = x(per * i);
      nn.col(i) = per == 3 ? charts[static_cast<std::size_t>(i)].normal(x(per * i + 1), x(per * i + 2))
                           : Vector3(fixed.col(i));
    }
    const Points q = displaced(base_s, e, nn);
    Points gq, gn;
    const double f = scaled_energy(q, nn, e, nbrs, xi, &gq, &gn, 1);
    g.resize(per * n);
    for (Index i = 0; i < n; ++i) {
      g(per * i) = gq.col(i).dot(nn.col(i)) + 2 * xi * e(i);
      if (per == 3) {
        const auto& c = charts[static_cast<std::size_t>(i)];
        const Vector3 w = e(i) * gq.col(i) + gn.col(i);
        g(per * i + 1) = w.dot(c.d_du(x(per * i + 1), x(per * i + 2)));
        g(per * i + 2) = w.dot(c.d_dv(x(per * i + 1), x(per * i + 2)));
      }
    }
    return f;
  };
  return prob;
}

SweepResult minimize_planarity(const PlanarityTerms& terms, const Eigen::VectorXd& eps0, const Points& normals0,
                               const SweepOptions& options) {
  check_terms(terms, eps0, normals0);
  const Index n = terms.base.cols();
  const int threads = options.threads > 0 ? options.threads : default_thread_count();
  const Points base_s = terms.base / terms.scale;
  const auto& nbrs = terms.neighbors;

  SweepResult res;
  Eigen::VectorXd eps_s = (eps0 / terms.scale).cwiseMax(-options.eps_bound).cwiseMin(options.eps_bound);
  Points normals = normals0;
  for (Index i = 0; i < n; ++i)
    if (nbrs[static_cast<std::size_t>(i)].empty()) ++res.isolated;

  auto energy = [&](const Eigen::VectorXd& e, const Points& nn) {
    return scaled_energy(displaced(base_s, e, nn), nn, e, nbrs, terms.xi, nullptr, nullptr, threads);
  };
  double current = energy(eps_s, normals);
  res.energy.push_back(current);

  std::vector<BlockSolution> blocks(static_cast<std::size_t>(n));
  for (int sweep = 0; sweep < options.sweeps; ++sweep) {
    const Frozen fz = freeze(base_s, eps_s, normals, nbrs, threads);
    parallel_for(n, threads, [&](Index i) {
      blocks[static_cast<std::size_t>(i)] = solve_block(i, base_s, eps_s, normals, fz, nbrs, terms.xi, options);
    });
    Eigen::VectorXd eps_star(n);
    Points n_star(3, n);
    for (Index i = 0; i < n; ++i) {
      const auto& b = blocks[static_cast<std::size_t>(i)];
      if (b.failed) ++res.failed_blocks;
      eps_star(i) = b.eps;
      n_star.col(i) = b.normal;
    }

    bool accepted = false;
    for (double theta = 1.0; theta > 1e-3; theta *= 0.5) {
      const Eigen::VectorXd e = eps_s + theta * (eps_star - eps_s);
      Points nn = normals + theta * (n_star - normals);
      nn.colwise().normalize();
      const double f = energy(e, nn);
      if (f <= current) {
        eps_s = e;
        normals = std::move(nn);
        current = f;
        accepted = true;
        break;
      }
    }
    res.energy.push_back(current);
    if (!accepted) break;
  }
  res.eps = eps_s * terms.scale;
  res.normals = std::move(normals);
  return res;
}

DenoiseResult denoise(const OrientedCloud& cloud, const PipelineConfig& config, double delta) {
  config.validate();
  if (!(delta > 0)) delta = average_gap(cloud.positions, config.threads());
  const NeighborQuery index(cloud.positions);
  PlanarityTerms terms{cloud.positions, radius_graph(index, config.radius_mult * delta, config.threads()),
                       config.xi, delta};
  SweepOptions opt;
  opt.sweeps = config.denoise_sweeps;
  opt.optimize_normals = true;
  opt.eps_bound = config.eps_clamp;
  opt.grad_tol = config.grad_tol;
  opt.max_iterations = config.max_iterations;
  opt.threads = config.threads();
  SweepResult sweep = minimize_planarity(terms, Eigen::VectorXd::Zero(cloud.size()), cloud.normals, opt);

  DenoiseResult out;
  out.cloud = cloud;
  out.cloud.positions = displaced(cloud.positions, sweep.eps, sweep.normals);
  out.cloud.normals = sweep.normals;
  out.eps = std::move(sweep.eps);
  out.energy = std::move(sweep.energy);
  out.isolated = sweep.isolated;
  if (sweep.isolated > 0)
    out.diagnostics.warn(std::to_string(sweep.isolated) + " isolated points kept in place during denoising");
  if (sweep.failed_blocks > 0)
    out.diagnostics.warn(std::to_string(sweep.failed_blocks) + " denoise blocks failed and kept their values");
  return out;
}

}  // namespace rfeps
