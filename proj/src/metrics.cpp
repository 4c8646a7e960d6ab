#include "rfeps/metrics.hpp"

#include "rfeps/neighbor_query.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace rfeps {

namespace {

struct SurfaceDistances {
  Eigen::VectorXd sq_distance;
  Eigen::VectorXd abs_cos;
};

// Distances below this fraction of the mesh diagonal are round-off of points on the surface.
constexpr double kSurfaceFloor = 1e-12;
// Closest triangles tied within this fraction of the diagonal are one contact.
constexpr double kTieTol = 1e-9;

SurfaceDistances against(const SurfaceSamples& s, const TriangleMesh& mesh, int threads) {
  const MeshBvh bvh(mesh);
  const double diag = mesh.bounds().diagonal().norm();
  const double floor2 = (kSurfaceFloor * diag) * (kSurfaceFloor * diag);
  SurfaceDistances out;
  const Index n = s.points.cols();
  out.sq_distance.resize(n);
  out.abs_cos.resize(n);
  parallel_for(n, threads, [&](Index i) {
    const Vector3 p = s.points.col(i);
    const auto hit = bvh.closest(p);
    out.sq_distance(i) = hit.sq_distance < floor2 ? 0.0 : hit.sq_distance;
    // At a crease several triangles share the closest point; take the best-aligned one.
    const double reach = std::sqrt(hit.sq_distance) + kTieTol * diag;
    double c = 0;
    for (const auto& h : bvh.within(p, reach * reach))
      c = std::max(c, std::abs(mesh.normal(h.triangle).dot(s.normals.col(i))));
    out.abs_cos(i) = c;
  });
  return out;
}

double fraction_within(const Eigen::VectorXd& sq, double threshold) {
  if (sq.size() == 0) return 0;
  return static_cast<double>((sq.array() < threshold * threshold).count()) / static_cast<double>(sq.size());
}

double f_score(double precision, double recall) {
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

}  // namespace

double one_sided_cd(const Points& points, const TriangleMesh& reference, int threads) {
  if (points.cols() == 0) throw Error(ErrorKind::InvalidInput, "one-sided distance of an empty point set");
  if (reference.triangle_count() == 0) throw Error(ErrorKind::InvalidInput, "reference mesh has no triangles");
  const MeshBvh bvh(reference);
  const double diag = reference.bounds().diagonal().norm();
  const double floor2 = (kSurfaceFloor * diag) * (kSurfaceFloor * diag);
  Eigen::VectorXd sq(points.cols());
  parallel_for(points.cols(), threads, [&](Index i) {
    const double d2 = bvh.closest(points.col(i)).sq_distance;
    sq(i) = d2 < floor2 ? 0.0 : d2;
  });
  return sq.mean();
}

std::vector<Index> edge_filter(const Points& points, const std::vector<Segment>& features, double tol) {
  std::vector<Index> out;
  const double tol2 = tol * tol;
  for (Index i = 0; i < points.cols(); ++i) {
    const Vector3 p = points.col(i);
    for (const auto& s : features)
      if (point_segment_sq_distance(p, s.a, s.b) < tol2) {
        out.push_back(i);
        break;
      }
  }
  return out;
}

MeshScores mesh_metrics(const TriangleMesh& pred, const TriangleMesh& gt, const MetricsOptions& options) {
  if (pred.triangle_count() == 0 || gt.triangle_count() == 0)
    throw Error(ErrorKind::InvalidInput, "metrics need non-empty meshes");
  std::mt19937_64 rng_p(options.seed), rng_g(options.seed);
  const SurfaceSamples sp = sample_surface(pred, options.n_samples, rng_p);
  const SurfaceSamples sg = sample_surface(gt, options.n_samples, rng_g);
  const SurfaceDistances p2g = against(sp, gt, options.threads);
  const SurfaceDistances g2p = against(sg, pred, options.threads);
  MeshScores s;
  s.cd = 0.5 * (p2g.sq_distance.mean() + g2p.sq_distance.mean());
  s.f1 = f_score(fraction_within(p2g.sq_distance, options.f1_threshold),
                 fraction_within(g2p.sq_distance, options.f1_threshold));
  s.nc = 0.5 * (p2g.abs_cos.mean() + g2p.abs_cos.mean());
  return s;
}

SurfaceSamples edge_samples(const TriangleMesh& mesh, const MetricsOptions& options) {
  std::mt19937_64 rng(options.seed);
  const SurfaceSamples s = sample_surface(mesh, options.n_samples, rng);
  const NeighborQuery index(s.points);
  const double cos_limit = std::cos(options.edge_angle);
  const Index n = s.points.cols();
  std::vector<char> edge(static_cast<std::size_t>(n), 0);
  parallel_for(n, options.threads, [&](Index i) {
    for (const auto& h : index.radius(i, options.edge_radius))
      if (s.normals.col(i).dot(s.normals.col(h.index)) < cos_limit) {
        edge[static_cast<std::size_t>(i)] = 1;
        return;
      }
  });
  SurfaceSamples out;
  const Index m = static_cast<Index>(std::count(edge.begin(), edge.end(), 1));
  out.points.resize(3, m);
  out.normals.resize(3, m);
  Index k = 0;
  for (Index i = 0; i < n; ++i) {
    if (!edge[static_cast<std::size_t>(i)]) continue;
    out.points.col(k) = s.points.col(i);
    out.normals.col(k) = s.normals.col(i);
    out.triangles.push_back(s.triangles[static_cast<std::size_t>(i)]);
    ++k;
  }
  return out;
}

std::pair<double, double> point_set_cd_f1(const Points& a, const Points& b, double threshold, int threads) {
  if (a.cols() == 0 || b.cols() == 0) throw Error(ErrorKind::InvalidInput, "empty point set");
  auto nearest = [&](const Points& from, const Points& to) {
    const NeighborQuery index(to);
    Eigen::VectorXd sq(from.cols());
    parallel_for(from.cols(), threads, [&](Index i) { sq(i) = index.nearest(from.col(i)).sq_distance; });
    return sq;
  };
  const Eigen::VectorXd ab = nearest(a, b), ba = nearest(b, a);
  const double cd = 0.5 * (ab.mean() + ba.mean());
  return {cd, f_score(fraction_within(ab, threshold), fraction_within(ba, threshold))};
}

EdgeScores edge_metrics(const TriangleMesh& pred, const TriangleMesh& gt, const MetricsOptions& options) {
  const SurfaceSamples ep = edge_samples(pred, options);
  const SurfaceSamples eg = edge_samples(gt, options);
  EdgeScores s;
  s.pred_edge_samples = ep.points.cols();
  s.gt_edge_samples = eg.points.cols();
  if (s.pred_edge_samples == 0 || s.gt_edge_samples == 0) return s;
  const auto [cd, f1] = point_set_cd_f1(ep.points, eg.points, options.f1_threshold, options.threads);
  s.ecd = cd;
  s.ef1 = f1;
  return s;
}

}  // namespace rfeps
