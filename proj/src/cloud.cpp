#include "rfeps/cloud.hpp"

#include "rfeps/neighbor_query.hpp"

#include <numeric>
#include <sstream>

namespace rfeps {

OrientedCloud::OrientedCloud(Points positions_in, Points normals_in) : positions(std::move(positions_in)) {
  const Index n = positions.cols();
  if (normals_in.cols() == n) {
    normals = std::move(normals_in);
  } else {
    normals = Points::Zero(3, n);
    normals.row(2).setOnes();
  }
  labels.assign(static_cast<std::size_t>(n), PointLabel::OffEdge);
  weights = Eigen::VectorXd::Zero(n);
}

void OrientedCloud::append(const Vector3& position, const Vector3& normal, PointLabel label, double weight) {
  const Index n = size();
  positions.conservativeResize(3, n + 1);
  normals.conservativeResize(3, n + 1);
  weights.conservativeResize(n + 1);
  positions.col(n) = position;
  normals.col(n) = normal;
  weights(n) = weight;
  labels.push_back(label);
}

Index OrientedCloud::count(PointLabel label) const {
  return std::count(labels.begin(), labels.end(), label);
}

void validate(const OrientedCloud& cloud, double normal_tol) {
  const Index n = cloud.positions.cols();
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidInput, msg); };
  if (cloud.normals.cols() != n || static_cast<Index>(cloud.labels.size()) != n || cloud.weights.size() != n)
    fail("per-point arrays differ in length");
  for (Index i = 0; i < n; ++i) {
    if (!cloud.positions.col(i).allFinite()) fail("non-finite position at " + std::to_string(i));
    if (std::abs(cloud.normals.col(i).norm() - 1.0) > normal_tol) fail("non-unit normal at " + std::to_string(i));
    const double w = cloud.weights(i);
    if (!(w >= 0)) fail("negative weight at " + std::to_string(i));
    if (w > 0 && cloud.labels[i] != PointLabel::GeneratedEdge)
      fail("positive weight on a non-generated point at " + std::to_string(i));
  }
}

void PipelineConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0) || !std::isfinite(v)) throw Error(ErrorKind::InvalidInput, std::string(name) + " must be > 0");
  };
  positive(xi, "xi");
  positive(radius_mult, "radius_mult");
  positive(mu, "mu");
  positive(weight_mult, "weight_mult");
  positive(grad_tol, "grad_tol");
  positive(proj_tol, "proj_tol");
  positive(cost_thresh, "cost_thresh");
  positive(eps_denom, "eps_denom");
  positive(eps_clamp, "eps_clamp");
  positive(dedup_mult, "dedup_mult");
  if (!(angle_thresh > 0 && angle_thresh < std::numbers::pi / 2))
    throw Error(ErrorKind::InvalidInput, "angle_thresh must lie in (0, pi/2)");
  if (thread_count < 0) throw Error(ErrorKind::InvalidInput, "thread_count must be >= 0");
  if (pca_neighbors < 3) throw Error(ErrorKind::InvalidInput, "pca_neighbors must be >= 3");
  if (max_iterations < 1) throw Error(ErrorKind::InvalidInput, "max_iterations must be >= 1");
}

AffineRecord normalizing_transform(const Points& positions) {
  if (positions.cols() == 0) throw Error(ErrorKind::InvalidInput, "empty cloud");
  const Vector3 lo = positions.rowwise().minCoeff();
  const Vector3 hi = positions.rowwise().maxCoeff();
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0)) throw Error(ErrorKind::DegenerateInput, "all points coincide");
  AffineRecord t;
  t.center = 0.5 * (lo + hi);
  t.scale = 1.0 / extent;
  return t;
}

std::pair<OrientedCloud, AffineRecord> normalize(const OrientedCloud& cloud) {
  const AffineRecord t = normalizing_transform(cloud.positions);
  OrientedCloud out = cloud;
  out.positions = t.apply(cloud.positions);
  out.weights = cloud.weights * (t.scale * t.scale);
  return {std::move(out), t};
}

double average_gap(const Points& positions, int threads) {
  const Index n = positions.cols();
  if (n < 7) throw Error(ErrorKind::InvalidInput, "average gap needs at least 7 points");
  const NeighborQuery index(positions);
  std::vector<double> sums(static_cast<std::size_t>(n), 0.0);
  parallel_for(n, threads, [&](Index i) {
    double s = 0;
    for (const auto& h : index.knn(i, 6)) s += std::sqrt(h.sq_distance);
    sums[static_cast<std::size_t>(i)] = s;
  });
  // Fixed-order reduction keeps the result independent of the worker count.
  return std::accumulate(sums.begin(), sums.end(), 0.0) / (6.0 * static_cast<double>(n));
}

}  // namespace rfeps
