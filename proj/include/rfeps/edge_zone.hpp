#pragma once

#include "rfeps/cloud.hpp"
#include "rfeps/neighbor_query.hpp"
#include "rfeps/solver.hpp"

#include <optional>
#include <vector>

namespace rfeps {

/// Neighbor normals of one patch with their transport weights
/// 1 / (|p_i - p_j|^2 + eps_denom) (or 1 when unweighted).
struct NormalPatch {
  Points normals;
  Eigen::VectorXd weights;
  std::vector<Index> indices;  // source points, may be empty

  Index size() const { return static_cast<Index>(normals.cols()); }
};

NormalPatch make_patch(const Vector3& center, const Points& positions, const Points& normals,
                       const std::vector<Index>& neighbors, double eps_denom, bool weighted);

/// Spherical k-means on the patch normals, seeded with the normal farthest
/// from the mean and then farthest-point picks. Coincident seeds are split by
/// rotating by 1e-3 rad. Centers are unit vectors.
std::vector<Vector3> spherical_kmeans(const Points& normals, int clusters, int iterations = 50);

/// Balanced two-normal transport cost
///   sum_j w_j [l_j |n_j - a|^2 + (1 - l_j) |n_j - b|^2] / sum_j w_j,
/// with 0 <= l_j <= 1 and sum_j l_j = k/2.
double omt_cost(const NormalPatch& patch, const Eigen::VectorXd& lambdas, const Vector3& a, const Vector3& b);

/// The same cost as a problem over x = (u_a, v_a, u_b, v_b, l_0 .. l_{k-1}),
/// each normal in a chart centred on the given start normals. x0 receives the
/// point for (a0, b0, lambdas0).
ConstrainedProblem omt_problem(const NormalPatch& patch, const Vector3& a0, const Vector3& b0,
                               const Eigen::VectorXd& lambdas0, Eigen::VectorXd* x0 = nullptr);

struct OmtResult {
  double cost = 0;
  Vector3 n_hat1 = Vector3::UnitZ();
  Vector3 n_hat2 = Vector3::UnitZ();
  double angle = 0;
  Eigen::VectorXd lambdas;  // mass sent to n_hat1
};

/// Minimizes the balanced cost from the 2-means start with lambdas 0.5, then
/// polishes by exact alternating steps. The pair is ordered lexicographically
/// (lambdas follow the swap).
OmtResult solve_omt(const NormalPatch& patch, double grad_tol = 1e-4, int max_iterations = 500);

struct EdgeZoneEntry {
  double cost = 0;
  Vector3 n_hat1 = Vector3::UnitZ();
  Vector3 n_hat2 = Vector3::UnitZ();
  double angle = 0;
  Eigen::VectorXd lambdas;
  PointLabel classification = PointLabel::OffEdge;
  bool sparse = false;  // fewer than 4 neighbors: cost is +inf
};

PointLabel classify(double angle, double cost, const PipelineConfig& config);
inline PointLabel classify(const EdgeZoneEntry& e, const PipelineConfig& config) {
  return classify(e.angle, e.cost, config);
}

/// Transport cost of the r-ball around an arbitrary location p
/// (r = radius_mult * delta); `exclude` drops a cloud point (the base point itself).
EdgeZoneEntry omt_at(const Vector3& p, const OrientedCloud& cloud, const NeighborQuery& index,
                     const PipelineConfig& config, double delta, std::optional<Index> exclude = {});

struct EdgeZoneReport {
  std::vector<EdgeZoneEntry> entries;
  Index edge_count = 0;
  Index sparse_count = 0;
  Diagnostics diagnostics;
};

/// Evaluates and classifies every point; the index must be built on cloud.positions.
EdgeZoneReport detect_edge_zone(const OrientedCloud& cloud, const NeighborQuery& index, const PipelineConfig& config,
                                double delta);

}  // namespace rfeps
