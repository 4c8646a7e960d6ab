#pragma once

#include "rfeps/cloud.hpp"
#include "rfeps/denoise.hpp"
#include "rfeps/edge_zone.hpp"
#include "rfeps/neighbor_query.hpp"

#include <array>
#include <vector>

namespace rfeps {

using NormalTriple = std::array<Vector3, 3>;

/// Relaxed three-normal cost
///   sum_j w_j sum_d l_jd |n_j - m_d|^2 / sum_j w_j,
/// each neighbor's (l_j1, l_j2, l_j3) on the unit simplex.
double cluster_cost(const NormalPatch& patch, const Eigen::MatrixXd& lambdas, const NormalTriple& m);

/// Problem over x = (u_1, v_1, u_2, v_2, u_3, v_3, l_01, l_02, l_03, l_11, ...).
ConstrainedProblem cluster_problem(const NormalPatch& patch, const NormalTriple& start,
                                   const Eigen::MatrixXd& lambdas0, Eigen::VectorXd* x0 = nullptr);

struct ClusterFit {
  NormalTriple normals;
  Eigen::MatrixXd lambdas;  // k x 3
  double cost = 0;
  Vector3 dominant = Vector3::UnitZ();
  bool collapsed = false;  // two normals within 1e-3 rad were merged
};

/// 3-means start with uniform lambdas, then exact alternating polish.
/// The dominant normal is the one carrying the largest total lambda after
/// merging normals closer than 1e-3 rad; ties go to the lexicographically
/// smallest normal.
ClusterFit solve_clusters(const NormalPatch& patch, double grad_tol = 1e-4, int max_iterations = 500);

struct RegularizeResult {
  Points normals;
  Index updated = 0;
  Index kept = 0;  // fewer than 3 non-edge-zone neighbors
  Diagnostics diagnostics;
};

/// Replaces every EdgeZone point's normal by the dominant normal of its
/// off-edge neighbors (edge-zone neighbors carry no mass).
RegularizeResult regularize_normals(const OrientedCloud& cloud, const NeighborQuery& index,
                                    const PipelineConfig& config, double delta);

struct RefineResult {
  OrientedCloud cloud;
  Eigen::VectorXd eps;
  std::vector<double> energy;
  Index unmoved = 0;  // no neighbor with a similar normal
};

/// Moves points along their fixed normals to flatten each neighborhood
/// restricted to neighbors whose normal is within angle_thresh.
RefineResult refine_positions(const OrientedCloud& cloud, const NeighborQuery& index, const PipelineConfig& config,
                              double delta);

/// Neighbors with similar normals: angle(n_i, n_j) <= angle_thresh, r-ball.
std::vector<std::vector<Index>> similar_neighbors(const OrientedCloud& cloud, const NeighborQuery& index,
                                                  double radius, double angle_thresh, int threads = 0);

struct ProjectionResult {
  Index source = -1;
  Vector3 z = Vector3::Zero();
  double residual = 0;         // at z
  double source_residual = 0;  // at the source point
};

/// sum_j ((z - p_j) . n_j)^2 + mu |z - p|^2
double edge_residual(const Vector3& z, const Vector3& p, const Points& pts, const Points& nrm, double mu);
/// Closed-form minimizer: (sum n_j n_j^T + mu I) z = sum n_j n_j^T p_j + mu p.
Vector3 edge_point(const Vector3& p, const Points& pts, const Points& nrm, double mu);
/// The same objective for the iterative solver (x = z).
ConstrainedProblem edge_problem(const Vector3& p, const Points& pts, const Points& nrm, double mu);

ProjectionResult project_to_edge(Index i, const OrientedCloud& cloud, const NeighborQuery& index,
                                 const PipelineConfig& config, double delta);

struct AugmentResult {
  OrientedCloud cloud;
  Index generated = 0;  // after merging
  Index merged = 0;     // projections absorbed into another
};

/// Original points followed by the projections labeled GeneratedEdge with
/// weight weight_mult * delta^2. Projections closer than dedup_mult * delta
/// to an earlier cluster seed join it; each cluster becomes its centroid.
AugmentResult augment(const OrientedCloud& cloud, const std::vector<ProjectionResult>& projections,
                      const PipelineConfig& config, double delta);

}  // namespace rfeps
