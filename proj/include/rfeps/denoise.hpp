#pragma once

#include "rfeps/cloud.hpp"
#include "rfeps/solver.hpp"

#include <vector>

namespace rfeps {

/// Oriented PCA normals: least-eigenvalue direction of each point's k-NN
/// patch, signs made consistent by propagation along a minimum spanning tree
/// of the k-NN graph (edge cost 1 - |n_a . n_b|). The highest point of each
/// connected component is oriented towards +z. Rank-deficient patches are
/// filled from the nearest reliable point.
Points init_normals(const Points& positions, int k, int threads = 0, Diagnostics* diag = nullptr);

/// sum_j (x_i - x_j)(x_i - x_j)^T over the given neighbors of i.
Matrix3 local_covariance(const Points& positions, Index i, const std::vector<Index>& neighbors);

/// Local planarity energy
///   sum_i ||M_i n_i||^2 + xi * sum_i eps_i^2,
/// with M_i the covariance of the displaced positions base_i + eps_i n_i over
/// `neighbors[i]`. Lengths (and eps) are measured in units of `scale`, so the
/// balance against xi does not depend on sampling density. Neighbor lists
/// must be symmetric.
struct PlanarityTerms {
  Points base;
  std::vector<std::vector<Index>> neighbors;
  double xi = 0;
  double scale = 1;
};

/// eps in model units.
double planarity_energy(const PlanarityTerms& terms, const Eigen::VectorXd& eps, const Points& normals);

/// The energy as a problem over x = (eps_i / scale, u_i, v_i) for every point
/// (or eps only when with_normals is false). Normal i lives in a chart
/// centred on normals.col(i); x0 receives the point matching (eps, normals).
ConstrainedProblem planarity_problem(const PlanarityTerms& terms, const Eigen::VectorXd& eps, const Points& normals,
                                     bool with_normals, Eigen::VectorXd* x0 = nullptr);

struct SweepOptions {
  int sweeps = 3;
  bool optimize_normals = true;
  double eps_bound = 3.0;  // |eps| <= eps_bound * scale
  double grad_tol = 1e-4;
  int max_iterations = 500;
  int threads = 0;
};

struct SweepResult {
  Eigen::VectorXd eps;
  Points normals;
  std::vector<double> energy;  // before the first sweep, then after each sweep
  Index failed_blocks = 0;
  Index isolated = 0;
};

/// Block sweeps: every point's (eps, u, v) is minimized with all other points
/// frozen, blocks solved concurrently and applied together. A combined update
/// that raises the energy is damped by halving until it does not.
SweepResult minimize_planarity(const PlanarityTerms& terms, const Eigen::VectorXd& eps0, const Points& normals0,
                               const SweepOptions& options);

struct DenoiseResult {
  OrientedCloud cloud;  // displaced positions, optimized normals
  Eigen::VectorXd eps;
  std::vector<double> energy;
  Index isolated = 0;
  Diagnostics diagnostics;
};

/// Moves points along their normals and rotates the normals to make every
/// r-ball locally planar, r = radius_mult * delta. The cloud's normals are the
/// starting normals; eps starts at 0.
DenoiseResult denoise(const OrientedCloud& cloud, const PipelineConfig& config, double delta);

}  // namespace rfeps
