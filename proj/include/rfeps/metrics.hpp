#pragma once

#include "rfeps/io.hpp"
#include "rfeps/mesh.hpp"

#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

namespace rfeps {

struct MetricsOptions {
  Index n_samples = 100000;
  double f1_threshold = 0.005;
  double edge_angle = std::numbers::pi / 6;  // neighbor normals deviating more than this mark an edge sample
  double edge_radius = 0.01;
  double feature_tol = 0.005;  // point-to-feature-line distance for the edge-restricted one-sided distance
  std::uint64_t seed = 0;
  int threads = 0;
};

/// Mean squared distance from the points to the mesh surface.
double one_sided_cd(const Points& points, const TriangleMesh& reference, int threads = 0);

/// Indices of the points closer than tol to some segment.
std::vector<Index> edge_filter(const Points& points, const std::vector<Segment>& features, double tol = 0.005);

struct MeshScores {
  double cd = 0;
  double f1 = 0;
  double nc = 0;
};

/// Surface samples of both meshes (same seed) measured against the other surface:
/// CD is the mean of the two one-sided squared-distance means, F1 uses the
/// distance threshold, NC averages |n_pred . n_gt| at the closest points.
MeshScores mesh_metrics(const TriangleMesh& pred, const TriangleMesh& gt, const MetricsOptions& options = {});

/// Surface samples whose normal deviates by more than edge_angle from some
/// sample within edge_radius.
SurfaceSamples edge_samples(const TriangleMesh& mesh, const MetricsOptions& options = {});

struct EdgeScores {
  std::optional<double> ecd;  // absent when either mesh has no edge samples
  std::optional<double> ef1;
  Index pred_edge_samples = 0;
  Index gt_edge_samples = 0;
};

/// Chamfer distance and F-score between the edge-sample sets of the two meshes.
EdgeScores edge_metrics(const TriangleMesh& pred, const TriangleMesh& gt, const MetricsOptions& options = {});

/// Symmetric nearest-neighbor Chamfer distance and F-score between point sets.
std::pair<double, double> point_set_cd_f1(const Points& a, const Points& b, double threshold, int threads = 0);

struct MetricsReport {
  std::optional<double> ocd, oecd, cd, f1, nc, ecd, ef1;
  Index sample_count = 0;
  double f1_threshold = 0.005;
  double feature_tol = 0.005;
};

}  // namespace rfeps
