#pragma once

#include "rfeps/common.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace rfeps {

enum class PointLabel : std::uint8_t { OffEdge = 0, EdgeZone = 1, GeneratedEdge = 2 };

/// Points with unit normals, per-point stage label and power weight.
struct OrientedCloud {
  Points positions;
  Points normals;
  std::vector<PointLabel> labels;
  Eigen::VectorXd weights;

  OrientedCloud() = default;
  /// Off-edge points with zero weights. Normals default to +z when not given.
  explicit OrientedCloud(Points positions_in, Points normals_in = {});

  Index size() const { return static_cast<Index>(positions.cols()); }
  bool empty() const { return positions.cols() == 0; }

  void append(const Vector3& position, const Vector3& normal, PointLabel label, double weight);
  Index count(PointLabel label) const;
};

/// Throws InvalidInput describing the first violated invariant.
void validate(const OrientedCloud& cloud, double normal_tol = 1e-9);

/// x_normalized = scale * (x - center).
struct AffineRecord {
  Vector3 center = Vector3::Zero();
  double scale = 1.0;

  Vector3 apply(const Vector3& x) const { return scale * (x - center); }
  Vector3 invert(const Vector3& y) const { return y / scale + center; }
  Points apply(const Points& x) const { return (scale * (x.colwise() - center)).eval(); }
  Points invert(const Points& y) const { return ((y / scale).colwise() + center).eval(); }
};

struct PipelineConfig {
  double xi = 0.1;
  double radius_mult = 2.0;
  double mu = 0.01;
  double weight_mult = 8.0;
  double grad_tol = 1e-4;
  double proj_tol = 1e-6;
  double angle_thresh = std::numbers::pi / 6;
  double cost_thresh = 0.25;
  double eps_denom = 1e-4;
  int thread_count = 0;  // 0 = default_thread_count()

  int pca_neighbors = 16;
  int denoise_sweeps = 3;
  int refine_sweeps = 3;
  int max_iterations = 500;
  double eps_clamp = 3.0;    // |eps| <= eps_clamp * delta
  double dedup_mult = 0.25;  // generated points closer than dedup_mult * delta are merged
  bool weighted_omt = true;
  bool power_weights = true;

  int threads() const { return thread_count > 0 ? thread_count : default_thread_count(); }
  /// Throws InvalidInput if a field is out of range.
  void validate() const;
};

/// Maps the cloud into [-0.5, 0.5]^3: bounding box centered, longest side 1.
std::pair<OrientedCloud, AffineRecord> normalize(const OrientedCloud& cloud);
AffineRecord normalizing_transform(const Points& positions);

/// Mean of every point's six nearest-neighbor distances (self excluded).
double average_gap(const Points& positions, int threads = 0);

}  // namespace rfeps
