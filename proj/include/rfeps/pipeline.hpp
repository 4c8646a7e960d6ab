#pragma once

#include "rfeps/cloud.hpp"
#include "rfeps/edge_zone.hpp"
#include "rfeps/mesh.hpp"
#include "rfeps/metrics.hpp"
#include "rfeps/synthetic.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rfeps {

/// Wall-clock seconds per stage.
struct StageTiming {
  double t_denoise = 0;  // normal estimation plus denoising
  double t_edgezone = 0;
  double t_regularize = 0;
  double t_refine = 0;
  double t_generate = 0;
  double t_rpd = 0;  // projection, diagram and dual extraction
  double total = 0;
  Index point_count = 0;

  double stage_sum() const { return t_denoise + t_edgezone + t_regularize + t_refine + t_generate + t_rpd; }
};

struct PipelineOptions {
  PipelineConfig config;
  bool estimate_normals = true;  // PCA normals; otherwise the input normals are used
  bool keep_stages = false;
  /// Called on the (normalized) cloud right after normal estimation.
  std::function<void(OrientedCloud&)> after_normals;
};

struct PipelineResult {
  OrientedCloud augmented;  // input coordinates; weights in squared input units
  std::optional<TriangleMesh> mesh;
  std::vector<Index> mesh_vertex_source;  // augmented-cloud index of each mesh vertex
  std::vector<std::pair<std::string, OrientedCloud>> stages;  // with keep_stages
  StageTiming timing;
  double delta = 0;             // input units
  double delta_normalized = 0;  // after normalization
  AffineRecord transform;
  Index edge_zone_count = 0;
  Index generated_count = 0;
  Index dropped_sites = 0;
  Diagnostics diagnostics;

  bool partial() const { return !mesh.has_value(); }
};

/// Normalizes, then runs denoising, edge-zone detection, normal
/// regularization, refinement, edge-point generation and, when a base
/// surface is given, the restricted power diagram and its dual. Stage errors
/// are rethrown prefixed with the stage name.
PipelineResult run_pipeline(const OrientedCloud& input, const TriangleMesh* base, const PipelineOptions& options);

/// Drops sites within tol of a site of larger weight (ties: lower index
/// wins). Returns the kept indices in ascending order.
std::vector<Index> distinct_sites(const Points& positions, const Eigen::VectorXd& weights, double tol);

struct ProfileSample {
  double offset = 0;  // signed surface distance from the crease
  Vector3 position = Vector3::Zero();
  double cost = 0;
  double angle = 0;
  bool sparse = false;
};

/// Transport cost and cluster angle at evenly spaced surface points on the
/// path from face_a (at distance `reach` from the crease point) through the
/// crease point and out along face_b. Directions must be unit and point away
/// from the crease within each face.
std::vector<ProfileSample> profile_scan(const OrientedCloud& cloud, const PipelineConfig& config, double delta,
                                        const Vector3& crease_point, const Vector3& along_a, const Vector3& along_b,
                                        double reach, int samples);

/// Profile across the crease of a wedge fixture at its middle.
std::vector<ProfileSample> wedge_profile(const SyntheticShape& wedge, double dihedral, const PipelineConfig& config,
                                         int samples, double reach_in_r = 4.0);

struct QualityScores {
  std::optional<MeshScores> mesh;
  EdgeScores edge;
  std::optional<double> ocd, oecd;
};

/// Reconstruction and consolidation quality of a run against a fixture.
QualityScores evaluate(const PipelineResult& run, const SyntheticShape& fixture, const MetricsOptions& options);

struct SweepRow {
  std::string parameter;
  double value = 0;
  QualityScores scores;
  // Relative to the default configuration (0 / 0 counts as 1).
  double cd_ratio = 1, f1_ratio = 1, nc_ratio = 1;
  std::optional<double> ecd_ratio, ef1_ratio;
};

/// Reruns the fixture with one parameter replaced by each value.
/// Parameters: xi, radius_mult, mu, weight_mult.
std::vector<SweepRow> sweep(const std::string& parameter, const std::vector<double>& values,
                            const SyntheticShape& fixture, const PipelineOptions& base_options,
                            const MetricsOptions& metrics);

/// Writes a parameter to the configuration; throws InvalidInput for unknown names.
void set_parameter(PipelineConfig& config, const std::string& name, double value);
double get_parameter(const PipelineConfig& config, const std::string& name);

}  // namespace rfeps
