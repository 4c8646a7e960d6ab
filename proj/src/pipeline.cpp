#include "rfeps/pipeline.hpp"

#include "rfeps/consolidate.hpp"
#include "rfeps/denoise.hpp"
#include "rfeps/neighbor_query.hpp"
#include "rfeps/rpd.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace rfeps {

namespace {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

template <typename F>
auto in_stage(const char* stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const Error& e) {
    std::string what = e.what();
    const std::string prefix = std::string(to_string(e.kind())) + ": ";
    if (what.rfind(prefix, 0) == 0) what = what.substr(prefix.size());
    throw Error(e.kind(), std::string(stage) + ": " + what);
  }
}

double ratio(double value, double reference) {
  if (value == reference) return 1.0;
  return reference != 0 ? value / reference : std::numeric_limits<double>::infinity();
}

std::optional<double> ratio(const std::optional<double>& value, const std::optional<double>& reference) {
  if (!value || !reference) return std::nullopt;
  return ratio(*value, *reference);
}

}  // namespace

std::vector<Index> distinct_sites(const Points& positions, const Eigen::VectorXd& weights, double tol) {
  const Index n = positions.cols();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return weights(a) > weights(b); });
  const NeighborQuery index(positions);
  std::vector<char> kept(static_cast<std::size_t>(n), 0);
  for (Index i : order) {
    bool clash = false;
    for (const auto& h : index.radius(i, tol))
      if (kept[static_cast<std::size_t>(h.index)]) {
        clash = true;
        break;
      }
    if (!clash) kept[static_cast<std::size_t>(i)] = 1;
  }
  std::vector<Index> out;
  for (Index i = 0; i < n; ++i)
    if (kept[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

PipelineResult run_pipeline(const OrientedCloud& input, const TriangleMesh* base, const PipelineOptions& options) {
  const PipelineConfig& config = options.config;
  config.validate();
  validate(input, options.estimate_normals ? std::numeric_limits<double>::infinity() : 1e-6);
  const int threads = config.threads();
  PipelineResult out;
  Stopwatch total, clock;

  auto [cloud, tf] = in_stage("normalize", [&] { return normalize(input); });
  out.transform = tf;
  out.timing.point_count = cloud.size();
  auto keep = [&](const char* name, const OrientedCloud& c) {
    if (!options.keep_stages) return;
    OrientedCloud copy = c;
    copy.positions = tf.invert(c.positions);
    copy.weights = c.weights / (tf.scale * tf.scale);
    out.stages.emplace_back(name, std::move(copy));
  };

  // Step 1: normals and denoising.
  const double delta = in_stage("denoise", [&] { return average_gap(cloud.positions, threads); });
  out.delta_normalized = delta;
  out.delta = delta / tf.scale;
  in_stage("denoise", [&] {
    if (options.estimate_normals) cloud.normals = init_normals(cloud.positions, config.pca_neighbors, threads, &out.diagnostics);
    if (options.after_normals) options.after_normals(cloud);
    DenoiseResult d = denoise(cloud, config, delta);
    out.diagnostics.merge(d.diagnostics);
    cloud = std::move(d.cloud);
    return 0;
  });
  out.timing.t_denoise = clock.lap();
  keep("denoised", cloud);

  // Step 2: edge zone.
  NeighborQuery index(cloud.positions);
  in_stage("edge_zone", [&] {
    const EdgeZoneReport rep = detect_edge_zone(cloud, index, config, delta);
    for (Index i = 0; i < cloud.size(); ++i)
      cloud.labels[static_cast<std::size_t>(i)] = rep.entries[static_cast<std::size_t>(i)].classification;
    out.edge_zone_count = rep.edge_count;
    out.diagnostics.merge(rep.diagnostics);
    return 0;
  });
  out.timing.t_edgezone = clock.lap();
  keep("edge_zone", cloud);

  // Step 3: normal regularization.
  in_stage("regularize", [&] {
    RegularizeResult reg = regularize_normals(cloud, index, config, delta);
    cloud.normals = std::move(reg.normals);
    out.diagnostics.merge(reg.diagnostics);
    return 0;
  });
  out.timing.t_regularize = clock.lap();
  keep("regularized", cloud);

  // Step 4: refinement.
  in_stage("refine", [&] {
    RefineResult ref = refine_positions(cloud, index, config, delta);
    cloud = std::move(ref.cloud);
    return 0;
  });
  index = NeighborQuery(cloud.positions);
  out.timing.t_refine = clock.lap();
  keep("refined", cloud);

  // Step 5: edge points.
  OrientedCloud augmented = in_stage("generate", [&] {
    std::vector<Index> zone;
    for (Index i = 0; i < cloud.size(); ++i)
      if (cloud.labels[static_cast<std::size_t>(i)] == PointLabel::EdgeZone) zone.push_back(i);
    std::vector<ProjectionResult> proj(zone.size());
    parallel_for(static_cast<Index>(zone.size()), threads, [&](Index k) {
      proj[static_cast<std::size_t>(k)] = project_to_edge(zone[static_cast<std::size_t>(k)], cloud, index, config, delta);
    });
    AugmentResult aug = augment(cloud, proj, config, delta);
    out.generated_count = aug.generated;
    return std::move(aug.cloud);
  });
  out.timing.t_generate = clock.lap();

  // Steps 6-7: restricted power diagram and its dual.
  if (base != nullptr) {
    in_stage("rpd", [&] {
      TriangleMesh nbase = *base;
      nbase.vertices = tf.apply(base->vertices);
      OrientedCloud sites_cloud = augmented;
      if (!config.power_weights) sites_cloud.weights.setZero();
      const WeightedSites all = project_sites(sites_cloud, nbase, threads);
      Eigen::AlignedBox3d box = nbase.bounds();
      box.extend(Eigen::AlignedBox3d(all.positions.rowwise().minCoeff(), all.positions.rowwise().maxCoeff()));
      const std::vector<Index> kept = distinct_sites(all.positions, all.weights, 1e-9 * box.diagonal().norm());
      WeightedSites sites;
      sites.positions.resize(3, static_cast<Index>(kept.size()));
      sites.weights.resize(static_cast<Index>(kept.size()));
      for (std::size_t k = 0; k < kept.size(); ++k) {
        sites.positions.col(static_cast<Index>(k)) = all.positions.col(kept[k]);
        sites.weights(static_cast<Index>(k)) = all.weights(kept[k]);
        sites.source.push_back(kept[k]);
      }
      if (kept.size() < all.source.size())
        out.diagnostics.warn(std::to_string(all.source.size() - kept.size()) + " coincident sites dropped");
      RpdOptions ro;
      ro.threads = threads;
      const RestrictedPowerDiagram rpd = compute_rpd(sites, nbase, ro);
      out.diagnostics.merge(rpd.diagnostics);
      DualMesh dual = extract_dual(rpd, augmented);
      out.diagnostics.merge(dual.diagnostics);
      out.dropped_sites = dual.dropped_sites + static_cast<Index>(all.source.size() - kept.size());
      dual.mesh.vertices = tf.invert(dual.mesh.vertices);
      for (Index s : dual.vertex_site) out.mesh_vertex_source.push_back(sites.source[static_cast<std::size_t>(s)]);
      out.mesh = std::move(dual.mesh);
      return 0;
    });
    out.timing.t_rpd = clock.lap();
  } else {
    out.diagnostics.warn("no base surface: stopped after augmentation");
  }

  augmented.positions = tf.invert(augmented.positions);
  augmented.weights /= tf.scale * tf.scale;
  out.augmented = std::move(augmented);
  if (options.keep_stages) out.stages.emplace_back("augmented", out.augmented);
  out.timing.total = total.lap();
  return out;
}

std::vector<ProfileSample> profile_scan(const OrientedCloud& cloud, const PipelineConfig& config, double delta,
                                        const Vector3& crease_point, const Vector3& along_a, const Vector3& along_b,
                                        double reach, int samples) {
  if (samples < 2) throw Error(ErrorKind::InvalidInput, "profile needs at least 2 samples");
  const NeighborQuery index(cloud.positions);
  std::vector<ProfileSample> out(static_cast<std::size_t>(samples));
  parallel_for(samples, config.threads(), [&](Index k) {
    ProfileSample& s = out[static_cast<std::size_t>(k)];
    s.offset = -reach + 2 * reach * static_cast<double>(k) / (samples - 1);
    s.position = s.offset < 0 ? Vector3(crease_point - s.offset * along_a) : Vector3(crease_point + s.offset * along_b);
    const EdgeZoneEntry e = omt_at(s.position, cloud, index, config, delta);
    s.cost = e.cost;
    s.angle = e.angle;
    s.sparse = e.sparse;
  });
  return out;
}

std::vector<ProfileSample> wedge_profile(const SyntheticShape& wedge, double dihedral, const PipelineConfig& config,
                                         int samples, double reach_in_r) {
  if (wedge.features.empty()) throw Error(ErrorKind::InvalidInput, "wedge fixture has no crease");
  const Vector3 mid = 0.5 * (wedge.features[0].a + wedge.features[0].b);
  const double delta = average_gap(wedge.cloud.positions, config.threads());
  const Vector3 face(std::cos(dihedral), 0, std::sin(dihedral));
  return profile_scan(wedge.cloud, config, delta, mid, face, Vector3::UnitX(), reach_in_r * config.radius_mult * delta,
                      samples);
}

QualityScores evaluate(const PipelineResult& run, const SyntheticShape& fixture, const MetricsOptions& options) {
  QualityScores q;
  if (run.mesh) {
    q.mesh = mesh_metrics(*run.mesh, fixture.ground_truth, options);
    q.edge = edge_metrics(*run.mesh, fixture.ground_truth, options);
  }
  q.ocd = one_sided_cd(run.augmented.positions, fixture.ground_truth, options.threads);
  const std::vector<Index> near = edge_filter(run.augmented.positions, fixture.features, options.feature_tol);
  if (!near.empty()) {
    Points sub(3, static_cast<Index>(near.size()));
    for (std::size_t k = 0; k < near.size(); ++k) sub.col(static_cast<Index>(k)) = run.augmented.positions.col(near[k]);
    q.oecd = one_sided_cd(sub, fixture.ground_truth, options.threads);
  }
  return q;
}

void set_parameter(PipelineConfig& config, const std::string& name, double value) {
  if (name == "xi")
    config.xi = value;
  else if (name == "radius_mult")
    config.radius_mult = value;
  else if (name == "mu")
    config.mu = value;
  else if (name == "weight_mult")
    config.weight_mult = value;
  else
    throw Error(ErrorKind::InvalidInput, "unknown sweep parameter '" + name + "'");
}

double get_parameter(const PipelineConfig& config, const std::string& name) {
  if (name == "xi") return config.xi;
  if (name == "radius_mult") return config.radius_mult;
  if (name == "mu") return config.mu;
  if (name == "weight_mult") return config.weight_mult;
  throw Error(ErrorKind::InvalidInput, "unknown sweep parameter '" + name + "'");
}

std::vector<SweepRow> sweep(const std::string& parameter, const std::vector<double>& values,
                            const SyntheticShape& fixture, const PipelineOptions& base_options,
                            const MetricsOptions& metrics) {
  const double reference_value = get_parameter(base_options.config, parameter);
  auto run_scores = [&](const PipelineOptions& o) {
    return evaluate(run_pipeline(fixture.cloud, &fixture.ground_truth, o), fixture, metrics);
  };
  const QualityScores reference = run_scores(base_options);
  if (!reference.mesh) throw Error(ErrorKind::InvalidInput, "sweep needs a mesh");
  std::vector<SweepRow> rows;
  for (double v : values) {
    SweepRow row;
    row.parameter = parameter;
    row.value = v;
    if (v == reference_value) {
      row.scores = reference;
    } else {
      PipelineOptions o = base_options;
      set_parameter(o.config, parameter, v);
      row.scores = run_scores(o);
    }
    row.cd_ratio = ratio(row.scores.mesh->cd, reference.mesh->cd);
    row.f1_ratio = ratio(row.scores.mesh->f1, reference.mesh->f1);
    row.nc_ratio = ratio(row.scores.mesh->nc, reference.mesh->nc);
    row.ecd_ratio = ratio(row.scores.edge.ecd, reference.edge.ecd);
    row.ef1_ratio = ratio(row.scores.edge.ef1, reference.edge.ef1);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace rfeps
