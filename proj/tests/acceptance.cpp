// Acceptance suite: one PASS/FAIL line per criterion; exits nonzero if any fails.

#include "rfeps/consolidate.hpp"
#include "rfeps/denoise.hpp"
#include "rfeps/edge_zone.hpp"
#include "rfeps/metrics.hpp"
#include "rfeps/neighbor_query.hpp"
#include "rfeps/pipeline.hpp"
#include "rfeps/rpd.hpp"
#include "rfeps/solver.hpp"
#include "rfeps/synthetic.hpp"

#include <bit>
#include <chrono>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

using namespace rfeps;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Vector3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  return Vector3(g(rng), g(rng), g(rng)).normalized();
}

Vector3 rotate_toward(const Vector3& a, const Vector3& dir, double angle) {
  return Eigen::AngleAxisd(angle, a.cross(dir).normalized()) * a;
}

NormalPatch patch_of(const std::vector<Vector3>& normals, const std::vector<double>& dist2) {
  NormalPatch p;
  const Index k = static_cast<Index>(normals.size());
  p.normals.resize(3, k);
  p.weights.resize(k);
  for (Index j = 0; j < k; ++j) {
    p.normals.col(j) = normals[static_cast<std::size_t>(j)].normalized();
    p.weights(j) = 1.0 / (dist2[static_cast<std::size_t>(j)] + 1e-4);
  }
  return p;
}

// Normals scattered around two directions `angle` apart.
NormalPatch two_cluster_patch(std::mt19937_64& rng, int k, double angle, double noise) {
  std::uniform_real_distribution<double> u(0, 1);
  const Vector3 a = random_unit(rng);
  const Vector3 b = rotate_toward(a, random_unit(rng), angle);
  std::vector<Vector3> n;
  std::vector<double> d;
  for (int j = 0; j < k; ++j) {
    n.push_back(((u(rng) < 0.5 ? a : b) + noise * random_unit(rng)).normalized());
    d.push_back(4e-4 * u(rng));
  }
  return patch_of(n, d);
}

// Global optimum over balanced binary assignments (one half unit for odd k),
// each cluster normal at its weighted mean.
double exhaustive_omt(const NormalPatch& p) {
  const int k = static_cast<int>(p.size());
  const double total = p.weights.sum();
  double best = std::numeric_limits<double>::infinity();
  for (int half = (k % 2 ? 0 : -1); half < (k % 2 ? k : 0); ++half)
    for (unsigned mask = 0; mask < (1u << k); ++mask) {
      if (half >= 0 && (mask >> half & 1u)) continue;
      if (std::popcount(mask) != k / 2) continue;
      Vector3 sa = Vector3::Zero(), sb = Vector3::Zero();
      double ma = 0, mb = 0;
      for (int j = 0; j < k; ++j) {
        const double l = j == half ? 0.5 : (mask >> j & 1u ? 1.0 : 0.0);
        sa += p.weights(j) * l * p.normals.col(j);
        sb += p.weights(j) * (1 - l) * p.normals.col(j);
        ma += p.weights(j) * l;
        mb += p.weights(j) * (1 - l);
      }
      best = std::min(best, (2 * ma - 2 * sa.norm() + 2 * mb - 2 * sb.norm()) / total);
    }
  return best;
}

// Worst gradient error of a problem at five random feasible points around x0.
double worst_gradient(const ConstrainedProblem& prob, const Eigen::VectorXd& x0, std::mt19937_64& rng, double spread) {
  std::normal_distribution<double> g(0, 1);
  double worst = 0;
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd x = x0;
    for (Index k = 0; k < x.size(); ++k) x(k) += spread * g(rng);
    x = project_feasible(prob, x);
    worst = std::max(worst, check_gradient(prob, x, 1e-6));
  }
  return worst;
}

// Small neighborhoods cut from synthetic clouds, with their gap.
struct LocalFixture {
  std::string name;
  OrientedCloud cloud;
  double delta = 0;
};

LocalFixture cut(const std::string& name, const SyntheticShape& s, const Vector3& center, Index count) {
  const NeighborQuery index(s.cloud.positions);
  LocalFixture f;
  f.name = name;
  Points p(3, count), n(3, count);
  Index k = 0;
  for (const auto& h : index.knn(center, count)) {
    p.col(k) = s.cloud.positions.col(h.index);
    n.col(k) = s.cloud.normals.col(h.index);
    ++k;
  }
  f.cloud = OrientedCloud(p, n);
  f.delta = average_gap(p, 1);
  return f;
}

std::vector<LocalFixture> local_fixtures() {
  SyntheticSpec cube;
  cube.shape = ShapeKind::Cube;
  cube.n_points = 20000;
  cube.noise_sigma = 0.0025;
  SyntheticSpec cyl = cube;
  cyl.shape = ShapeKind::Cylinder;
  const SyntheticShape c = make_synthetic(cube, 11);
  const SyntheticShape y = make_synthetic(cyl, 12);
  return {cut("cube corner", c, Vector3(0.5, 0.5, 0.5), 60), cut("cube face", c, Vector3(0.1, 0.2, 0.5), 60),
          cut("cylinder rim", y, y.features.front().a, 60)};
}

Outcome c1_gradients() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0, 1);
  double worst_planarity = 0, worst_refine = 0, worst_omt = 0, worst_cluster = 0;
  for (const LocalFixture& f : local_fixtures()) {
    const NeighborQuery index(f.cloud.positions);
    const double r = 2 * f.delta;
    const Eigen::VectorXd eps = Eigen::VectorXd::Zero(f.cloud.size());
    Eigen::VectorXd x0;
    const PlanarityTerms smooth{f.cloud.positions, radius_graph(index, r, 1), 0.1, f.delta};
    const ConstrainedProblem p2 = planarity_problem(smooth, eps, f.cloud.normals, true, &x0);
    worst_planarity = std::max(worst_planarity, worst_gradient(p2, x0, rng, 0.1));
    const PlanarityTerms flat{f.cloud.positions, similar_neighbors(f.cloud, index, r, kPi / 6, 1), 0.0, f.delta};
    const ConstrainedProblem p10 = planarity_problem(flat, eps, f.cloud.normals, false, &x0);
    worst_refine = std::max(worst_refine, worst_gradient(p10, x0, rng, 0.1));
  }
  for (int fixture = 0; fixture < 3; ++fixture) {
    const NormalPatch patch = two_cluster_patch(rng, 7 + 2 * fixture, kPi * (fixture + 1) / 4, 0.1 * fixture);
    const Index k = patch.size();
    Eigen::VectorXd x0;
    const ConstrainedProblem p8 =
        omt_problem(patch, random_unit(rng), random_unit(rng), Eigen::VectorXd::Constant(k, 0.5), &x0);
    worst_omt = std::max(worst_omt, worst_gradient(p8, x0, rng, 0.15));
    const NormalTriple start{random_unit(rng), random_unit(rng), random_unit(rng)};
    const ConstrainedProblem p9 = cluster_problem(patch, start, Eigen::MatrixXd::Constant(k, 3, 1.0 / 3), &x0);
    worst_cluster = std::max(worst_cluster, worst_gradient(p9, x0, rng, 0.15));
  }
  const double worst = std::max({worst_planarity, worst_refine, worst_omt, worst_cluster});
  return {worst <= 1e-4, fmt("max rel err: planarity %.2e refine %.2e transport %.2e three-normal %.2e (limit 1e-4)",
                             worst_planarity, worst_refine, worst_omt, worst_cluster)};
}

Outcome c2_omt_oracle() {
  std::mt19937_64 rng(102);
  std::uniform_int_distribution<int> kd(4, 12);
  std::uniform_real_distribution<double> u(0, 1);
  int mismatches = 0;
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const NormalPatch p = two_cluster_patch(rng, kd(rng), kPi * u(rng), 0.3 * u(rng));
    const double oracle = exhaustive_omt(p);
    const double got = solve_omt(p).cost;
    const double rel = std::abs(got - oracle) / std::max(oracle, 1e-12);
    if (std::abs(got - oracle) > 1e-3 * std::max(oracle, 1e-12) + 1e-9) ++mismatches;
    worst = std::max(worst, std::abs(got - oracle) <= 1e-9 ? 0.0 : rel);
  }
  return {mismatches == 0, fmt("%d/50 patches off the oracle, worst rel %.2e", mismatches, worst)};
}

Outcome c3_profile() {
  SyntheticSpec spec;
  spec.shape = ShapeKind::Wedge;
  spec.dihedral = kPi / 2;
  spec.grid = true;
  spec.n_points = 20000;
  const SyntheticShape wedge = make_synthetic(spec, 103);
  PipelineConfig cfg;
  const auto prof = wedge_profile(wedge, kPi / 2, cfg, 161);
  const double r = cfg.radius_mult * average_gap(wedge.cloud.positions, 1);
  const ProfileSample* edge = &prof.front();
  double flat_max = 0, interior_max = 0, angle_max = 0;
  for (const auto& s : prof) {
    if (std::abs(s.offset) < std::abs(edge->offset)) edge = &s;
    angle_max = std::max(angle_max, s.angle);
    if (std::abs(s.offset) > 2 * r)
      flat_max = std::max(flat_max, s.cost);
    else
      interior_max = std::max(interior_max, s.cost);
  }
  const bool ok = edge->cost < 0.05 && flat_max < 0.05 && interior_max > edge->cost && interior_max > flat_max &&
                  edge->angle >= angle_max - 1e-12 && edge->angle >= kPi / 2 - 0.1;
  return {ok, fmt("cost(edge) %.4f, max cost beyond 2r %.4f, interior max %.4f, angle(edge) %.4f (peak %.4f)",
                  edge->cost, flat_max, interior_max, edge->angle, angle_max)};
}

Outcome c4_dihedral_range() {
  bool ok = true;
  std::string detail;
  for (int m = 1; m <= 5; ++m) {
    SyntheticSpec spec;
    spec.shape = ShapeKind::Wedge;
    spec.dihedral = m * kPi / 6;
    spec.n_points = 10000;
    const SyntheticShape w = make_synthetic(spec, 104);
    PipelineOptions o;
    o.keep_stages = true;
    const PipelineResult run = run_pipeline(w.cloud, nullptr, o);
    const OrientedCloud* zone = nullptr;
    for (const auto& [name, c] : run.stages)
      if (name == "edge_zone") zone = &c;
    const double r = o.config.radius_mult * run.delta;
    Index near = 0, near_hit = 0, far = 0, far_off = 0;
    for (Index i = 0; i < w.cloud.size(); ++i) {
      const double d = distance_to_segments(w.cloud.positions.col(i), w.features);
      const PointLabel label = zone->labels[static_cast<std::size_t>(i)];
      if (d <= r) {
        ++near;
        near_hit += label == PointLabel::EdgeZone;
      } else if (d > 3 * r) {
        ++far;
        far_off += label == PointLabel::OffEdge;
      }
    }
    const double recall = static_cast<double>(near_hit) / static_cast<double>(near);
    const double off = static_cast<double>(far_off) / static_cast<double>(far);
    ok = ok && recall >= 0.95 && off >= 0.95;
    detail += fmt("%s%d/6pi: recall %.3f off %.3f", m > 1 ? "; " : "", m, recall, off);
  }
  return {ok, detail};
}

struct EdgeAccuracy {
  double rms = 0, max = 0;  // in units of delta
  Index generated = 0;
};

EdgeAccuracy edge_accuracy(const PipelineResult& run, const std::vector<Segment>& features) {
  EdgeAccuracy e;
  double s2 = 0;
  const OrientedCloud& a = run.augmented;
  for (Index i = 0; i < a.size(); ++i) {
    if (a.labels[static_cast<std::size_t>(i)] != PointLabel::GeneratedEdge) continue;
    const double d = distance_to_segments(a.positions.col(i), features) / run.delta;
    s2 += d * d;
    e.max = std::max(e.max, d);
    ++e.generated;
  }
  e.rms = e.generated > 0 ? std::sqrt(s2 / static_cast<double>(e.generated)) : std::numeric_limits<double>::infinity();
  return e;
}

SyntheticShape cube_fixture(double noise, std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.shape = ShapeKind::Cube;
  spec.n_points = 50000;
  spec.noise_sigma = noise;
  return make_synthetic(spec, seed);
}

Outcome c5_edge_accuracy() {
  const SyntheticShape clean = cube_fixture(0);
  const EdgeAccuracy a = edge_accuracy(run_pipeline(clean.cloud, nullptr, {}), clean.features);
  const SyntheticShape noisy = cube_fixture(0.0025);
  const EdgeAccuracy b = edge_accuracy(run_pipeline(noisy.cloud, nullptr, {}), noisy.features);
  const bool ok = a.rms <= 0.5 && a.max <= 1.5 && b.rms <= 1.0;
  return {ok, fmt("clean: %lld generated, rms %.3f delta, max %.3f delta; 0.25%% noise: rms %.3f delta",
                  static_cast<long long>(a.generated), a.rms, a.max, b.rms)};
}

Outcome c6_oecd() {
  bool ok = true;
  std::string detail;
  MetricsOptions m;
  for (double noise : {0.0025, 0.005}) {
    const SyntheticShape s = cube_fixture(noise);
    const PipelineResult run = run_pipeline(s.cloud, nullptr, {});
    const double after = *evaluate(run, s, m).oecd;
    PipelineResult raw;
    raw.augmented = s.cloud;
    const double before = *evaluate(raw, s, m).oecd;
    ok = ok && after < before;
    detail += fmt("%snoise %.2f%%: OECD raw %.3e augmented %.3e", detail.empty() ? "" : "; ", 100 * noise, before, after);
  }
  return {ok, detail};
}

Outcome c7_closed_form() {
  std::mt19937_64 rng(107);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    Points pts(3, 15), nrm(3, 15);
    for (Index j = 0; j < 15; ++j) {
      pts.col(j) = Vector3(u(rng), u(rng), u(rng));
      nrm.col(j) = random_unit(rng);
    }
    const Vector3 p(u(rng), u(rng), u(rng));
    ConstrainedProblem prob = edge_problem(p, pts, nrm, 0.01);
    prob.grad_tol = 1e-6;
    const SolveResult r = minimize(prob, p);
    worst = std::max(worst, (r.x - edge_point(p, pts, nrm, 0.01)).norm());
  }
  return {worst <= 1e-6, fmt("max |closed form - iterative| %.2e over 100 patches (limit 1e-6)", worst)};
}

TriangleMesh grid_square(int res) {
  TriangleMesh m;
  m.vertices.resize(3, (res + 1) * (res + 1));
  for (int j = 0; j <= res; ++j)
    for (int i = 0; i <= res; ++i) m.vertices.col(j * (res + 1) + i) = Vector3(double(i) / res, double(j) / res, 0);
  m.triangles.resize(3, 2 * res * res);
  Index t = 0;
  for (int j = 0; j < res; ++j)
    for (int i = 0; i < res; ++i) {
      const Index a = j * (res + 1) + i, b = a + 1, c = a + res + 2, d = a + res + 1;
      m.triangles.col(t++) << a, b, c;
      m.triangles.col(t++) << a, c, d;
    }
  return m;
}

Outcome c8_rpd_rvd() {
  SyntheticSpec cyl;
  cyl.shape = ShapeKind::Cylinder;
  cyl.resolution = 6;
  const std::pair<std::string, TriangleMesh> bases[] = {{"flat", grid_square(8)},
                                                        {"curved", make_shape_mesh(cyl).first}};
  bool ok = true;
  std::string detail;
  for (const auto& [name, base] : bases) {
    std::mt19937_64 rng(108);
    const SurfaceSamples s = sample_surface(base, 1000, rng);
    WeightedSites rvd;
    rvd.positions = s.points;
    rvd.weights = Eigen::VectorXd::Zero(1000);
    for (Index i = 0; i < 1000; ++i) rvd.source.push_back(i);
    WeightedSites rpd = rvd;
    rpd.weights.setConstant(8 * 1e-4);
    const auto a = compute_rpd(rvd, base);
    const auto b = compute_rpd(rpd, base);
    double rel = 0;
    for (Index i = 0; i < 1000; ++i)
      rel = std::max(rel, std::abs(a.cell_area(i) - b.cell_area(i)) / std::max(a.cell_area(i), 1e-300));
    const OrientedCloud cloud(s.points);
    const DualMesh da = extract_dual(a, cloud), db = extract_dual(b, cloud);
    const bool same = da.mesh.triangles == db.mesh.triangles && da.vertex_site == db.vertex_site;
    ok = ok && rel <= 1e-9 && same;
    detail += fmt("%s%s: max rel area diff %.2e, dual %s", detail.empty() ? "" : "; ", name.c_str(), rel,
                  same ? "identical" : "differs");
  }
  return {ok, detail};
}

int face_of(const Vector3& p) {
  Index k;
  p.cwiseAbs().maxCoeff(&k);
  return static_cast<int>(k) * 2 + (p(k) > 0);
}

Outcome c9_weighted_dual() {
  const SyntheticShape cube = cube_fixture(0);
  Index crossings[2] = {0, 0};
  double poly_max = 0, poly_rms = 0;
  for (int weighted = 1; weighted >= 0; --weighted) {
    PipelineOptions o;
    o.config.power_weights = weighted == 1;
    const PipelineResult run = run_pipeline(cube.cloud, &cube.ground_truth, o);
    const TriangleMesh& m = *run.mesh;
    std::set<std::pair<Index, Index>> edges;
    for (Index t = 0; t < m.triangles.cols(); ++t)
      for (int k = 0; k < 3; ++k) {
        const Index u = m.triangles(k, t), v = m.triangles((k + 1) % 3, t);
        edges.insert({std::min(u, v), std::max(u, v)});
      }
    auto generated = [&](Index v) {
      return run.augmented.labels[static_cast<std::size_t>(run.mesh_vertex_source[static_cast<std::size_t>(v)])] ==
             PointLabel::GeneratedEdge;
    };
    double s2 = 0;
    Index samples = 0;
    for (const auto& [u, v] : edges) {
      const Vector3 pu = m.vertices.col(u), pv = m.vertices.col(v);
      if (!generated(u) && !generated(v) && face_of(pu) != face_of(pv)) ++crossings[weighted];
      if (weighted && generated(u) && generated(v))
        for (int k = 0; k <= 10; ++k) {
          const double d = distance_to_segments(pu + (pv - pu) * (k / 10.0), cube.features) / run.delta;
          s2 += d * d;
          poly_max = std::max(poly_max, d);
          ++samples;
        }
    }
    if (weighted) poly_rms = samples > 0 ? std::sqrt(s2 / static_cast<double>(samples)) : 0;
  }
  const bool ok = crossings[1] < crossings[0] && poly_max <= 0.5;
  return {ok, fmt("crease-crossing edges weighted %lld vs equal %lld; crease polyline rms %.3f delta, max %.3f delta",
                  static_cast<long long>(crossings[1]), static_cast<long long>(crossings[0]), poly_rms, poly_max)};
}

Outcome c10_manifold() {
  bool ok = true;
  std::string detail;
  for (const ShapeKind shape : {ShapeKind::Cube, ShapeKind::Cylinder, ShapeKind::BoxWithHole}) {
    SyntheticSpec spec;
    spec.shape = shape;
    const SyntheticShape s = make_synthetic(spec, 110);
    const PipelineResult run = run_pipeline(s.cloud, &s.ground_truth, {});
    const MeshTopology t = analyze_topology(*run.mesh);
    const int expected = analyze_topology(s.ground_truth).euler_characteristic();
    const bool good = t.closed_manifold() && t.euler_characteristic() == expected;
    ok = ok && good;
    detail += fmt("%s%s: %s chi %d (expected %d)", detail.empty() ? "" : "; ", to_string(shape).c_str(),
                  t.closed_manifold() ? "closed manifold" : "NOT closed manifold", t.euler_characteristic(), expected);
  }
  return {ok, detail};
}

Outcome c11_flips() {
  const SyntheticShape cube = cube_fixture(0);
  bool ok = true;
  std::string detail;
  for (double fraction : {0.05, 0.10}) {
    PipelineOptions o;
    o.after_normals = [fraction](OrientedCloud& c) {
      std::mt19937_64 rng(111);
      flip_normals(c.normals, fraction, rng);
    };
    const EdgeAccuracy a = edge_accuracy(run_pipeline(cube.cloud, nullptr, o), cube.features);
    ok = ok && a.rms <= 2 * 0.5;
    detail += fmt("%s%.0f%% flips: rms %.3f delta", detail.empty() ? "" : "; ", 100 * fraction, a.rms);
  }
  return {ok, detail + " (limit 1.0 delta)"};
}

Outcome c12_scaling() {
  const Index sizes[] = {10000, 20000, 40000};
  std::array<StageTiming, 3> best;
  for (int s = 0; s < 3; ++s) {
    SyntheticSpec spec;
    spec.shape = ShapeKind::Cube;
    spec.n_points = sizes[s];
    const SyntheticShape cube = make_synthetic(spec, 112);
    PipelineOptions o;
    o.config.thread_count = 1;
    for (int rep = 0; rep < 3; ++rep) {
      const StageTiming t = run_pipeline(cube.cloud, &cube.ground_truth, o).timing;
      auto keep_min = [&](double StageTiming::*f) { best[s].*f = rep == 0 ? t.*f : std::min(best[s].*f, t.*f); };
      for (auto f : {&StageTiming::t_denoise, &StageTiming::t_edgezone, &StageTiming::t_regularize,
                     &StageTiming::t_refine, &StageTiming::t_generate, &StageTiming::t_rpd, &StageTiming::total})
        keep_min(f);
    }
  }
  const std::pair<const char*, double StageTiming::*> stages[] = {
      {"denoise", &StageTiming::t_denoise}, {"edge_zone", &StageTiming::t_edgezone},
      {"regularize", &StageTiming::t_regularize}, {"refine", &StageTiming::t_refine},
      {"generate", &StageTiming::t_generate}, {"rpd", &StageTiming::t_rpd}};
  bool ok = true;
  std::string detail;
  for (const auto& [name, f] : stages) {
    const double r1 = best[1].*f / best[0].*f, r2 = best[2].*f / best[1].*f;
    ok = ok && r1 >= 1.4 && r1 <= 3.2 && r2 >= 1.4 && r2 <= 3.2;
    detail += fmt("%s%s %.3f/%.3f", detail.empty() ? "" : "; ", name, r1, r2);
  }
  return {ok, detail + fmt(" (total at 40K %.2f s)", best[2].total)};
}

Outcome c13_sweeps() {
  const SyntheticShape cube = cube_fixture(0);
  MetricsOptions m;
  const std::pair<const char*, std::vector<double>> sweeps[] = {
      {"xi", {0.05, 0.1, 0.2}}, {"radius_mult", {1.5, 2.0, 3.0}}, {"mu", {0.001, 0.01, 1.0}}};
  const PipelineOptions base;
  bool ok = true;
  std::string detail;
  for (const auto& [param, values] : sweeps) {
    const auto rows = sweep(param, values, cube, base, m);
    const double def = get_parameter(base.config, param);
    for (const auto& row : rows) {
      if (row.value != def) continue;
      const bool unit = row.cd_ratio == 1.0 && row.f1_ratio == 1.0 && row.nc_ratio == 1.0 &&
                        row.ecd_ratio.value_or(1.0) == 1.0 && row.ef1_ratio.value_or(1.0) == 1.0;
      ok = ok && unit;
      detail += fmt("%s%s default row %s", detail.empty() ? "" : "; ", param, unit ? "1.000" : "not 1");
    }
    if (std::string(param) == "mu") {
      double ef1[3];
      for (int k = 0; k < 3; ++k) ef1[k] = rows[static_cast<std::size_t>(k)].scores.edge.ef1.value_or(0.0);
      ok = ok && ef1[1] >= ef1[0] && ef1[1] >= ef1[2];
      detail += fmt("; EF1 mu=0.001 %.4f, mu=0.01 %.4f, mu=1 %.4f", ef1[0], ef1[1], ef1[2]);
    }
  }
  return {ok, detail};
}

struct AllScores {
  MeshScores mesh;
  EdgeScores edge;
  double ocd = 0, oecd = 0;
};

AllScores all_scores(const TriangleMesh& pred, const TriangleMesh& gt, const Points& cloud,
                     const std::vector<Segment>& features, const MetricsOptions& m) {
  AllScores s;
  s.mesh = mesh_metrics(pred, gt, m);
  s.edge = edge_metrics(pred, gt, m);
  s.ocd = one_sided_cd(cloud, gt, m.threads);
  const std::vector<Index> near = edge_filter(cloud, features, m.feature_tol);
  Points sub(3, static_cast<Index>(near.size()));
  for (std::size_t k = 0; k < near.size(); ++k) sub.col(static_cast<Index>(k)) = cloud.col(near[k]);
  s.oecd = one_sided_cd(sub, gt, m.threads);
  return s;
}

Outcome c14_metric_identities() {
  SyntheticSpec spec;
  spec.shape = ShapeKind::BoxWithHole;
  spec.resolution = 6;
  auto [gt, features] = make_shape_mesh(spec);
  MetricsOptions m;
  m.n_samples = 50000;
  const AllScores id = all_scores(gt, gt, gt.vertices, features, m);
  const bool identity = id.mesh.cd == 0 && id.mesh.f1 == 1 && std::abs(id.mesh.nc - 1) <= 1e-12 &&
                        id.edge.ecd.value_or(-1) == 0 && id.edge.ef1.value_or(-1) == 1 && id.ocd == 0 && id.oecd == 0;

  std::mt19937_64 rng(114);
  std::normal_distribution<double> g(0, 0.003);
  TriangleMesh pred = gt;
  for (Index v = 0; v < pred.vertices.cols(); ++v) pred.vertices.col(v) += Vector3(g(rng), g(rng), g(rng));
  const SyntheticShape cloud = make_synthetic(SyntheticSpec{.shape = ShapeKind::BoxWithHole, .n_points = 20000,
                                                            .noise_sigma = 0.002},
                                              114);
  const Matrix3 rot = Eigen::AngleAxisd(1.1, Vector3(0.3, -1, 0.7).normalized()).toRotationMatrix();
  const Vector3 shift(0.4, -2.0, 1.3);
  auto move = [&](TriangleMesh mesh) {
    mesh.vertices = (rot * mesh.vertices).colwise() + shift;
    return mesh;
  };
  std::vector<Segment> moved_features = features;
  for (auto& s : moved_features) {
    s.a = rot * s.a + shift;
    s.b = rot * s.b + shift;
  }
  const Points moved_cloud = (rot * cloud.cloud.positions).colwise() + shift;
  const AllScores a = all_scores(pred, gt, cloud.cloud.positions, features, m);
  const AllScores b = all_scores(move(pred), move(gt), moved_cloud, moved_features, m);
  const double diff = std::max({std::abs(a.mesh.cd - b.mesh.cd), std::abs(a.mesh.f1 - b.mesh.f1),
                                std::abs(a.mesh.nc - b.mesh.nc), std::abs(*a.edge.ecd - *b.edge.ecd),
                                std::abs(*a.edge.ef1 - *b.edge.ef1), std::abs(a.ocd - b.ocd),
                                std::abs(a.oecd - b.oecd)});
  return {identity && diff <= 1e-9,
          fmt("identity %s (cd %g f1 %g nc %.15f ecd %g ef1 %g); max change under rigid motion %.2e",
              identity ? "exact" : "broken", id.mesh.cd, id.mesh.f1, id.mesh.nc, id.edge.ecd.value_or(-1),
              id.edge.ef1.value_or(-1), diff)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"C1", c1_gradients},     {"C2", c2_omt_oracle},  {"C3", c3_profile},        {"C4", c4_dihedral_range},
      {"C5", c5_edge_accuracy}, {"C6", c6_oecd},        {"C7", c7_closed_form},    {"C8", c8_rpd_rvd},
      {"C9", c9_weighted_dual}, {"C10", c10_manifold},  {"C11", c11_flips},        {"C12", c12_scaling},
      {"C13", c13_sweeps},      {"C14", c14_metric_identities}};
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) only.insert(argv[i]);
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
