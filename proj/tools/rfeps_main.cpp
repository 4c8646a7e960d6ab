#include "rfeps/io.hpp"
#include "rfeps/metrics.hpp"
#include "rfeps/pipeline.hpp"
#include "rfeps/synthetic.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <Eigen/Core>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rfeps;

namespace {

constexpr const char* kVersion = "1.0.0";

// Exit codes.
constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kPartial = 3;

json versions() {
  return {{"rfeps", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__},
          {"cli11", CLI11_VERSION}};
}

json to_json(const PipelineConfig& c) {
  return {{"xi", c.xi},
          {"radius_mult", c.radius_mult},
          {"mu", c.mu},
          {"weight_mult", c.weight_mult},
          {"grad_tol", c.grad_tol},
          {"proj_tol", c.proj_tol},
          {"angle_thresh", c.angle_thresh},
          {"cost_thresh", c.cost_thresh},
          {"eps_denom", c.eps_denom},
          {"threads", c.threads()},
          {"pca_neighbors", c.pca_neighbors},
          {"denoise_sweeps", c.denoise_sweeps},
          {"refine_sweeps", c.refine_sweeps},
          {"max_iterations", c.max_iterations},
          {"eps_clamp", c.eps_clamp},
          {"dedup_mult", c.dedup_mult},
          {"weighted_omt", c.weighted_omt},
          {"power_weights", c.power_weights}};
}

json to_json(const StageTiming& t) {
  return {{"t_denoise", t.t_denoise}, {"t_edgezone", t.t_edgezone}, {"t_regularize", t.t_regularize},
          {"t_refine", t.t_refine},   {"t_generate", t.t_generate}, {"t_rpd", t.t_rpd},
          {"total", t.total},         {"point_count", t.point_count}};
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json to_json(const QualityScores& q) {
  json j = {{"ocd", opt(q.ocd)}, {"oecd", opt(q.oecd)}, {"ecd", opt(q.edge.ecd)}, {"ef1", opt(q.edge.ef1)}};
  j["cd"] = q.mesh ? json(q.mesh->cd) : json(nullptr);
  j["f1"] = q.mesh ? json(q.mesh->f1) : json(nullptr);
  j["nc"] = q.mesh ? json(q.mesh->nc) : json(nullptr);
  return j;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::InvalidInput, "cannot write " + path.string());
  f << j.dump(2) << '\n';
}

std::string csv_value(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s << std::setprecision(10) << *v;
  return s.str();
}

struct ConfigFlags {
  PipelineConfig config;
  int threads = 0;

  void add(CLI::App* app) {
    app->add_option("--xi", config.xi, "Fidelity weight of denoising (penalizes displacement)")->capture_default_str();
    app->add_option("--radius-mult", config.radius_mult, "Neighborhood radius in units of the point gap")
        ->capture_default_str();
    app->add_option("--mu", config.mu, "Tether weight of edge-point projection")->capture_default_str();
    app->add_option("--weight-mult", config.weight_mult, "Power weight of generated points in squared gaps")
        ->capture_default_str();
    app->add_option("--threads", threads, "Worker count (0: RFEPS_THREADS or hardware)")->capture_default_str();
  }
  PipelineConfig resolved() const {
    PipelineConfig c = config;
    c.thread_count = threads;
    return c;
  }
};

SyntheticSpec synth_spec(const std::string& shape, Index n, double noise, double dihedral_deg, double thickness,
                         double flip, double tau, bool grid) {
  SyntheticSpec spec;
  spec.shape = parse_shape(shape);
  spec.n_points = n;
  spec.noise_sigma = noise;
  spec.dihedral = dihedral_deg * std::numbers::pi / 180.0;
  spec.thickness = thickness;
  spec.flip_fraction = flip;
  spec.normal_noise_tau = tau;
  spec.grid = grid;
  spec.validate();
  return spec;
}

json spec_json(const SyntheticSpec& s, std::uint64_t seed) {
  return {{"shape", to_string(s.shape)},    {"n_points", s.n_points},          {"noise_sigma", s.noise_sigma},
          {"dihedral", s.dihedral},         {"thickness", s.thickness},        {"flip_fraction", s.flip_fraction},
          {"normal_noise_tau", s.normal_noise_tau}, {"grid", s.grid}, {"seed", seed}};
}

std::vector<Segment> read_features_or_empty(const std::string& path) {
  return path.empty() ? std::vector<Segment>{} : read_segments(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-preserving point-cloud consolidation and restricted power diagram meshing"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Consolidate a cloud and, given a base surface, mesh it");
  std::string input, base_path, out_mesh, out_cloud, manifest_path, dump_dir, weights = "on";
  std::uint64_t seed = 0;
  bool keep_normals = false;
  ConfigFlags run_flags;
  run->add_option("--input", input, "Input cloud (.ply or .xyz)")->required()->check(CLI::ExistingFile);
  run->add_option("--base", base_path, "Base surface (.obj or .ply); omit for consolidation only")
      ->check(CLI::ExistingFile);
  run->add_option("--out", out_mesh, "Output mesh (.obj, .ply or .mesh)");
  run->add_option("--out-cloud", out_cloud, "Augmented cloud (.ply); default next to --out");
  run_flags.add(run);
  run->add_option("--seed", seed, "Recorded in the manifest; the pipeline itself draws no random numbers");
  run->add_option("--dump-stages", dump_dir, "Directory for intermediate clouds");
  run->add_option("--weights", weights, "Power weights of generated points")->check(CLI::IsMember({"on", "off"}));
  run->add_flag("--keep-normals", keep_normals, "Use the input normals instead of PCA estimates");
  run->add_option("--manifest", manifest_path, "Run manifest (.json)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic fixture");
  std::string shape = "cube", out_dir = ".";
  Index n_points = 50000;
  double noise = 0, dihedral = 90, thickness = 0.05, flip = 0, tau = 0;
  bool grid = false;
  synth->add_option("--shape", shape, "wedge, cube, box-with-hole, cylinder, thin-plate")->capture_default_str();
  synth->add_option("--n", n_points, "Point count")->capture_default_str();
  synth->add_option("--noise", noise, "Gaussian noise sigma as a fraction of the bbox diagonal")->capture_default_str();
  synth->add_option("--seed", seed, "Random seed")->capture_default_str();
  synth->add_option("--dihedral", dihedral, "Wedge opening angle in degrees")->capture_default_str();
  synth->add_option("--thickness", thickness, "Thin-plate thickness")->capture_default_str();
  synth->add_option("--flip", flip, "Fraction of reversed normals")->capture_default_str();
  synth->add_option("--normal-noise", tau, "Normal perturbation tau")->capture_default_str();
  synth->add_flag("--grid", grid, "Lattice sampling (wedge only)");
  synth->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();

  // metrics
  auto* metrics = app.add_subcommand("metrics", "Score a mesh and/or cloud against a ground truth; prints JSON");
  std::string pred_path, gt_path, cloud_path, features_path;
  MetricsOptions mopt;
  metrics->add_option("--pred", pred_path, "Predicted mesh")->check(CLI::ExistingFile);
  metrics->add_option("--gt", gt_path, "Ground-truth mesh")->required()->check(CLI::ExistingFile);
  metrics->add_option("--cloud", cloud_path, "Consolidated cloud for OCD/OECD")->check(CLI::ExistingFile);
  metrics->add_option("--features", features_path, "Feature segments for OECD")->check(CLI::ExistingFile);
  metrics->add_option("--samples", mopt.n_samples, "Surface samples per mesh")->capture_default_str();
  metrics->add_option("--seed", mopt.seed, "Sampling seed")->capture_default_str();
  metrics->add_option("--threads", mopt.threads, "Worker count");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Parameter sensitivity on a synthetic fixture; prints CSV");
  std::string param = "xi", csv_path;
  std::vector<double> values;
  ConfigFlags sweep_flags;
  sweep_cmd->add_option("--param", param, "xi, radius_mult, mu or weight_mult")
      ->check(CLI::IsMember({"xi", "radius_mult", "mu", "weight_mult"}))
      ->capture_default_str();
  sweep_cmd->add_option("--values", values, "Parameter values")->required()->delimiter(',');
  sweep_cmd->add_option("--shape", shape, "Fixture shape")->capture_default_str();
  sweep_cmd->add_option("--n", n_points, "Point count")->capture_default_str();
  sweep_cmd->add_option("--noise", noise, "Noise sigma as a fraction of the diagonal")->capture_default_str();
  sweep_cmd->add_option("--seed", seed, "Fixture and sampling seed")->capture_default_str();
  sweep_cmd->add_option("--samples", mopt.n_samples, "Metric surface samples")->capture_default_str();
  sweep_cmd->add_option("--out", csv_path, "CSV file (default stdout)");
  sweep_flags.add(sweep_cmd);

  // profile-scan
  auto* profile = app.add_subcommand("profile-scan", "Transport cost and cluster angle across a wedge crease; CSV");
  int samples = 81;
  double reach = 4;
  ConfigFlags profile_flags;
  profile->add_option("--dihedral", dihedral, "Wedge opening angle in degrees")->capture_default_str();
  profile->add_option("--n", n_points, "Point count")->capture_default_str();
  profile->add_option("--seed", seed, "Random seed")->capture_default_str();
  profile->add_option("--samples", samples, "Scan positions")->capture_default_str();
  profile->add_option("--reach", reach, "Half-length of the scan in neighborhood radii")->capture_default_str();
  profile->add_flag("--grid", grid, "Lattice sampling");
  profile->add_option("--out", csv_path, "CSV file (default stdout)");
  profile_flags.add(profile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      PipelineOptions o;
      o.config = run_flags.resolved();
      o.config.power_weights = weights == "on";
      o.estimate_normals = !keep_normals;
      o.keep_stages = !dump_dir.empty();
      bool has_normals = false;
      const OrientedCloud cloud = read_cloud(input, &has_normals);
      if (keep_normals && !has_normals) throw Error(ErrorKind::InvalidInput, "--keep-normals: input has no normals");
      std::optional<TriangleMesh> base;
      if (!base_path.empty()) base = read_mesh(base_path);
      if (base && out_mesh.empty()) throw Error(ErrorKind::InvalidInput, "--base needs --out");
      const PipelineResult r = run_pipeline(cloud, base ? &*base : nullptr, o);

      const fs::path mesh_file = out_mesh;
      fs::path cloud_file = out_cloud;
      if (cloud_file.empty())
        cloud_file = mesh_file.empty() ? fs::path("augmented.ply")
                                       : mesh_file.parent_path() / (mesh_file.stem().string() + "_augmented.ply");
      if (cloud_file.has_parent_path()) fs::create_directories(cloud_file.parent_path());
      write_cloud_ply(cloud_file, r.augmented);
      if (r.mesh) {
        if (mesh_file.has_parent_path()) fs::create_directories(mesh_file.parent_path());
        write_mesh(mesh_file, *r.mesh);
      }
      if (!dump_dir.empty()) {
        fs::create_directories(dump_dir);
        int k = 0;
        for (const auto& [name, c] : r.stages)
          write_cloud_ply(fs::path(dump_dir) / (std::to_string(++k) + "_" + name + ".ply"), c);
      }

      json m = {{"command", "run"},
                {"input", input},
                {"base", base_path.empty() ? json(nullptr) : json(base_path)},
                {"outputs", {{"cloud", cloud_file.string()}, {"mesh", r.mesh ? json(out_mesh) : json(nullptr)}}},
                {"config", to_json(o.config)},
                {"seed", seed},
                {"timing", to_json(r.timing)},
                {"delta", r.delta},
                {"edge_zone_points", r.edge_zone_count},
                {"generated_points", r.generated_count},
                {"dropped_sites", r.dropped_sites},
                {"partial", r.partial()},
                {"warnings", r.diagnostics.warnings},
                {"versions", versions()}};
      if (r.mesh) {
        const auto topo = analyze_topology(*r.mesh);
        m["mesh"] = {{"vertices", r.mesh->vertices.cols()},
                     {"triangles", r.mesh->triangle_count()},
                     {"closed_manifold", topo.closed_manifold()},
                     {"euler_characteristic", topo.euler_characteristic()}};
      }
      const fs::path mpath = manifest_path.empty() ? fs::path(cloud_file).replace_extension(".json") : fs::path(manifest_path);
      write_json(mpath, m);
      for (const auto& w : r.diagnostics.warnings) std::cerr << "warning: " << w << '\n';
      if (r.partial()) {
        std::cerr << "partial run: no base surface given, wrote the augmented cloud only (" << cloud_file.string()
                  << ")\n";
        return kPartial;
      }
      return kOk;
    }

    if (*synth) {
      const SyntheticSpec spec = synth_spec(shape, n_points, noise, dihedral, thickness, flip, tau, grid);
      const SyntheticShape s = make_synthetic(spec, seed);
      const fs::path dir = out_dir;
      fs::create_directories(dir);
      write_cloud_ply(dir / "cloud.ply", s.cloud);
      write_mesh_obj(dir / "ground_truth.obj", s.ground_truth);
      write_segments(dir / "features.txt", s.features);
      write_json(dir / "manifest.json", {{"command", "synth"},
                                          {"spec", spec_json(spec, seed)},
                                          {"flipped", s.flipped.size()},
                                          {"feature_segments", s.features.size()},
                                          {"versions", versions()}});
      return kOk;
    }

    if (*metrics) {
      const TriangleMesh gt = read_mesh(gt_path);
      const std::vector<Segment> features = read_features_or_empty(features_path);
      MetricsReport rep;
      rep.sample_count = mopt.n_samples;
      if (!pred_path.empty()) {
        const TriangleMesh pred = read_mesh(pred_path);
        const MeshScores ms = mesh_metrics(pred, gt, mopt);
        const EdgeScores es = edge_metrics(pred, gt, mopt);
        rep.cd = ms.cd;
        rep.f1 = ms.f1;
        rep.nc = ms.nc;
        rep.ecd = es.ecd;
        rep.ef1 = es.ef1;
      }
      if (!cloud_path.empty()) {
        const OrientedCloud c = read_cloud(cloud_path);
        rep.ocd = one_sided_cd(c.positions, gt, mopt.threads);
        const std::vector<Index> near = edge_filter(c.positions, features, mopt.feature_tol);
        if (!near.empty()) {
          Points sub(3, static_cast<Index>(near.size()));
          for (std::size_t k = 0; k < near.size(); ++k) sub.col(static_cast<Index>(k)) = c.positions.col(near[k]);
          rep.oecd = one_sided_cd(sub, gt, mopt.threads);
        }
      }
      if (pred_path.empty() && cloud_path.empty()) throw Error(ErrorKind::InvalidInput, "need --pred or --cloud");
      const json j = {{"cd", opt(rep.cd)},     {"f1", opt(rep.f1)},       {"nc", opt(rep.nc)},
                      {"ecd", opt(rep.ecd)},   {"ef1", opt(rep.ef1)},     {"ocd", opt(rep.ocd)},
                      {"oecd", opt(rep.oecd)}, {"samples", rep.sample_count}, {"seed", mopt.seed}};
      std::cout << j.dump() << '\n';
      return kOk;
    }

    if (*sweep_cmd) {
      const SyntheticSpec spec = synth_spec(shape, n_points, noise, dihedral, thickness, 0, 0, false);
      const SyntheticShape fixture = make_synthetic(spec, seed);
      PipelineOptions o;
      o.config = sweep_flags.resolved();
      mopt.seed = seed;
      mopt.threads = o.config.thread_count;
      const std::vector<SweepRow> rows = sweep(param, values, fixture, o, mopt);
      std::ofstream file;
      if (!csv_path.empty()) file.open(csv_path);
      std::ostream& out = csv_path.empty() ? std::cout : file;
      out << "parameter,value,cd,f1,nc,ecd,ef1,cd_ratio,f1_ratio,nc_ratio,ecd_ratio,ef1_ratio\n";
      out << std::setprecision(10);
      for (const auto& r : rows) {
        out << r.parameter << ',' << r.value << ',' << r.scores.mesh->cd << ',' << r.scores.mesh->f1 << ','
            << r.scores.mesh->nc << ',' << csv_value(r.scores.edge.ecd) << ',' << csv_value(r.scores.edge.ef1) << ','
            << std::fixed << std::setprecision(3) << r.cd_ratio << ',' << r.f1_ratio << ',' << r.nc_ratio << ','
            << csv_value(r.ecd_ratio) << ',' << csv_value(r.ef1_ratio) << '\n'
            << std::defaultfloat << std::setprecision(10);
      }
      return kOk;
    }

    if (*profile) {
      SyntheticSpec spec = synth_spec("wedge", n_points, 0, dihedral, thickness, 0, 0, grid);
      const SyntheticShape wedge = make_synthetic(spec, seed);
      const PipelineConfig config = profile_flags.resolved();
      const auto scan = wedge_profile(wedge, spec.dihedral, config, samples, reach);
      std::ofstream file;
      if (!csv_path.empty()) file.open(csv_path);
      std::ostream& out = csv_path.empty() ? std::cout : file;
      out << "offset,x,y,z,cost,angle,sparse\n" << std::setprecision(10);
      for (const auto& s : scan)
        out << s.offset << ',' << s.position.x() << ',' << s.position.y() << ',' << s.position.z() << ',' << s.cost
            << ',' << s.angle << ',' << (s.sparse ? 1 : 0) << '\n';
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kError;
  }
  return kOk;
}
