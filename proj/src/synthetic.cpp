#include "rfeps/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace rfeps {

namespace {

class MeshBuilder {
 public:
  Index vertex(const Vector3& p) {
    vertices_.push_back(p);
    return static_cast<Index>(vertices_.size()) - 1;
  }
  void triangle(Index a, Index b, Index c) { faces_.push_back({a, b, c}); }

  // Bilinear patch p00 -> p10 (u) and p00 -> p01 (v); normal along (p10 - p00) x (p01 - p00).
  void quad(const Vector3& p00, const Vector3& p10, const Vector3& p11, const Vector3& p01, int nu, int nv) {
    const Index base = static_cast<Index>(vertices_.size());
    for (int j = 0; j <= nv; ++j)
      for (int i = 0; i <= nu; ++i) {
        const double u = static_cast<double>(i) / nu, v = static_cast<double>(j) / nv;
        vertex((1 - u) * (1 - v) * p00 + u * (1 - v) * p10 + u * v * p11 + (1 - u) * v * p01);
      }
    auto at = [&](int i, int j) { return base + j * (nu + 1) + i; };
    for (int j = 0; j < nv; ++j)
      for (int i = 0; i < nu; ++i) {
        triangle(at(i, j), at(i + 1, j), at(i + 1, j + 1));
        triangle(at(i, j), at(i + 1, j + 1), at(i, j + 1));
      }
  }

  TriangleMesh finish() const {
    TriangleMesh mesh;
    mesh.vertices.resize(3, static_cast<Index>(vertices_.size()));
    for (std::size_t k = 0; k < vertices_.size(); ++k) mesh.vertices.col(static_cast<Index>(k)) = vertices_[k];
    mesh.triangles.resize(3, static_cast<Index>(faces_.size()));
    for (std::size_t k = 0; k < faces_.size(); ++k)
      for (int c = 0; c < 3; ++c) mesh.triangles(c, static_cast<Index>(k)) = faces_[k][static_cast<std::size_t>(c)];
    weld_vertices(mesh, 1e-9);
    clean_degenerate(mesh);
    return mesh;
  }

 private:
  std::vector<Vector3> vertices_;
  std::vector<std::array<Index, 3>> faces_;
};

// Axis-aligned box with outward faces and its 12 edges.
void add_box(MeshBuilder& mb, std::vector<Segment>& features, const Vector3& lo, const Vector3& hi, int res) {
  const Vector3 ext = hi - lo;
  const double longest = ext.maxCoeff();
  for (int a = 0; a < 3; ++a) {
    const int b = (a + 1) % 3, c = (a + 2) % 3;
    const int nb = std::max(1, static_cast<int>(std::lround(res * ext(b) / longest)));
    const int nc = std::max(1, static_cast<int>(std::lround(res * ext(c) / longest)));
    for (int s = 0; s < 2; ++s) {
      Vector3 p00 = lo;
      if (s == 1) p00(a) = hi(a);
      const Vector3 du = ext(b) * Vector3::Unit(b), dv = ext(c) * Vector3::Unit(c);
      if (s == 1)
        mb.quad(p00, p00 + du, p00 + du + dv, p00 + dv, nb, nc);
      else
        mb.quad(p00, p00 + dv, p00 + du + dv, p00 + du, nc, nb);
    }
  }
  for (int a = 0; a < 3; ++a) {
    const int b = (a + 1) % 3, c = (a + 2) % 3;
    for (int sb = 0; sb < 2; ++sb)
      for (int sc = 0; sc < 2; ++sc) {
        Vector3 p = lo;
        if (sb) p(b) = hi(b);
        if (sc) p(c) = hi(c);
        Vector3 q = p;
        q(a) = hi(a);
        features.push_back({p, q});
      }
  }
}

void build_wedge(MeshBuilder& mb, std::vector<Segment>& features, double theta, int res) {
  // Floor z = 0 (x in [0, 1]) and a face at angle theta about the y axis, both
  // of length 1 along y; outward normals point away from the solid between them.
  const Vector3 d2(std::cos(theta), 0, std::sin(theta));
  const Vector3 y0(0, -0.5, 0), y1(0, 0.5, 0);
  mb.quad(y0, y1, y1 + Vector3::UnitX(), y0 + Vector3::UnitX(), res, res);  // normal -z
  mb.quad(y0, y0 + d2, y1 + d2, y1, res, res);                              // normal (-sin, 0, cos)
  features.push_back({y0, y1});
}

void build_box_with_hole(MeshBuilder& mb, std::vector<Segment>& features, int res) {
  const double a = 0.5, b = 0.2, h = 0.2;
  const std::array<Vector3, 4> outer{Vector3(-a, -a, 0), Vector3(a, -a, 0), Vector3(a, a, 0), Vector3(-a, a, 0)};
  const std::array<Vector3, 4> inner{Vector3(-b, -b, 0), Vector3(b, -b, 0), Vector3(b, b, 0), Vector3(-b, b, 0)};
  const Vector3 up(0, 0, h);
  const int nr = std::max(1, res / 2), nh = std::max(1, static_cast<int>(std::lround(res * 2 * h)));
  for (int k = 0; k < 4; ++k) {
    const int l = (k + 1) % 4;
    mb.quad(outer[k] + up, outer[l] + up, inner[l] + up, inner[k] + up, res, nr);  // top, +z
    mb.quad(outer[k] - up, inner[k] - up, inner[l] - up, outer[l] - up, nr, res);  // bottom, -z
    mb.quad(outer[k] - up, outer[l] - up, outer[l] + up, outer[k] + up, res, nh);  // outer wall
    mb.quad(inner[k] - up, inner[k] + up, inner[l] + up, inner[l] - up, nh, res);  // hole wall
    for (const auto* ring : {&outer, &inner}) {
      features.push_back({(*ring)[k] + up, (*ring)[l] + up});
      features.push_back({(*ring)[k] - up, (*ring)[l] - up});
      features.push_back({(*ring)[k] - up, (*ring)[k] + up});
    }
  }
}

void build_cylinder(MeshBuilder& mb, std::vector<Segment>& features, int res) {
  const double r = 0.5, h = 0.5;
  const int seg = std::max(24, 12 * res), rows = std::max(1, res), rings = std::max(1, res / 2);
  auto rim = [&](int k, double z, double rad) {
    const double t = 2 * std::numbers::pi * k / seg;
    return Vector3(rad * std::cos(t), rad * std::sin(t), z);
  };
  for (int k = 0; k < seg; ++k) {
    mb.quad(rim(k, -h, r), rim(k + 1, -h, r), rim(k + 1, h, r), rim(k, h, r), 1, rows);
    features.push_back({rim(k, h, r), rim(k + 1, h, r)});
    features.push_back({rim(k, -h, r), rim(k + 1, -h, r)});
    for (int s = 0; s < 2; ++s) {
      const double z = s ? h : -h;
      for (int q = 0; q < rings; ++q) {
        const double r0 = r * q / rings, r1 = r * (q + 1) / rings;
        const Vector3 a = rim(k, z, r1), b = rim(k + 1, z, r1);
        if (q == 0) {
          const Index c = mb.vertex(Vector3(0, 0, z));
          const Index ia = mb.vertex(a), ib = mb.vertex(b);
          if (s)
            mb.triangle(c, ia, ib);
          else
            mb.triangle(c, ib, ia);
        } else if (s) {
          mb.quad(rim(k, z, r0), a, b, rim(k + 1, z, r0), 1, 1);
        } else {
          mb.quad(rim(k, z, r0), rim(k + 1, z, r0), b, a, 1, 1);
        }
      }
    }
  }
}

Vector3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  for (;;) {
    const Vector3 v(g(rng), g(rng), g(rng));
    if (v.norm() > 1e-12) return v.normalized();
  }
}

}  // namespace

ShapeKind parse_shape(const std::string& name) {
  if (name == "wedge") return ShapeKind::Wedge;
  if (name == "cube") return ShapeKind::Cube;
  if (name == "box-with-hole") return ShapeKind::BoxWithHole;
  if (name == "cylinder") return ShapeKind::Cylinder;
  if (name == "thin-plate") return ShapeKind::ThinPlate;
  throw Error(ErrorKind::InvalidInput, "unknown shape '" + name + "'");
}

std::string to_string(ShapeKind shape) {
  switch (shape) {
    case ShapeKind::Wedge: return "wedge";
    case ShapeKind::Cube: return "cube";
    case ShapeKind::BoxWithHole: return "box-with-hole";
    case ShapeKind::Cylinder: return "cylinder";
    case ShapeKind::ThinPlate: return "thin-plate";
  }
  return "unknown";
}

void SyntheticSpec::validate() const {
  if (!(dihedral > 0 && dihedral < std::numbers::pi)) throw Error(ErrorKind::InvalidInput, "dihedral must be in (0, pi)");
  if (!(thickness > 0)) throw Error(ErrorKind::InvalidInput, "thickness must be positive");
  if (n_points < 1) throw Error(ErrorKind::InvalidInput, "n_points must be positive");
  if (!(noise_sigma >= 0)) throw Error(ErrorKind::InvalidInput, "noise_sigma must be non-negative");
  if (!(flip_fraction >= 0 && flip_fraction <= 1)) throw Error(ErrorKind::InvalidInput, "flip_fraction must be in [0, 1]");
  if (!(normal_noise_tau >= 0)) throw Error(ErrorKind::InvalidInput, "normal_noise_tau must be non-negative");
  if (resolution < 1) throw Error(ErrorKind::InvalidInput, "resolution must be positive");
  if (grid && shape != ShapeKind::Wedge) throw Error(ErrorKind::InvalidInput, "lattice sampling is only provided for wedges");
}

std::pair<TriangleMesh, std::vector<Segment>> make_shape_mesh(const SyntheticSpec& spec) {
  spec.validate();
  MeshBuilder mb;
  std::vector<Segment> features;
  switch (spec.shape) {
    case ShapeKind::Wedge: build_wedge(mb, features, spec.dihedral, spec.resolution); break;
    case ShapeKind::Cube:
      add_box(mb, features, Vector3::Constant(-0.5), Vector3::Constant(0.5), spec.resolution);
      break;
    case ShapeKind::BoxWithHole: build_box_with_hole(mb, features, spec.resolution); break;
    case ShapeKind::Cylinder: build_cylinder(mb, features, spec.resolution); break;
    case ShapeKind::ThinPlate:
      add_box(mb, features, Vector3(-0.5, -0.5, -spec.thickness / 2), Vector3(0.5, 0.5, spec.thickness / 2),
              spec.resolution);
      break;
  }
  TriangleMesh mesh = mb.finish();
  const AffineRecord tf = normalizing_transform(mesh.vertices);
  mesh.vertices = tf.apply(mesh.vertices);
  for (auto& s : features) {
    s.a = tf.apply(s.a);
    s.b = tf.apply(s.b);
  }
  return {std::move(mesh), std::move(features)};
}

std::vector<Index> flip_normals(Points& normals, double fraction, std::mt19937_64& rng) {
  const Index n = normals.cols();
  const Index count = static_cast<Index>(std::floor(fraction * static_cast<double>(n)));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(count));
  std::sort(order.begin(), order.end());
  for (Index i : order) normals.col(i) = -normals.col(i);
  return order;
}

void perturb_normals(Points& normals, double tau, std::mt19937_64& rng) {
  if (tau == 0) return;
  for (Index i = 0; i < normals.cols(); ++i) {
    const Vector3 m = normals.col(i) + tau * random_unit(rng);
    normals.col(i) = m.norm() > 1e-12 ? Vector3(m.normalized()) : Vector3(normals.col(i));
  }
}

double distance_to_segments(const Vector3& p, const std::vector<Segment>& segments) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : segments) best = std::min(best, point_segment_sq_distance(p, s.a, s.b));
  return std::sqrt(best);
}

SyntheticShape make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  auto [mesh, features] = make_shape_mesh(spec);
  SyntheticShape out;
  std::mt19937_64 rng(seed);
  if (spec.grid) {
    // Square lattice on both wedge faces, rows offset by half a spacing so the
    // fixture is mirror symmetric about the bisector and no sample sits on the crease.
    const double a0 = std::cos(spec.dihedral), a1 = std::sin(spec.dihedral);
    MeshBuilder unused;
    std::vector<Segment> raw_features;
    build_wedge(unused, raw_features, spec.dihedral, 1);
    const TriangleMesh raw = unused.finish();
    const AffineRecord tf = normalizing_transform(raw.vertices);
    const int m = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(spec.n_points) / 2))));
    const double h = 1.0 / m;
    const Vector3 n_floor(0, 0, -1), n_face(-a1, 0, a0);
    Points pos(3, 2 * m * (m + 1)), nrm(3, pos.cols());
    Index count = 0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j <= m; ++j) {
        const double y = -0.5 + j * h, t = (i + 0.5) * h;
        pos.col(count) = tf.apply(Vector3(t, y, 0));
        nrm.col(count++) = n_floor;
        pos.col(count) = tf.apply(Vector3(t * a0, y, t * a1));
        nrm.col(count++) = n_face;
      }
    out.cloud = OrientedCloud(pos.leftCols(count), nrm.leftCols(count));
  } else {
    const SurfaceSamples s = sample_surface(mesh, spec.n_points, rng);
    out.cloud = OrientedCloud(s.points, s.normals);
  }
  if (spec.noise_sigma > 0) {
    const double sigma = spec.noise_sigma * mesh.bounds().diagonal().norm();
    std::normal_distribution<double> g(0, sigma);
    for (Index i = 0; i < out.cloud.size(); ++i)
      for (int c = 0; c < 3; ++c) out.cloud.positions(c, i) += g(rng);
  }
  out.flipped = flip_normals(out.cloud.normals, spec.flip_fraction, rng);
  perturb_normals(out.cloud.normals, spec.normal_noise_tau, rng);
  out.ground_truth = std::move(mesh);
  out.features = std::move(features);
  return out;
}

}  // namespace rfeps
