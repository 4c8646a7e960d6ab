#include "doctest.h"

#include "rfeps/metrics.hpp"
#include "rfeps/synthetic.hpp"

#include <random>

using namespace rfeps;

namespace {

TriangleMesh plane(double z, bool flipped = false) {
  TriangleMesh m;
  m.vertices.resize(3, 4);
  m.vertices << 0, 1, 1, 0, 0, 0, 1, 1, z, z, z, z;
  m.triangles.resize(3, 2);
  if (flipped)
    m.triangles << 0, 0, 2, 3, 1, 2;
  else
    m.triangles << 0, 0, 1, 2, 2, 3;
  return m;
}

TriangleMesh sphere(int rings, int segments) {
  TriangleMesh m;
  m.vertices.resize(3, (rings - 1) * segments + 2);
  m.vertices.col(0) = Vector3(0, 0, 0.5);
  m.vertices.col(1) = Vector3(0, 0, -0.5);
  for (int r = 1; r < rings; ++r)
    for (int s = 0; s < segments; ++s) {
      const double th = std::numbers::pi * r / rings, ph = 2 * std::numbers::pi * s / segments;
      m.vertices.col(2 + (r - 1) * segments + s) =
          0.5 * Vector3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th));
    }
  auto at = [&](int r, int s) -> Index { return 2 + (r - 1) * segments + (s % segments); };
  std::vector<Eigen::Matrix<Index, 3, 1>> tris;
  for (int s = 0; s < segments; ++s) {
    tris.emplace_back(0, at(1, s), at(1, s + 1));
    tris.emplace_back(1, at(rings - 1, s + 1), at(rings - 1, s));
    for (int r = 1; r + 1 < rings; ++r) {
      tris.emplace_back(at(r, s), at(r + 1, s), at(r + 1, s + 1));
      tris.emplace_back(at(r, s), at(r + 1, s + 1), at(r, s + 1));
    }
  }
  m.triangles.resize(3, static_cast<Index>(tris.size()));
  for (std::size_t t = 0; t < tris.size(); ++t) m.triangles.col(static_cast<Index>(t)) = tris[t];
  return m;
}

// Convex polyhedron centered at the origin from its face polygons (any vertex order).
void add_convex_face(std::vector<Vector3>& verts, std::vector<Eigen::Matrix<Index, 3, 1>>& tris,
                     std::vector<Vector3> poly) {
  Vector3 c = Vector3::Zero();
  for (const auto& p : poly) c += p;
  c /= static_cast<double>(poly.size());
  const Vector3 n = c.normalized();
  const Vector3 e1 = (poly[0] - c).normalized(), e2 = n.cross(e1);
  std::sort(poly.begin(), poly.end(), [&](const Vector3& a, const Vector3& b) {
    return std::atan2((a - c).dot(e2), (a - c).dot(e1)) < std::atan2((b - c).dot(e2), (b - c).dot(e1));
  });
  const Index base = static_cast<Index>(verts.size());
  for (const auto& p : poly) verts.push_back(p);
  for (std::size_t k = 1; k + 1 < poly.size(); ++k)
    tris.emplace_back(base, base + static_cast<Index>(k), base + static_cast<Index>(k) + 1);
}

TriangleMesh chamfered_cube(double c) {
  const double a = 0.5;
  std::vector<Vector3> verts;
  std::vector<Eigen::Matrix<Index, 3, 1>> tris;
  for (int ax = 0; ax < 3; ++ax)
    for (int s : {-1, 1}) {
      std::vector<Vector3> poly;
      for (int u : {-1, 1})
        for (int v : {-1, 1}) {
          Vector3 p;
          p(ax) = s * a;
          p((ax + 1) % 3) = u * (a - c);
          p((ax + 2) % 3) = v * (a - c);
          poly.push_back(p);
        }
      add_convex_face(verts, tris, poly);
    }
  for (int ax = 0; ax < 3; ++ax) {
    const int bx = (ax + 1) % 3, cx = (ax + 2) % 3;
    for (int sa : {-1, 1})
      for (int sb : {-1, 1}) {
        std::vector<Vector3> poly;
        for (int sc : {-1, 1}) {
          Vector3 p, q;
          p(ax) = sa * a;
          p(bx) = sb * (a - c);
          p(cx) = sc * (a - c);
          q(ax) = sa * (a - c);
          q(bx) = sb * a;
          q(cx) = sc * (a - c);
          poly.push_back(p);
          poly.push_back(q);
        }
        add_convex_face(verts, tris, poly);
      }
  }
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) {
        const Vector3 s(sx, sy, sz);
        std::vector<Vector3> poly;
        for (int k = 0; k < 3; ++k) {
          Vector3 p = s * (a - c);
          p(k) = s(k) * a;
          poly.push_back(p);
        }
        add_convex_face(verts, tris, poly);
      }
  TriangleMesh m;
  m.vertices.resize(3, static_cast<Index>(verts.size()));
  for (std::size_t k = 0; k < verts.size(); ++k) m.vertices.col(static_cast<Index>(k)) = verts[k];
  m.triangles.resize(3, static_cast<Index>(tris.size()));
  for (std::size_t t = 0; t < tris.size(); ++t) m.triangles.col(static_cast<Index>(t)) = tris[t];
  weld_vertices(m, 1e-12);
  return m;
}

TriangleMesh cube_mesh() {
  SyntheticSpec spec;
  spec.shape = ShapeKind::Cube;
  spec.resolution = 2;
  return make_shape_mesh(spec).first;
}

TriangleMesh moved(const TriangleMesh& m, const Eigen::Isometry3d& tf) {
  TriangleMesh out = m;
  out.vertices = tf * m.vertices;
  return out;
}

}  // namespace

TEST_CASE("one-sided distance") {
  const TriangleMesh p = plane(0);
  Points on(3, 2);
  on << 0.2, 0.9, 0.3, 0.1, 0, 0;
  CHECK(one_sided_cd(on, p) == 0.0);
  Points above(3, 1);
  above << 0.4, 0.4, 0.07;
  CHECK(one_sided_cd(above, p) == doctest::Approx(0.0049).epsilon(1e-12));
  CHECK_THROWS_AS(one_sided_cd(Points(3, 0), p), Error);

  const TriangleMesh cube = cube_mesh();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  Points pts(3, 1000);
  for (Index i = 0; i < pts.cols(); ++i) pts.col(i) = Vector3(u(rng), u(rng), u(rng));
  double brute = 0;
  for (Index i = 0; i < pts.cols(); ++i) brute += brute_force_closest(cube, pts.col(i)).sq_distance;
  CHECK(std::abs(one_sided_cd(pts, cube) - brute / 1000) <= 1e-12);
}

TEST_CASE("edge filter") {
  const std::vector<Segment> seg{{Vector3(0, 0, 0), Vector3(1, 0, 0)}};
  Points p(3, 3);
  p << 0.5, 0.5, 0.5, 0, 0.006, 0.004, 0, 0, 0;
  const auto keep = edge_filter(p, seg);
  REQUIRE(keep.size() == 2);
  CHECK(keep[0] == 0);
  CHECK(keep[1] == 2);

  SyntheticSpec spec;
  spec.shape = ShapeKind::Cube;
  spec.n_points = 20000;
  const SyntheticShape cube = make_synthetic(spec, 2);
  Index brute = 0;
  for (Index i = 0; i < cube.cloud.size(); ++i) {
    bool near = false;
    for (const auto& s : cube.features)
      near = near || std::sqrt(point_segment_sq_distance<double>(cube.cloud.positions.col(i), s.a, s.b)) < 0.005;
    brute += near ? 1 : 0;
  }
  CHECK(static_cast<Index>(edge_filter(cube.cloud.positions, cube.features).size()) == brute);
}

TEST_CASE("mesh metrics") {
  MetricsOptions opt;
  opt.n_samples = 20000;
  const TriangleMesh cube = cube_mesh();
  const MeshScores same = mesh_metrics(cube, cube, opt);
  CHECK(same.cd == 0.0);
  CHECK(same.f1 == 1.0);
  CHECK(same.nc == doctest::Approx(1.0).epsilon(1e-12));

  const MeshScores off = mesh_metrics(plane(0), plane(0.003), opt);
  CHECK(off.f1 == 1.0);
  CHECK(off.cd == doctest::Approx(9e-6).epsilon(1e-9));

  CHECK(mesh_metrics(plane(0), plane(0, true), opt).nc == doctest::Approx(1.0).epsilon(1e-12));

  const TriangleMesh cham = chamfered_cube(0.02);
  const MeshScores ab = mesh_metrics(cube, cham, opt), ba = mesh_metrics(cham, cube, opt);
  CHECK(ab.cd == ba.cd);
  CHECK(ab.f1 == ba.f1);
  CHECK(ab.cd > 0);
}

TEST_CASE("edge metrics") {
  MetricsOptions opt;
  opt.n_samples = 30000;
  const TriangleMesh s = sphere(40, 80);
  const EdgeScores smooth = edge_metrics(s, s, opt);
  CHECK(smooth.pred_edge_samples == 0);
  CHECK_FALSE(smooth.ecd.has_value());
  CHECK_FALSE(smooth.ef1.has_value());

  const TriangleMesh cube = cube_mesh();
  const EdgeScores same = edge_metrics(cube, cube, opt);
  REQUIRE(same.ecd.has_value());
  CHECK(*same.ecd == 0.0);
  CHECK(*same.ef1 == 1.0);

  const TriangleMesh cham = chamfered_cube(0.02);
  CHECK(analyze_topology(cham).closed_manifold());
  CHECK(analyze_topology(cham).euler_characteristic() == 2);
  const EdgeScores diff = edge_metrics(cube, cham, opt);
  REQUIRE(diff.ecd.has_value());
  CHECK(*diff.ecd > 0);
  const SurfaceSamples a = edge_samples(cube, opt), b = edge_samples(cham, opt);
  auto brute = [](const Points& from, const Points& to) {
    double s = 0;
    for (Index i = 0; i < from.cols(); ++i) s += (to.colwise() - Vector3(from.col(i))).colwise().squaredNorm().minCoeff();
    return s / static_cast<double>(from.cols());
  };
  CHECK(*diff.ecd == doctest::Approx(0.5 * (brute(a.points, b.points) + brute(b.points, a.points))).epsilon(1e-12));
  CHECK(*edge_metrics(cham, cube, opt).ecd == *diff.ecd);
}

TEST_CASE("metrics are invariant under rigid motion") {
  MetricsOptions opt;
  opt.n_samples = 20000;
  const TriangleMesh cube = cube_mesh(), cham = chamfered_cube(0.03);
  Eigen::Isometry3d tf = Eigen::Isometry3d::Identity();
  tf.rotate(Eigen::AngleAxisd(0.7, Vector3(1, 2, -1).normalized()));
  tf.pretranslate(Vector3(0.3, -2, 5));
  const MeshScores a = mesh_metrics(cube, cham, opt), b = mesh_metrics(moved(cube, tf), moved(cham, tf), opt);
  CHECK(std::abs(a.cd - b.cd) <= 1e-9);
  CHECK(std::abs(a.f1 - b.f1) <= 1e-9);
  CHECK(std::abs(a.nc - b.nc) <= 1e-9);
  const EdgeScores ea = edge_metrics(cube, cham, opt), eb = edge_metrics(moved(cube, tf), moved(cham, tf), opt);
  CHECK(std::abs(*ea.ecd - *eb.ecd) <= 1e-9);
  CHECK(std::abs(*ea.ef1 - *eb.ef1) <= 1e-9);
}
