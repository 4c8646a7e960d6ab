#include "doctest.h"

#include "rfeps/cloud.hpp"
#include "rfeps/io.hpp"
#include "rfeps/mesh.hpp"
#include "rfeps/neighbor_query.hpp"

#include <filesystem>
#include <random>

using namespace rfeps;

namespace {

Points random_points(Index n, double lo, double hi, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Points p(3, n);
  for (Index i = 0; i < n; ++i) p.col(i) = Vector3(u(rng), u(rng), u(rng));
  return p;
}

Points lattice(int m, double s) {
  Points p(3, m * m * m);
  Index c = 0;
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y)
      for (int z = 0; z < m; ++z) p.col(c++) = s * Vector3(x, y, z);
  return p;
}

}  // namespace

TEST_CASE("normalize maps a segment onto the unit interval") {
  Points p(3, 2);
  p.col(0) = Vector3(0, 0, 0);
  p.col(1) = Vector3(2, 0, 0);
  const auto [out, rec] = normalize(OrientedCloud(p));
  CHECK(out.positions.col(0).isApprox(Vector3(-0.5, 0, 0)));
  CHECK(out.positions.col(1).isApprox(Vector3(0.5, 0, 0)));
  CHECK(rec.scale == doctest::Approx(0.5));
}

TEST_CASE("normalize leaves a centred unit cube alone") {
  Points p = random_points(200, -0.5, 0.5, 3);
  p.col(0) = Vector3(-0.5, -0.5, -0.5);
  p.col(1) = Vector3(0.5, 0.5, 0.5);
  const auto [out, rec] = normalize(OrientedCloud(p));
  CHECK((out.positions - p).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("normalize round trip") {
  const Points p = random_points(1000, 3, 7, 4);
  const auto [out, rec] = normalize(OrientedCloud(p));
  CHECK(out.positions.cwiseAbs().maxCoeff() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK((rec.invert(out.positions) - p).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("normalize errors") {
  CHECK_THROWS_AS(normalize(OrientedCloud(Points(3, 0))), Error);
  Points same(3, 3);
  same.colwise() = Vector3(1, 2, 3);
  try {
    normalize(OrientedCloud(same));
    FAIL("expected DegenerateInput");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateInput);
  }
}

TEST_CASE("average gap on a padded lattice") {
  // Interior points only: pad with one layer and average over the interior.
  const Points p = lattice(7, 0.01);
  const NeighborQuery index(p);
  double sum = 0;
  Index count = 0;
  for (Index i = 0; i < p.cols(); ++i) {
    const Vector3 x = p.col(i) / 0.01;
    if ((x.array() < 0.5).any() || (x.array() > 5.5).any()) continue;
    for (const auto& h : index.knn(i, 6)) sum += std::sqrt(h.sq_distance);
    count += 6;
  }
  CHECK(sum / static_cast<double>(count) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("average gap of separated clusters equals the within-cluster mean") {
  Points p = random_points(14, 0, 1, 5);
  p.rightCols(7).array() += 100.0;
  double expected = 0;
  for (Index i = 0; i < 14; ++i)
    for (const auto& h : brute_force_knn(p, p.col(i), 6, i)) expected += std::sqrt(h.sq_distance);
  expected /= 84.0;
  CHECK(average_gap(p, 1) == doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(average_gap(random_points(6, 0, 1, 1), 1), Error);
}

TEST_CASE("average gap against brute force and under similarity") {
  const Points p = random_points(1000, -0.5, 0.5, 6);
  double expected = 0;
  for (Index i = 0; i < p.cols(); ++i)
    for (const auto& h : brute_force_knn(p, p.col(i), 6, i)) expected += std::sqrt(h.sq_distance);
  expected /= 6000.0;
  const double d = average_gap(p, 2);
  CHECK(std::abs(d - expected) <= 1e-12);
  const Matrix3 r = Eigen::AngleAxisd(0.7, Vector3(1, 2, 3).normalized()).toRotationMatrix();
  const Points moved = ((2.5 * r * p).colwise() + Vector3(4, -1, 2)).eval();
  CHECK(average_gap(moved, 2) == doctest::Approx(2.5 * d).epsilon(1e-10));
}

TEST_CASE("radius query on an integer lattice") {
  Points p = lattice(5, 1.0);
  p.array() -= 2.0;
  const NeighborQuery index(p);
  const auto hits = index.radius(Vector3::Zero(), 1.5, Index{62});
  CHECK(p.col(62).isZero());
  CHECK(hits.size() == 18);
  for (const auto& h : hits) CHECK(h.sq_distance <= 2.25);
  CHECK(index.radius(Index{62}, 0.5).empty());
}

TEST_CASE("knn on two points") {
  Points p(3, 2);
  p.col(0) = Vector3(0, 0, 0);
  p.col(1) = Vector3(1, 1, 1);
  const NeighborQuery index(p);
  const auto hits = index.knn(Index{0}, 1);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].index == 1);
}

TEST_CASE("index matches brute force") {
  for (Index n : {1, 13, 500, 2000}) {
    const Points p = random_points(n, -1, 1, static_cast<unsigned>(n));
    const NeighborQuery index(p, 8);
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<Index> pick(0, n - 1);
    for (int t = 0; t < 50; ++t) {
      const Index i = pick(rng);
      const double r = 0.05 + 0.3 * (t % 5);
      const auto a = index.radius(i, r);
      const auto b = brute_force_radius(p, p.col(i), r, i);
      REQUIRE(a.size() == b.size());
      for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].index == b[k].index);
      const auto c = index.knn(i, 10);
      const auto d = brute_force_knn(p, p.col(i), 10, i);
      REQUIRE(c.size() == d.size());
      for (std::size_t k = 0; k < c.size(); ++k) CHECK(c[k].index == d[k].index);
    }
  }
}

TEST_CASE("cloud PLY round trip keeps labels and weights") {
  OrientedCloud c(random_points(20, -0.5, 0.5, 9));
  c.labels[3] = PointLabel::GeneratedEdge;
  c.weights(3) = 0.25;
  c.labels[4] = PointLabel::EdgeZone;
  const auto dir = std::filesystem::temp_directory_path();
  for (auto fmt : {PlyFormat::Ascii, PlyFormat::BinaryLittleEndian}) {
    const auto path = dir / "rfeps_roundtrip.ply";
    write_cloud_ply(path, c, fmt);
    bool has_normals = false;
    const OrientedCloud r = read_cloud(path, &has_normals);
    CHECK(has_normals);
    CHECK((r.positions - c.positions).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(r.labels[3] == PointLabel::GeneratedEdge);
    CHECK(r.labels[4] == PointLabel::EdgeZone);
    CHECK(r.weights(3) == doctest::Approx(0.25));
    std::filesystem::remove(path);
  }
  const auto xyz = dir / "rfeps_roundtrip.xyz";
  write_cloud_xyz(xyz, c);
  CHECK((read_cloud(xyz).positions - c.positions).cwiseAbs().maxCoeff() <= 1e-9);
  std::filesystem::remove(xyz);
}

TEST_CASE("BVH closest point matches brute force") {
  TriangleMesh m;
  const Points v = random_points(60, -0.5, 0.5, 10);
  m.vertices = v;
  m.triangles.resize(3, 40);
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<Index> pick(0, 59);
  for (Index t = 0; t < 40; ++t) m.triangles.col(t) << pick(rng), pick(rng), pick(rng);
  clean_degenerate(m);
  const MeshBvh bvh(m);
  const Points q = random_points(1000, -1, 1, 12);
  for (Index i = 0; i < q.cols(); ++i) {
    const auto a = bvh.closest(q.col(i));
    const auto b = brute_force_closest(m, q.col(i));
    CHECK(std::abs(a.sq_distance - b.sq_distance) <= 1e-12);
  }
}

TEST_CASE("topology of a tetrahedron") {
  TriangleMesh m;
  m.vertices.resize(3, 4);
  m.vertices << 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1;
  m.triangles.resize(3, 4);
  m.triangles << 0, 0, 0, 1, 2, 1, 3, 2, 1, 3, 2, 3;
  const MeshTopology t = analyze_topology(m);
  CHECK(t.closed_manifold());
  CHECK(t.euler_characteristic() == 2);
  m.triangles.conservativeResize(3, 3);
  CHECK(analyze_topology(m).boundary_edges == 3);
}
