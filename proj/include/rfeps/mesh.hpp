#pragma once

#include "rfeps/common.hpp"

#include <algorithm>
#include <random>
#include <vector>

namespace rfeps {

using Triangles = Eigen::Matrix<Index, 3, Eigen::Dynamic>;

/// Indexed triangle mesh.
struct TriangleMesh {
  Points vertices;
  Triangles triangles;

  Index vertex_count() const { return static_cast<Index>(vertices.cols()); }
  Index triangle_count() const { return static_cast<Index>(triangles.cols()); }

  Vector3 corner(Index t, int k) const { return vertices.col(triangles(k, t)); }
  Vector3 normal(Index t) const;  // unit, zero for degenerate faces
  double area(Index t) const;
  double total_area() const;
  Eigen::AlignedBox3d bounds() const;
};

/// Throws InvalidInput on out-of-range indices; drops zero-area triangles and
/// reports how many were removed.
Index clean_degenerate(TriangleMesh& mesh, double area_eps = 0.0);

/// Merges vertices closer than tol (grid hashed) and remaps triangles.
void weld_vertices(TriangleMesh& mesh, double tol);

template <typename Scalar>
Vec3<Scalar> closest_point_on_triangle(const Vec3<Scalar>& p, const Vec3<Scalar>& a, const Vec3<Scalar>& b,
                                       const Vec3<Scalar>& c) {
  // Region classification over the Voronoi regions of the triangle features.
  const Vec3<Scalar> ab = b - a, ac = c - a, ap = p - a;
  const Scalar d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3<Scalar> bp = p - b;
  const Scalar d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const Scalar vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3<Scalar> cp = p - c;
  const Scalar d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const Scalar vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;
  const Scalar va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const Scalar denom = Scalar(1) / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

template <typename Scalar>
Scalar point_segment_sq_distance(const Vec3<Scalar>& p, const Vec3<Scalar>& a, const Vec3<Scalar>& b) {
  const Vec3<Scalar> ab = b - a;
  const Scalar len2 = ab.squaredNorm();
  Scalar t = len2 > 0 ? (p - a).dot(ab) / len2 : Scalar(0);
  t = std::clamp(t, Scalar(0), Scalar(1));
  return (a + t * ab - p).squaredNorm();
}

/// Bounding volume hierarchy answering closest-point queries on a mesh.
class MeshBvh {
 public:
  struct Hit {
    Vector3 point;
    Index triangle = -1;
    double sq_distance = 0;
  };

  explicit MeshBvh(const TriangleMesh& mesh);

  Hit closest(const Vector3& p) const;
  /// Every triangle whose closest point lies within sqrt(sq_radius) of p.
  std::vector<Hit> within(const Vector3& p, double sq_radius) const;
  const TriangleMesh& mesh() const { return *mesh_; }

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    Index begin = 0, end = 0, left = -1, right = -1;
  };
  Index build(Index begin, Index end);

  const TriangleMesh* mesh_;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
  Points centroids_;
};

/// Exhaustive closest point, reference for the BVH.
MeshBvh::Hit brute_force_closest(const TriangleMesh& mesh, const Vector3& p);

struct SurfaceSamples {
  Points points;
  Points normals;
  std::vector<Index> triangles;
};

/// Area-weighted triangle selection plus uniform barycentric sampling.
SurfaceSamples sample_surface(const TriangleMesh& mesh, Index count, std::mt19937_64& rng);

/// Undirected edge -> incident triangles, with manifold diagnostics.
struct MeshTopology {
  Index vertex_count = 0;  // referenced vertices
  Index edge_count = 0;
  Index face_count = 0;
  Index boundary_edges = 0;
  Index nonmanifold_edges = 0;
  Index nonmanifold_vertices = 0;
  Index inconsistent_edges = 0;  // interior edges traversed twice in the same direction
  Index components = 0;

  int euler_characteristic() const { return static_cast<int>(vertex_count - edge_count + face_count); }
  bool closed_manifold() const {
    return boundary_edges == 0 && nonmanifold_edges == 0 && nonmanifold_vertices == 0 && inconsistent_edges == 0;
  }
};

MeshTopology analyze_topology(const TriangleMesh& mesh);

/// Sorted unique undirected edges (a < b).
std::vector<std::pair<Index, Index>> unique_edges(const TriangleMesh& mesh);

}  // namespace rfeps
