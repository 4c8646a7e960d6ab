#pragma once

#include "rfeps/cloud.hpp"
#include "rfeps/mesh.hpp"

#include <utility>
#include <vector>

namespace rfeps {

/// Power sites: pow(x, s) = |x - s.position|^2 - s.weight.
struct WeightedSites {
  Points positions;
  Eigen::VectorXd weights;
  std::vector<Index> source;  // index into the augmented cloud

  Index size() const { return static_cast<Index>(positions.cols()); }
};

/// Closest base-surface point of every cloud point; weights and source indices copied.
WeightedSites project_sites(const OrientedCloud& cloud, const TriangleMesh& base, int threads = 0);

/// Edge k of a piece's polygon runs from corner k to corner k + 1. Its label is
/// the neighboring site across it, or base_edge_label(j) for edge j of the
/// base triangle (corner j to corner j + 1).
constexpr Index base_edge_label(int local_edge) { return -1 - local_edge; }
constexpr int local_edge_of(Index label) { return static_cast<int>(-1 - label); }

/// Convex part of one site's restricted cell inside one base triangle.
struct CellPiece {
  Index site = -1;
  Index triangle = -1;
  Points polygon;  // ordered like the triangle's corners
  std::vector<Index> edge_label;
  double area = 0;
};

/// Surface point where three or more cell components meet.
struct TriplePoint {
  Vector3 position = Vector3::Zero();
  Vector3 normal = Vector3::Zero();  // sum of the unit normals of the base triangles meeting here
  std::vector<Index> components;     // counter-clockwise around `normal`
};

struct RestrictedPowerDiagram {
  WeightedSites sites;
  std::vector<CellPiece> pieces;  // grouped by base triangle
  Eigen::VectorXd cell_area;      // per site
  std::vector<std::pair<Index, Index>> adjacency;  // sorted site pairs sharing a boundary of positive length
  std::vector<Index> piece_component;              // connected cell component of each piece
  std::vector<Index> component_site;
  std::vector<TriplePoint> triple_points;
  double base_area = 0;
  bool closed_base = false;
  Index empty_cells = 0;
  Diagnostics diagnostics;
};

struct RpdOptions {
  int threads = 0;
  double snap_tol = 1e-9;  // corner coincidence tolerance, relative to the bounding-box diagonal
};

/// Clips every base triangle against the power bisectors of the sites whose
/// cells reach it. Weights are shifted by their minimum first, so equal
/// weights reproduce the restricted Voronoi diagram bit for bit.
/// Throws DuplicateSite for coincident sites with equal weights.
RestrictedPowerDiagram compute_rpd(const WeightedSites& sites, const TriangleMesh& base, const RpdOptions& options = {});

/// Index of the site with the smallest power distance to x (ties to the lowest index).
Index min_power_site(const WeightedSites& sites, const Vector3& x);

struct DualMesh {
  TriangleMesh mesh;
  std::vector<Index> vertex_site;  // site of each output vertex
  Index dropped_sites = 0;         // sites with no dual face
  Index merged_components = 0;
  Index removed_pockets = 0;  // closed face groups cut away at over-full edges
  Diagnostics diagnostics;
};

/// One triangle per triple point (fans for 4+ cells), vertices at the original
/// cloud positions of the sites, oriented by majority vote against the base
/// normals. Throws NonManifoldOutput listing offending sites when the result is
/// not an oriented 2-manifold (closed when the base is closed).
DualMesh extract_dual(const RestrictedPowerDiagram& rpd, const OrientedCloud& cloud);

}  // namespace rfeps
