#pragma once

#include "rfeps/cloud.hpp"
#include "rfeps/io.hpp"
#include "rfeps/mesh.hpp"

#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace rfeps {

enum class ShapeKind { Wedge, Cube, BoxWithHole, Cylinder, ThinPlate };

ShapeKind parse_shape(const std::string& name);
std::string to_string(ShapeKind shape);

struct SyntheticSpec {
  ShapeKind shape = ShapeKind::Cube;
  double dihedral = std::numbers::pi / 2;  // wedge opening angle
  double thickness = 0.05;                 // thin plate, before normalization (plate side 1)
  Index n_points = 50000;
  double noise_sigma = 0;  // fraction of the bounding-box diagonal
  double flip_fraction = 0;
  double normal_noise_tau = 0;
  bool grid = false;  // lattice sampling instead of white noise (wedge only)
  int resolution = 8;  // tessellation of the analytic mesh

  void validate() const;
};

struct SyntheticShape {
  OrientedCloud cloud;
  TriangleMesh ground_truth;  // also serves as the base surface
  std::vector<Segment> features;
  std::vector<Index> flipped;  // indices of reversed normals
};

/// Analytic shape normalized to [-0.5, 0.5]^3 (longest side 1), its sharp
/// edges, and a sampled cloud with the requested corruption.
SyntheticShape make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Just the normalized analytic mesh and its sharp edges.
std::pair<TriangleMesh, std::vector<Segment>> make_shape_mesh(const SyntheticSpec& spec);

/// Reverses exactly floor(fraction * n) normals chosen uniformly; returns their indices.
std::vector<Index> flip_normals(Points& normals, double fraction, std::mt19937_64& rng);

/// n <- (n + tau * r) / |n + tau * r| with r uniform on the sphere.
void perturb_normals(Points& normals, double tau, std::mt19937_64& rng);

/// Distance from p to the nearest segment.
double distance_to_segments(const Vector3& p, const std::vector<Segment>& segments);

}  // namespace rfeps
