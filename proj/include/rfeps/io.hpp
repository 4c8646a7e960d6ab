#pragma once

#include "rfeps/cloud.hpp"
#include "rfeps/mesh.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace rfeps {

struct Segment {
  Vector3 a;
  Vector3 b;
};

enum class PlyFormat { Ascii, BinaryLittleEndian };

/// ASCII XYZ (x y z [nx ny nz]) or PLY (ascii / binary little endian), chosen by extension.
/// Missing normals are left zero and `has_normals` reports it.
OrientedCloud read_cloud(const std::filesystem::path& path, bool* has_normals = nullptr);

/// PLY with per-vertex x y z nx ny nz (double), label (uchar), weight (float).
void write_cloud_ply(const std::filesystem::path& path, const OrientedCloud& cloud,
                     PlyFormat format = PlyFormat::BinaryLittleEndian);
void write_cloud_xyz(const std::filesystem::path& path, const OrientedCloud& cloud);

/// OBJ or PLY triangle mesh; polygons are fan-triangulated.
TriangleMesh read_mesh(const std::filesystem::path& path);
void write_mesh_obj(const std::filesystem::path& path, const TriangleMesh& mesh);
void write_mesh_ply(const std::filesystem::path& path, const TriangleMesh& mesh);
void write_mesh(const std::filesystem::path& path, const TriangleMesh& mesh);

/// Plain text, one segment per line: ax ay az bx by bz.
std::vector<Segment> read_segments(const std::filesystem::path& path);
void write_segments(const std::filesystem::path& path, const std::vector<Segment>& segments);

}  // namespace rfeps
