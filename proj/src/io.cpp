#include "rfeps/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace rfeps {
namespace {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

[[noreturn]] void io_fail(const std::filesystem::path& path, const std::string& msg) {
  throw Error(ErrorKind::Io, path.string() + ": " + msg);
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType parse_type(const std::string& s, const std::filesystem::path& path) {
  static const std::map<std::string, PlyType> types = {
      {"char", PlyType::Int8},     {"int8", PlyType::Int8},       {"uchar", PlyType::UInt8},
      {"uint8", PlyType::UInt8},   {"short", PlyType::Int16},     {"int16", PlyType::Int16},
      {"ushort", PlyType::UInt16}, {"uint16", PlyType::UInt16},   {"int", PlyType::Int32},
      {"int32", PlyType::Int32},   {"uint", PlyType::UInt32},     {"uint32", PlyType::UInt32},
      {"float", PlyType::Float32}, {"float32", PlyType::Float32}, {"double", PlyType::Float64},
      {"float64", PlyType::Float64}};
  auto it = types.find(s);
  if (it == types.end()) io_fail(path, "unknown PLY type '" + s + "'");
  return it->second;
}

std::size_t type_size(PlyType t) {
  switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  Index count = 0;
  std::vector<PlyProperty> properties;
};

class PlyReader {
 public:
  explicit PlyReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) io_fail(path, "cannot open");
    std::string line;
    std::getline(in_, line);
    if (line.rfind("ply", 0) != 0) io_fail(path, "missing PLY magic");
    while (std::getline(in_, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::istringstream ss(line);
      std::string word;
      ss >> word;
      if (word == "format") {
        std::string fmt;
        ss >> fmt;
        if (fmt == "ascii") ascii_ = true;
        else if (fmt == "binary_little_endian") ascii_ = false;
        else io_fail(path, "unsupported PLY format '" + fmt + "'");
      } else if (word == "element") {
        PlyElement e;
        ss >> e.name >> e.count;
        elements_.push_back(e);
      } else if (word == "property") {
        if (elements_.empty()) io_fail(path, "property before element");
        PlyProperty p;
        std::string t;
        ss >> t;
        if (t == "list") {
          std::string ct, it;
          ss >> ct >> it >> p.name;
          p.is_list = true;
          p.count_type = parse_type(ct, path);
          p.type = parse_type(it, path);
        } else {
          p.type = parse_type(t, path);
          ss >> p.name;
        }
        elements_.back().properties.push_back(p);
      } else if (word == "end_header") {
        return;
      }
    }
    io_fail(path, "unterminated PLY header");
  }

  const std::vector<PlyElement>& elements() const { return elements_; }

  double read_scalar(PlyType t) {
    if (ascii_) {
      double v;
      if (!(in_ >> v)) io_fail(path_, "truncated ASCII PLY body");
      return v;
    }
    unsigned char buf[8];
    const std::size_t n = type_size(t);
    if (!in_.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n))) io_fail(path_, "truncated PLY body");
    switch (t) {
      case PlyType::Int8: { std::int8_t v; std::memcpy(&v, buf, 1); return v; }
      case PlyType::UInt8: { std::uint8_t v; std::memcpy(&v, buf, 1); return v; }
      case PlyType::Int16: { std::int16_t v; std::memcpy(&v, buf, 2); return v; }
      case PlyType::UInt16: { std::uint16_t v; std::memcpy(&v, buf, 2); return v; }
      case PlyType::Int32: { std::int32_t v; std::memcpy(&v, buf, 4); return v; }
      case PlyType::UInt32: { std::uint32_t v; std::memcpy(&v, buf, 4); return v; }
      case PlyType::Float32: { float v; std::memcpy(&v, buf, 4); return v; }
      case PlyType::Float64: { double v; std::memcpy(&v, buf, 8); return v; }
    }
    return 0;
  }

  /// Reads one element record: scalars into `scalars` (by property order), lists into `list`.
  void read_record(const PlyElement& e, std::vector<double>& scalars, std::vector<Index>& list) {
    scalars.assign(e.properties.size(), 0.0);
    list.clear();
    for (std::size_t k = 0; k < e.properties.size(); ++k) {
      const auto& p = e.properties[k];
      if (p.is_list) {
        const auto n = static_cast<Index>(read_scalar(p.count_type));
        for (Index i = 0; i < n; ++i) list.push_back(static_cast<Index>(read_scalar(p.type)));
      } else {
        scalars[k] = read_scalar(p.type);
      }
    }
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  bool ascii_ = true;
  std::vector<PlyElement> elements_;
};

int property_index(const PlyElement& e, std::initializer_list<const char*> names) {
  for (const char* name : names)
    for (std::size_t k = 0; k < e.properties.size(); ++k)
      if (e.properties[k].name == name) return static_cast<int>(k);
  return -1;
}

struct PlyContents {
  Points positions;
  Points normals;
  bool has_normals = false;
  std::vector<PointLabel> labels;
  Eigen::VectorXd weights;
  std::vector<std::vector<Index>> faces;
};

PlyContents read_ply(const std::filesystem::path& path) {
  PlyReader reader(path);
  PlyContents out;
  std::vector<double> scalars;
  std::vector<Index> list;
  for (const auto& e : reader.elements()) {
    if (e.name == "vertex") {
      const int ix = property_index(e, {"x"}), iy = property_index(e, {"y"}), iz = property_index(e, {"z"});
      if (ix < 0 || iy < 0 || iz < 0) io_fail(path, "vertex element lacks x/y/z");
      const int nx = property_index(e, {"nx"}), ny = property_index(e, {"ny"}), nz = property_index(e, {"nz"});
      const int il = property_index(e, {"label"}), iw = property_index(e, {"weight"});
      out.has_normals = nx >= 0 && ny >= 0 && nz >= 0;
      out.positions.resize(3, e.count);
      out.normals = Points::Zero(3, e.count);
      out.labels.assign(static_cast<std::size_t>(e.count), PointLabel::OffEdge);
      out.weights = Eigen::VectorXd::Zero(e.count);
      for (Index i = 0; i < e.count; ++i) {
        reader.read_record(e, scalars, list);
        out.positions.col(i) << scalars[ix], scalars[iy], scalars[iz];
        if (out.has_normals) out.normals.col(i) << scalars[nx], scalars[ny], scalars[nz];
        if (il >= 0) out.labels[static_cast<std::size_t>(i)] = static_cast<PointLabel>(std::clamp<int>(int(scalars[il]), 0, 2));
        if (iw >= 0) out.weights(i) = scalars[iw];
      }
    } else if (e.name == "face") {
      for (Index i = 0; i < e.count; ++i) {
        reader.read_record(e, scalars, list);
        out.faces.push_back(list);
      }
    } else {
      for (Index i = 0; i < e.count; ++i) reader.read_record(e, scalars, list);
    }
  }
  return out;
}

OrientedCloud make_cloud(Points positions, Points normals, bool has_normals) {
  OrientedCloud cloud(std::move(positions));
  if (has_normals) {
    for (Index i = 0; i < normals.cols(); ++i) {
      const double len = normals.col(i).norm();
      if (len > 0) normals.col(i) /= len;
      else normals.col(i) = Vector3::UnitZ();
    }
    cloud.normals = std::move(normals);
  }
  return cloud;
}

TriangleMesh mesh_from_polygons(Points vertices, const std::vector<std::vector<Index>>& faces) {
  TriangleMesh mesh;
  mesh.vertices = std::move(vertices);
  Index count = 0;
  for (const auto& f : faces) count += std::max<Index>(0, static_cast<Index>(f.size()) - 2);
  mesh.triangles.resize(3, count);
  Index t = 0;
  for (const auto& f : faces)
    for (std::size_t k = 1; k + 1 < f.size(); ++k) mesh.triangles.col(t++) << f[0], f[k], f[k + 1];
  return mesh;
}

}  // namespace

OrientedCloud read_cloud(const std::filesystem::path& path, bool* has_normals) {
  const std::string ext = lower_extension(path);
  if (ext == ".ply") {
    PlyContents ply = read_ply(path);
    if (has_normals) *has_normals = ply.has_normals;
    OrientedCloud cloud = make_cloud(std::move(ply.positions), std::move(ply.normals), ply.has_normals);
    cloud.labels = std::move(ply.labels);
    cloud.weights = std::move(ply.weights);
    return cloud;
  }
  std::ifstream in(path);
  if (!in) io_fail(path, "cannot open");
  std::vector<std::array<double, 6>> rows;
  bool normals = true;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::array<double, 6> r{};
    int n = 0;
    while (n < 6 && ss >> r[static_cast<std::size_t>(n)]) ++n;
    if (n == 0) continue;
    if (n < 3) io_fail(path, "line with fewer than 3 coordinates");
    if (n < 6) normals = false;
    rows.push_back(r);
  }
  Points pos(3, static_cast<Index>(rows.size())), nrm(3, static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index c = static_cast<Index>(i);
    pos.col(c) << rows[i][0], rows[i][1], rows[i][2];
    nrm.col(c) << rows[i][3], rows[i][4], rows[i][5];
  }
  if (rows.empty()) normals = false;
  if (has_normals) *has_normals = normals;
  return make_cloud(std::move(pos), std::move(nrm), normals);
}

void write_cloud_ply(const std::filesystem::path& path, const OrientedCloud& cloud, PlyFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) io_fail(path, "cannot write");
  out << "ply\nformat " << (format == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "property double nx\nproperty double ny\nproperty double nz\n"
      << "property uchar label\nproperty float weight\nend_header\n";
  for (Index i = 0; i < cloud.size(); ++i) {
    const auto label = static_cast<std::uint8_t>(cloud.labels[static_cast<std::size_t>(i)]);
    const auto weight = static_cast<float>(cloud.weights(i));
    if (format == PlyFormat::Ascii) {
      out << std::setprecision(17);
      for (int k = 0; k < 3; ++k) out << cloud.positions(k, i) << ' ';
      for (int k = 0; k < 3; ++k) out << cloud.normals(k, i) << ' ';
      out << int(label) << ' ' << std::setprecision(9) << weight << '\n';
    } else {
      for (int k = 0; k < 3; ++k) out.write(reinterpret_cast<const char*>(&cloud.positions(k, i)), 8);
      for (int k = 0; k < 3; ++k) out.write(reinterpret_cast<const char*>(&cloud.normals(k, i)), 8);
      out.write(reinterpret_cast<const char*>(&label), 1);
      out.write(reinterpret_cast<const char*>(&weight), 4);
    }
  }
  if (!out) io_fail(path, "write failed");
}

void write_cloud_xyz(const std::filesystem::path& path, const OrientedCloud& cloud) {
  std::ofstream out(path);
  if (!out) io_fail(path, "cannot write");
  out << std::setprecision(17);
  for (Index i = 0; i < cloud.size(); ++i) {
    out << cloud.positions(0, i) << ' ' << cloud.positions(1, i) << ' ' << cloud.positions(2, i) << ' '
        << cloud.normals(0, i) << ' ' << cloud.normals(1, i) << ' ' << cloud.normals(2, i) << '\n';
  }
}

TriangleMesh read_mesh(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".ply") {
    PlyContents ply = read_ply(path);
    return mesh_from_polygons(std::move(ply.positions), ply.faces);
  }
  if (ext != ".obj") io_fail(path, "unsupported mesh extension (expected .obj or .ply)");
  std::ifstream in(path);
  if (!in) io_fail(path, "cannot open");
  std::vector<Vector3> verts;
  std::vector<std::vector<Index>> faces;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vector3 p;
      ss >> p.x() >> p.y() >> p.z();
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<Index> f;
      std::string tok;
      while (ss >> tok) {
        Index idx = std::stoll(tok.substr(0, tok.find('/')));
        idx = idx < 0 ? static_cast<Index>(verts.size()) + idx : idx - 1;
        f.push_back(idx);
      }
      faces.push_back(std::move(f));
    }
  }
  Points v(3, static_cast<Index>(verts.size()));
  for (std::size_t i = 0; i < verts.size(); ++i) v.col(static_cast<Index>(i)) = verts[i];
  return mesh_from_polygons(std::move(v), faces);
}

void write_mesh_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) io_fail(path, "cannot write");
  out << std::setprecision(17);
  for (Index v = 0; v < mesh.vertex_count(); ++v)
    out << "v " << mesh.vertices(0, v) << ' ' << mesh.vertices(1, v) << ' ' << mesh.vertices(2, v) << '\n';
  for (Index t = 0; t < mesh.triangle_count(); ++t)
    out << "f " << mesh.triangles(0, t) + 1 << ' ' << mesh.triangles(1, t) + 1 << ' ' << mesh.triangles(2, t) + 1
        << '\n';
  if (!out) io_fail(path, "write failed");
}

void write_mesh_ply(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) io_fail(path, "cannot write");
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << mesh.vertex_count()
      << "\nproperty double x\nproperty double y\nproperty double z\nelement face " << mesh.triangle_count()
      << "\nproperty list uchar int vertex_indices\nend_header\n";
  for (Index v = 0; v < mesh.vertex_count(); ++v)
    for (int k = 0; k < 3; ++k) out.write(reinterpret_cast<const char*>(&mesh.vertices(k, v)), 8);
  for (Index t = 0; t < mesh.triangle_count(); ++t) {
    const std::uint8_t n = 3;
    out.write(reinterpret_cast<const char*>(&n), 1);
    for (int k = 0; k < 3; ++k) {
      const auto idx = static_cast<std::int32_t>(mesh.triangles(k, t));
      out.write(reinterpret_cast<const char*>(&idx), 4);
    }
  }
  if (!out) io_fail(path, "write failed");
}

void write_mesh(const std::filesystem::path& path, const TriangleMesh& mesh) {
  if (lower_extension(path) == ".ply") write_mesh_ply(path, mesh);
  else write_mesh_obj(path, mesh);
}

std::vector<Segment> read_segments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) io_fail(path, "cannot open");
  std::vector<Segment> segs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Segment s;
    if (!(ss >> s.a.x() >> s.a.y() >> s.a.z() >> s.b.x() >> s.b.y() >> s.b.z()))
      io_fail(path, "segment line needs six numbers");
    segs.push_back(s);
  }
  return segs;
}

void write_segments(const std::filesystem::path& path, const std::vector<Segment>& segments) {
  std::ofstream out(path);
  if (!out) io_fail(path, "cannot write");
  out << std::setprecision(17);
  for (const auto& s : segments)
    out << s.a.x() << ' ' << s.a.y() << ' ' << s.a.z() << ' ' << s.b.x() << ' ' << s.b.y() << ' ' << s.b.z() << '\n';
}

}  // namespace rfeps
