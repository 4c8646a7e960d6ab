#include "rfeps/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <unordered_map>

namespace rfeps {

Vector3 TriangleMesh::normal(Index t) const {
  const Vector3 n = (corner(t, 1) - corner(t, 0)).cross(corner(t, 2) - corner(t, 0));
  const double len = n.norm();
  return len > 0 ? Vector3(n / len) : Vector3::Zero();
}

double TriangleMesh::area(Index t) const {
  return 0.5 * (corner(t, 1) - corner(t, 0)).cross(corner(t, 2) - corner(t, 0)).norm();
}

double TriangleMesh::total_area() const {
  double s = 0;
  for (Index t = 0; t < triangle_count(); ++t) s += area(t);
  return s;
}

Eigen::AlignedBox3d TriangleMesh::bounds() const {
  Eigen::AlignedBox3d box;
  for (Index v = 0; v < vertex_count(); ++v) box.extend(vertices.col(v));
  return box;
}

Index clean_degenerate(TriangleMesh& mesh, double area_eps) {
  const Index nv = mesh.vertex_count();
  Triangles kept(3, mesh.triangle_count());
  Index count = 0;
  for (Index t = 0; t < mesh.triangle_count(); ++t) {
    for (int k = 0; k < 3; ++k)
      if (mesh.triangles(k, t) < 0 || mesh.triangles(k, t) >= nv)
        throw Error(ErrorKind::InvalidInput, "triangle " + std::to_string(t) + " has an out-of-range index");
    const auto& f = mesh.triangles.col(t);
    if (f(0) == f(1) || f(1) == f(2) || f(0) == f(2)) continue;
    if (!(mesh.area(t) > area_eps)) continue;
    kept.col(count++) = f;
  }
  const Index removed = mesh.triangle_count() - count;
  kept.conservativeResize(3, count);
  mesh.triangles = std::move(kept);
  return removed;
}

void weld_vertices(TriangleMesh& mesh, double tol) {
  struct KeyHash {
    std::size_t operator()(const std::array<std::int64_t, 3>& k) const {
      return static_cast<std::size_t>(k[0] * 73856093 ^ k[1] * 19349663 ^ k[2] * 83492791);
    }
  };
  std::unordered_map<std::array<std::int64_t, 3>, std::vector<Index>, KeyHash> grid;
  auto key = [&](const Vector3& p) {
    return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor(p.x() / tol)),
                                       static_cast<std::int64_t>(std::floor(p.y() / tol)),
                                       static_cast<std::int64_t>(std::floor(p.z() / tol))};
  };
  std::vector<Index> remap(static_cast<std::size_t>(mesh.vertex_count()));
  Points merged(3, mesh.vertex_count());
  Index count = 0;
  for (Index v = 0; v < mesh.vertex_count(); ++v) {
    const Vector3 p = mesh.vertices.col(v);
    const auto k = key(p);
    Index found = -1;
    for (std::int64_t dx = -1; dx <= 1 && found < 0; ++dx)
      for (std::int64_t dy = -1; dy <= 1 && found < 0; ++dy)
        for (std::int64_t dz = -1; dz <= 1 && found < 0; ++dz) {
          auto it = grid.find({k[0] + dx, k[1] + dy, k[2] + dz});
          if (it == grid.end()) continue;
          for (Index c : it->second)
            if ((merged.col(c) - p).norm() <= tol) {
              found = c;
              break;
            }
        }
    if (found < 0) {
      found = count++;
      merged.col(found) = p;
      grid[k].push_back(found);
    }
    remap[static_cast<std::size_t>(v)] = found;
  }
  merged.conservativeResize(3, count);
  mesh.vertices = std::move(merged);
  for (Index t = 0; t < mesh.triangle_count(); ++t)
    for (int k = 0; k < 3; ++k) mesh.triangles(k, t) = remap[static_cast<std::size_t>(mesh.triangles(k, t))];
  clean_degenerate(mesh);
}

MeshBvh::MeshBvh(const TriangleMesh& mesh) : mesh_(&mesh) {
  const Index nt = mesh.triangle_count();
  order_.resize(static_cast<std::size_t>(nt));
  std::iota(order_.begin(), order_.end(), Index{0});
  centroids_.resize(3, nt);
  for (Index t = 0; t < nt; ++t) centroids_.col(t) = (mesh.corner(t, 0) + mesh.corner(t, 1) + mesh.corner(t, 2)) / 3.0;
  if (nt > 0) build(0, nt);
}

Index MeshBvh::build(Index begin, Index end) {
  const Index id = static_cast<Index>(nodes_.size());
  nodes_.push_back({});
  Eigen::AlignedBox3d box, cbox;
  for (Index i = begin; i < end; ++i) {
    const Index t = order_[i];
    for (int k = 0; k < 3; ++k) box.extend(mesh_->corner(t, k));
    cbox.extend(centroids_.col(t));
  }
  nodes_[id].box = box;
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= 4) return id;
  int axis = 0;
  cbox.sizes().maxCoeff(&axis);
  const Index mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](Index a, Index b) { return centroids_(axis, a) < centroids_(axis, b); });
  const Index l = build(begin, mid);
  const Index r = build(mid, end);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

MeshBvh::Hit MeshBvh::closest(const Vector3& p) const {
  Hit best;
  best.sq_distance = std::numeric_limits<double>::infinity();
  if (nodes_.empty()) return best;
  using Entry = std::pair<double, Index>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> frontier;
  frontier.emplace(nodes_[0].box.squaredExteriorDistance(p), 0);
  while (!frontier.empty()) {
    const auto [bound, id] = frontier.top();
    frontier.pop();
    if (bound > best.sq_distance) break;
    const Node& node = nodes_[id];
    if (node.left < 0) {
      for (Index i = node.begin; i < node.end; ++i) {
        const Index t = order_[i];
        const Vector3 q = closest_point_on_triangle<double>(p, mesh_->corner(t, 0), mesh_->corner(t, 1),
                                                            mesh_->corner(t, 2));
        const double d2 = (q - p).squaredNorm();
        if (d2 < best.sq_distance || (d2 == best.sq_distance && t < best.triangle)) best = {q, t, d2};
      }
    } else {
      frontier.emplace(nodes_[node.left].box.squaredExteriorDistance(p), node.left);
      frontier.emplace(nodes_[node.right].box.squaredExteriorDistance(p), node.right);
    }
  }
  return best;
}

std::vector<MeshBvh::Hit> MeshBvh::within(const Vector3& p, double sq_radius) const {
  std::vector<Hit> out;
  if (nodes_.empty()) return out;
  std::vector<Index> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if (node.box.squaredExteriorDistance(p) > sq_radius) continue;
    if (node.left >= 0) {
      stack.push_back(node.right);
      stack.push_back(node.left);
      continue;
    }
    for (Index i = node.begin; i < node.end; ++i) {
      const Index t = order_[i];
      const Vector3 q =
          closest_point_on_triangle<double>(p, mesh_->corner(t, 0), mesh_->corner(t, 1), mesh_->corner(t, 2));
      const double d2 = (q - p).squaredNorm();
      if (d2 <= sq_radius) out.push_back({q, t, d2});
    }
  }
  std::sort(out.begin(), out.end(), [](const Hit& a, const Hit& b) { return a.triangle < b.triangle; });
  return out;
}

MeshBvh::Hit brute_force_closest(const TriangleMesh& mesh, const Vector3& p) {
  MeshBvh::Hit best;
  best.sq_distance = std::numeric_limits<double>::infinity();
  for (Index t = 0; t < mesh.triangle_count(); ++t) {
    const Vector3 q = closest_point_on_triangle<double>(p, mesh.corner(t, 0), mesh.corner(t, 1), mesh.corner(t, 2));
    const double d2 = (q - p).squaredNorm();
    if (d2 < best.sq_distance) best = {q, t, d2};
  }
  return best;
}

SurfaceSamples sample_surface(const TriangleMesh& mesh, Index count, std::mt19937_64& rng) {
  const Index nt = mesh.triangle_count();
  if (nt == 0) throw Error(ErrorKind::InvalidInput, "cannot sample an empty mesh");
  std::vector<double> cdf(static_cast<std::size_t>(nt));
  double acc = 0;
  for (Index t = 0; t < nt; ++t) cdf[static_cast<std::size_t>(t)] = (acc += mesh.area(t));
  if (!(acc > 0)) throw Error(ErrorKind::DegenerateInput, "mesh has zero area");

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  SurfaceSamples s;
  s.points.resize(3, count);
  s.normals.resize(3, count);
  s.triangles.resize(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    const double pick = uni(rng) * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), pick);
    const Index t = std::min<Index>(nt - 1, it - cdf.begin());
    const double r1 = std::sqrt(uni(rng));
    const double r2 = uni(rng);
    s.points.col(i) =
        (1 - r1) * mesh.corner(t, 0) + r1 * (1 - r2) * mesh.corner(t, 1) + r1 * r2 * mesh.corner(t, 2);
    s.normals.col(i) = mesh.normal(t);
    s.triangles[static_cast<std::size_t>(i)] = t;
  }
  return s;
}

std::vector<std::pair<Index, Index>> unique_edges(const TriangleMesh& mesh) {
  std::vector<std::pair<Index, Index>> edges;
  edges.reserve(static_cast<std::size_t>(3 * mesh.triangle_count()));
  for (Index t = 0; t < mesh.triangle_count(); ++t)
    for (int k = 0; k < 3; ++k) {
      Index a = mesh.triangles(k, t), b = mesh.triangles((k + 1) % 3, t);
      if (a > b) std::swap(a, b);
      edges.emplace_back(a, b);
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

MeshTopology analyze_topology(const TriangleMesh& mesh) {
  MeshTopology topo;
  const Index nt = mesh.triangle_count();
  topo.face_count = nt;

  struct HalfEdge {
    Index a, b, face;
  };
  std::vector<HalfEdge> half;
  half.reserve(static_cast<std::size_t>(3 * nt));
  std::vector<char> used(static_cast<std::size_t>(mesh.vertex_count()), 0);
  for (Index t = 0; t < nt; ++t)
    for (int k = 0; k < 3; ++k) {
      half.push_back({mesh.triangles(k, t), mesh.triangles((k + 1) % 3, t), t});
      used[static_cast<std::size_t>(mesh.triangles(k, t))] = 1;
    }
  topo.vertex_count = std::count(used.begin(), used.end(), 1);

  auto key_less = [](const HalfEdge& x, const HalfEdge& y) {
    const auto kx = std::minmax(x.a, x.b), ky = std::minmax(y.a, y.b);
    return kx < ky;
  };
  std::sort(half.begin(), half.end(), key_less);

  std::vector<Index> parent(static_cast<std::size_t>(nt));
  std::iota(parent.begin(), parent.end(), Index{0});
  auto find = [&](Index x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };

  for (std::size_t i = 0; i < half.size();) {
    std::size_t j = i;
    while (j < half.size() && !key_less(half[i], half[j])) ++j;
    ++topo.edge_count;
    const std::size_t n = j - i;
    if (n == 1) ++topo.boundary_edges;
    if (n > 2) ++topo.nonmanifold_edges;
    if (n == 2 && half[i].a == half[i + 1].a) ++topo.inconsistent_edges;
    for (std::size_t k = i + 1; k < j; ++k) parent[find(half[k].face)] = find(half[i].face);
    i = j;
  }
  for (Index t = 0; t < nt; ++t)
    if (find(t) == t) ++topo.components;

  // A vertex is manifold when its link (opposite edges of incident faces) is
  // a single cycle or a single path.
  std::vector<std::vector<std::pair<Index, Index>>> link(static_cast<std::size_t>(mesh.vertex_count()));
  for (Index t = 0; t < nt; ++t)
    for (int k = 0; k < 3; ++k)
      link[static_cast<std::size_t>(mesh.triangles(k, t))].emplace_back(mesh.triangles((k + 1) % 3, t),
                                                                      mesh.triangles((k + 2) % 3, t));
  for (const auto& edges : link) {
    if (edges.empty()) continue;
    std::unordered_map<Index, std::vector<Index>> adj;
    for (auto [a, b] : edges) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    bool ok = true;
    for (const auto& [v, nb] : adj)
      if (nb.size() > 2) ok = false;
    if (ok) {
      // connectivity of the link graph
      std::vector<Index> stack{edges.front().first};
      std::unordered_map<Index, char> seen{{edges.front().first, 1}};
      while (!stack.empty()) {
        const Index v = stack.back();
        stack.pop_back();
        for (Index w : adj[v])
          if (!seen.count(w)) {
            seen[w] = 1;
            stack.push_back(w);
          }
      }
      ok = seen.size() == adj.size();
    }
    if (!ok) ++topo.nonmanifold_vertices;
  }
  return topo;
}

}  // namespace rfeps
