#include "rfeps/rpd.hpp"

#include "rfeps/neighbor_query.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace rfeps {

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
  std::size_t find(std::size_t a) {
    while (parent_[a] != a) a = parent_[a] = parent_[parent_[a]];
    return a;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;  // smallest element is the root
  }

 private:
  std::vector<std::size_t> parent_;
};

struct Polygon {
  std::vector<Vector3> corners;
  std::vector<Index> labels;
};

double polygon_area(const std::vector<Vector3>& v) {
  Vector3 s = Vector3::Zero();
  for (std::size_t k = 1; k + 1 < v.size(); ++k) s += (v[k] - v[0]).cross(v[k + 1] - v[0]);
  return 0.5 * s.norm();
}

// Keeps {x : f(x) <= 0}; the new edge along f = 0 is labeled `label`.
template <typename F>
bool clip(Polygon& poly, const F& f, Index label, Polygon& scratch) {
  const std::size_t m = poly.corners.size();
  thread_local std::vector<double> vals;
  vals.resize(m);
  bool any_out = false, any_in = false;
  for (std::size_t k = 0; k < m; ++k) {
    vals[k] = f(poly.corners[k]);
    if (vals[k] > 0)
      any_out = true;
    else
      any_in = true;
  }
  if (!any_out) return false;
  if (!any_in) {
    poly.corners.clear();
    poly.labels.clear();
    return true;
  }
  scratch.corners.clear();
  scratch.labels.clear();
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t l = (k + 1) % m;
    const bool a_in = vals[k] <= 0, b_in = vals[l] <= 0;
    if (a_in) {
      scratch.corners.push_back(poly.corners[k]);
      scratch.labels.push_back(poly.labels[k]);
    }
    if (a_in != b_in) {
      const double t = vals[k] / (vals[k] - vals[l]);
      scratch.corners.push_back(poly.corners[k] + t * (poly.corners[l] - poly.corners[k]));
      scratch.labels.push_back(a_in ? label : poly.labels[k]);
    }
  }
  std::swap(poly, scratch);
  return true;
}

struct GridKey {
  std::int64_t x, y, z;
  bool operator==(const GridKey&) const = default;
};

struct GridKeyHash {
  std::size_t operator()(const GridKey& k) const {
    std::size_t h = static_cast<std::size_t>(k.x) * 73856093u;
    h ^= static_cast<std::size_t>(k.y) * 19349663u;
    h ^= static_cast<std::size_t>(k.z) * 83492791u;
    return h;
  }
};

class PowerClipper {
 public:
  PowerClipper(const WeightedSites& sites, const Eigen::VectorXd& shifted, const NeighborQuery& index,
               const std::vector<std::vector<NeighborQuery::Hit>>& near)
      : sites_(sites), w_(shifted), index_(index), near_(near), w_max_(shifted.maxCoeff()) {}

  // Restricted cell of site i inside the triangle (a, b, c).
  Polygon cell(Index i, const Vector3& a, const Vector3& b, const Vector3& c) const {
    Polygon poly;
    poly.corners = {a, b, c};
    poly.labels = {base_edge_label(0), base_edge_label(1), base_edge_label(2)};
    Polygon scratch;
    const Vector3 si = sites_.positions.col(i);
    const double wi = w_(i);
    const Index n = sites_.size();
    std::vector<NeighborQuery::Hit> extended;
    const std::vector<NeighborQuery::Hit>* list = &near_[static_cast<std::size_t>(i)];
    double r2 = radius2(poly, si);
    for (std::size_t k = 0;; ++k) {
      if (k == list->size()) {
        if (static_cast<Index>(list->size()) >= n - 1) break;
        extended = index_.knn(i, std::min<Index>(n - 1, 4 * static_cast<Index>(list->size()) + 16));
        list = &extended;
        if (k >= list->size()) break;
      }
      const auto& hit = (*list)[k];
      const double d = std::sqrt(hit.sq_distance);
      const double r = std::sqrt(r2);
      if (d >= r + std::sqrt(std::max(0.0, r2 - wi + w_max_))) break;
      const Index j = hit.index;
      const Vector3 sj = sites_.positions.col(j);
      const Vector3 axis = sj - si;
      const Vector3 mid = 0.5 * (si + sj);
      const double shift = w_(j) - wi;
      const bool changed =
          clip(poly, [&](const Vector3& x) { return 2.0 * (x - mid).dot(axis) + shift; }, j, scratch);
      if (poly.corners.empty()) break;
      if (changed) r2 = radius2(poly, si);
    }
    return poly;
  }

  Index min_power(const Vector3& x) const {
    const Index n = sites_.size();
    Index k = std::min<Index>(n, 16);
    for (;;) {
      const auto hits = index_.knn(x, k);
      Index best = -1;
      double best_pow = std::numeric_limits<double>::infinity();
      for (const auto& h : hits) {
        const double p = h.sq_distance - w_(h.index);
        if (p < best_pow || (p == best_pow && h.index < best)) {
          best_pow = p;
          best = h.index;
        }
      }
      if (k >= n || hits.back().sq_distance - w_max_ > best_pow) return best;
      k = std::min(n, 4 * k);
    }
  }

 private:
  static double radius2(const Polygon& poly, const Vector3& s) {
    double r2 = 0;
    for (const auto& v : poly.corners) r2 = std::max(r2, (v - s).squaredNorm());
    return r2;
  }

  const WeightedSites& sites_;
  const Eigen::VectorXd& w_;
  const NeighborQuery& index_;
  const std::vector<std::vector<NeighborQuery::Hit>>& near_;
  double w_max_;
};

Vector3 any_orthogonal(const Vector3& n) {
  const Vector3 helper = std::abs(n.x()) < 0.9 ? Vector3::UnitX() : Vector3::UnitY();
  return (helper - n * n.dot(helper)).normalized();
}

}  // namespace

WeightedSites project_sites(const OrientedCloud& cloud, const TriangleMesh& base, int threads) {
  if (base.triangle_count() == 0) throw Error(ErrorKind::InvalidInput, "base surface has no triangles");
  const MeshBvh bvh(base);
  WeightedSites sites;
  const Index n = cloud.size();
  sites.positions.resize(3, n);
  sites.weights = cloud.weights;
  sites.source.resize(static_cast<std::size_t>(n));
  std::iota(sites.source.begin(), sites.source.end(), Index{0});
  parallel_for(n, threads, [&](Index i) { sites.positions.col(i) = bvh.closest(cloud.positions.col(i)).point; });
  return sites;
}

Index min_power_site(const WeightedSites& sites, const Vector3& x) {
  Index best = -1;
  double best_pow = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < sites.size(); ++j) {
    const double p = (sites.positions.col(j) - x).squaredNorm() - sites.weights(j);
    if (p < best_pow) {
      best_pow = p;
      best = j;
    }
  }
  return best;
}

RestrictedPowerDiagram compute_rpd(const WeightedSites& sites, const TriangleMesh& base, const RpdOptions& options) {
  const Index n = sites.size();
  if (n < 2) throw Error(ErrorKind::InvalidInput, "restricted power diagram needs at least 2 sites");
  if (sites.weights.size() != n || static_cast<Index>(sites.source.size()) != n)
    throw Error(ErrorKind::InvalidInput, "site arrays differ in length");
  if (base.triangle_count() == 0) throw Error(ErrorKind::InvalidInput, "base surface has no triangles");
  if (!sites.positions.allFinite() || !sites.weights.allFinite())
    throw Error(ErrorKind::InvalidInput, "non-finite site position or weight");

  RestrictedPowerDiagram rpd;
  rpd.sites = sites;
  Eigen::AlignedBox3d box = base.bounds();
  for (Index i = 0; i < n; ++i) box.extend(Vector3(sites.positions.col(i)));
  const double diag = std::max(box.diagonal().norm(), 1e-300);
  const double tol = options.snap_tol * diag;
  const int threads = options.threads > 0 ? options.threads : default_thread_count();

  const Eigen::VectorXd shifted = (sites.weights.array() - sites.weights.minCoeff()).matrix();
  const NeighborQuery index(sites.positions);
  std::vector<std::vector<NeighborQuery::Hit>> near(static_cast<std::size_t>(n));
  const Index k0 = std::min<Index>(n - 1, 32);
  parallel_for(n, threads, [&](Index i) { near[static_cast<std::size_t>(i)] = index.knn(i, k0); });

  const double dup2 = (1e-12 * diag) * (1e-12 * diag);
  for (Index i = 0; i < n; ++i) {
    const auto& first = near[static_cast<std::size_t>(i)].front();
    if (first.sq_distance <= dup2 && std::abs(shifted(i) - shifted(first.index)) <= 1e-12 * diag * diag)
      throw Error(ErrorKind::DuplicateSite, "sites " + std::to_string(std::min(i, first.index)) + " and " +
                                                std::to_string(std::max(i, first.index)) +
                                                " coincide with equal weights");
  }

  const PowerClipper clipper(sites, shifted, index, near);
  const Index nt = base.triangle_count();
  std::vector<std::vector<CellPiece>> per_triangle(static_cast<std::size_t>(nt));
  parallel_for(nt, threads, [&](Index t) {
    const Vector3 a = base.corner(t, 0), b = base.corner(t, 1), c = base.corner(t, 2);
    if (!((b - a).cross(c - a).norm() > 0)) return;
    auto& out = per_triangle[static_cast<std::size_t>(t)];
    std::vector<Index> queue{clipper.min_power((a + b + c) / 3.0)};
    std::unordered_set<Index> seen(queue.begin(), queue.end());
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const Index i = queue[q];
      Polygon poly = clipper.cell(i, a, b, c);
      if (poly.corners.size() < 3) continue;
      for (Index l : poly.labels)
        if (l >= 0 && seen.insert(l).second) queue.push_back(l);
      CellPiece piece;
      piece.site = i;
      piece.triangle = t;
      piece.polygon.resize(3, static_cast<Index>(poly.corners.size()));
      for (std::size_t k = 0; k < poly.corners.size(); ++k) piece.polygon.col(static_cast<Index>(k)) = poly.corners[k];
      piece.edge_label = std::move(poly.labels);
      piece.area = polygon_area(poly.corners);
      out.push_back(std::move(piece));
    }
  });

  for (auto& list : per_triangle)
    for (auto& p : list) rpd.pieces.push_back(std::move(p));
  per_triangle.clear();
  const std::size_t np = rpd.pieces.size();

  rpd.base_area = base.total_area();
  rpd.cell_area = Eigen::VectorXd::Zero(n);
  for (const auto& p : rpd.pieces) rpd.cell_area(p.site) += p.area;
  rpd.empty_cells = (rpd.cell_area.array() <= 0).count();
  if (rpd.empty_cells > 0)
    rpd.diagnostics.warn(std::to_string(rpd.empty_cells) + " sites have an empty restricted cell");
  const double covered = rpd.cell_area.sum();
  if (std::abs(covered - rpd.base_area) > 1e-6 * rpd.base_area)
    rpd.diagnostics.warn("restricted cells cover " + std::to_string(covered) + " of base area " +
                         std::to_string(rpd.base_area));

  auto edge_length = [](const CellPiece& p, std::size_t k) {
    const Index m = p.polygon.cols();
    return (p.polygon.col(static_cast<Index>((k + 1) % static_cast<std::size_t>(m))) -
            p.polygon.col(static_cast<Index>(k)))
        .norm();
  };

  for (const auto& p : rpd.pieces)
    for (std::size_t k = 0; k < p.edge_label.size(); ++k)
      if (p.edge_label[k] >= 0 && edge_length(p, k) > tol)
        rpd.adjacency.emplace_back(std::min(p.site, p.edge_label[k]), std::max(p.site, p.edge_label[k]));
  std::sort(rpd.adjacency.begin(), rpd.adjacency.end());
  rpd.adjacency.erase(std::unique(rpd.adjacency.begin(), rpd.adjacency.end()), rpd.adjacency.end());

  // Pieces of one site are connected across shared base edges and shared corners.
  DisjointSets sets(np);
  std::map<std::pair<Index, Index>, Index> edge_ids;
  auto base_edge = [&](Index t, int k) {
    Index u = base.triangles(k, t), v = base.triangles((k + 1) % 3, t);
    if (u > v) std::swap(u, v);
    return edge_ids.try_emplace({u, v}, static_cast<Index>(edge_ids.size())).first->second;
  };
  std::map<std::pair<Index, Index>, std::size_t> on_edge;  // (site, base edge) -> piece
  for (std::size_t p = 0; p < np; ++p) {
    const auto& piece = rpd.pieces[p];
    for (std::size_t k = 0; k < piece.edge_label.size(); ++k) {
      if (piece.edge_label[k] >= 0 || !(edge_length(piece, k) > tol)) continue;
      const Index e = base_edge(piece.triangle, local_edge_of(piece.edge_label[k]));
      const auto [it, inserted] = on_edge.try_emplace({piece.site, e}, p);
      if (!inserted) sets.unite(it->second, p);
    }
  }

  struct Corner {
    std::size_t piece;
    Index k;
  };
  std::vector<Corner> corners;
  for (std::size_t p = 0; p < np; ++p)
    for (Index k = 0; k < rpd.pieces[p].polygon.cols(); ++k) corners.push_back({p, k});
  auto corner_pos = [&](const Corner& c) -> Vector3 { return rpd.pieces[c.piece].polygon.col(c.k); };
  const double cell = std::max(tol, 1e-300);
  auto key_of = [&](const Vector3& x) {
    return GridKey{static_cast<std::int64_t>(std::floor(x.x() / cell)),
                   static_cast<std::int64_t>(std::floor(x.y() / cell)),
                   static_cast<std::int64_t>(std::floor(x.z() / cell))};
  };
  std::unordered_map<GridKey, std::vector<std::size_t>, GridKeyHash> grid;
  grid.reserve(corners.size());
  DisjointSets clusters(corners.size());
  for (std::size_t c = 0; c < corners.size(); ++c) {
    const Vector3 x = corner_pos(corners[c]);
    const GridKey key = key_of(x);
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = grid.find({key.x + dx, key.y + dy, key.z + dz});
          if (it == grid.end()) continue;
          for (std::size_t o : it->second)
            if ((corner_pos(corners[o]) - x).norm() <= tol) clusters.unite(o, c);
        }
    grid[key].push_back(c);
  }
  std::vector<std::vector<std::size_t>> members;
  {
    std::unordered_map<std::size_t, std::size_t> slot;
    for (std::size_t c = 0; c < corners.size(); ++c) {
      const auto [it, inserted] = slot.try_emplace(clusters.find(c), members.size());
      if (inserted) members.emplace_back();
      members[it->second].push_back(c);
    }
  }
  for (const auto& m : members)
    for (std::size_t a = 0; a < m.size(); ++a)
      for (std::size_t b = a + 1; b < m.size(); ++b)
        if (rpd.pieces[corners[m[a]].piece].site == rpd.pieces[corners[m[b]].piece].site)
          sets.unite(corners[m[a]].piece, corners[m[b]].piece);

  rpd.piece_component.resize(np);
  {
    std::unordered_map<std::size_t, Index> comp;
    for (std::size_t p = 0; p < np; ++p) {
      const auto [it, inserted] = comp.try_emplace(sets.find(p), static_cast<Index>(rpd.component_site.size()));
      if (inserted) rpd.component_site.push_back(rpd.pieces[p].site);
      rpd.piece_component[p] = it->second;
    }
  }

  std::vector<Vector3> centroid(np);
  for (std::size_t p = 0; p < np; ++p) centroid[p] = rpd.pieces[p].polygon.rowwise().mean();
  for (const auto& m : members) {
    std::vector<Index> comps;
    for (std::size_t c : m) comps.push_back(rpd.piece_component[corners[c].piece]);
    std::sort(comps.begin(), comps.end());
    comps.erase(std::unique(comps.begin(), comps.end()), comps.end());
    if (comps.size() < 3) continue;
    TriplePoint tp;
    std::vector<Index> tris;
    for (std::size_t c : m) {
      tp.position += corner_pos(corners[c]);
      tris.push_back(rpd.pieces[corners[c].piece].triangle);
    }
    tp.position /= static_cast<double>(m.size());
    std::sort(tris.begin(), tris.end());
    tris.erase(std::unique(tris.begin(), tris.end()), tris.end());
    for (Index t : tris) tp.normal += base.normal(t);
    if (comps.size() > 3 && tp.normal.norm() > 0) {
      const Vector3 nz = tp.normal.normalized();
      const Vector3 e1 = any_orthogonal(nz), e2 = nz.cross(e1);
      std::vector<std::pair<double, Index>> around;
      for (Index comp : comps) {
        Vector3 d = Vector3::Zero();
        for (std::size_t c : m)
          if (rpd.piece_component[corners[c].piece] == comp) d += centroid[corners[c].piece] - tp.position;
        around.emplace_back(std::atan2(d.dot(e2), d.dot(e1)), comp);
      }
      std::sort(around.begin(), around.end());
      comps.clear();
      for (const auto& a : around) comps.push_back(a.second);
    }
    tp.components = std::move(comps);
    rpd.triple_points.push_back(std::move(tp));
  }

  const MeshTopology topo = analyze_topology(base);
  rpd.closed_base = topo.boundary_edges == 0 && topo.nonmanifold_edges == 0;
  return rpd;
}

namespace {

using Face = std::array<Index, 3>;

std::map<std::pair<Index, Index>, std::vector<std::size_t>> edge_faces(const std::vector<Face>& faces) {
  std::map<std::pair<Index, Index>, std::vector<std::size_t>> out;
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k) {
      Index u = faces[f][k], v = faces[f][(k + 1) % 3];
      out[{std::min(u, v), std::max(u, v)}].push_back(f);
    }
  return out;
}

// Manifold around every vertex: each incident edge has at most two faces and
// the faces around the vertex form a single fan.
bool manifold(const std::vector<Face>& faces) {
  const auto edges = edge_faces(faces);
  for (const auto& [e, fs] : edges)
    if (fs.size() > 2) return false;
  for (const auto& f : faces)
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) return false;
  std::map<Index, std::vector<std::pair<Index, Index>>> link;
  for (const auto& f : faces)
    for (int k = 0; k < 3; ++k) link[f[k]].emplace_back(f[(k + 1) % 3], f[(k + 2) % 3]);
  for (const auto& [v, segs] : link) {
    std::map<Index, std::vector<Index>> adj;
    for (const auto& [a, b] : segs) {
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    std::vector<Index> stack{adj.begin()->first};
    std::set<Index> seen{stack.front()};
    while (!stack.empty()) {
      const Index x = stack.back();
      stack.pop_back();
      for (Index y : adj[x])
        if (seen.insert(y).second) stack.push_back(y);
    }
    if (seen.size() != adj.size()) return false;
  }
  return true;
}

}  // namespace

// Cells wholly enclosed by two others whose shared boundary is split in two
// dualize to a small closed surface glued to the rest along one edge. Faces
// are grouped by flooding across edges with exactly two faces; a group that is
// closed on its own and meets an over-full edge next to a larger group is
// dropped. Returns the number of groups removed.
Index remove_pockets(std::vector<Face>& faces) {
  Index removed = 0;
  for (int round = 0; round < 64; ++round) {
    const auto edges = edge_faces(faces);
    std::vector<Index> group(faces.size(), -1);
    std::vector<std::size_t> group_size;
    for (std::size_t seed = 0; seed < faces.size(); ++seed) {
      if (group[seed] >= 0) continue;
      const Index g = static_cast<Index>(group_size.size());
      std::vector<std::size_t> stack{seed};
      group[seed] = g;
      std::size_t count = 0;
      while (!stack.empty()) {
        const std::size_t f = stack.back();
        stack.pop_back();
        ++count;
        for (int k = 0; k < 3; ++k) {
          const Index u = faces[f][k], v = faces[f][(k + 1) % 3];
          const auto& fs = edges.at({std::min(u, v), std::max(u, v)});
          if (fs.size() != 2) continue;
          const std::size_t h = fs[0] == f ? fs[1] : fs[0];
          if (group[h] < 0) {
            group[h] = g;
            stack.push_back(h);
          }
        }
      }
      group_size.push_back(count);
    }
    // Closed: every edge of the group is used exactly twice by the group's faces.
    std::vector<char> closed(group_size.size(), 1);
    for (const auto& [e, fs] : edges) {
      std::map<Index, int> uses;
      for (std::size_t f : fs) ++uses[group[f]];
      for (const auto& [g, n] : uses)
        if (n != 2) closed[static_cast<std::size_t>(g)] = 0;
    }
    Index victim = -1;
    for (const auto& [e, fs] : edges) {
      if (fs.size() <= 2) continue;
      std::set<Index> gs;
      for (std::size_t f : fs) gs.insert(group[f]);
      if (gs.size() < 2) continue;
      Index largest = *gs.begin();
      for (Index g : gs)
        if (group_size[static_cast<std::size_t>(g)] > group_size[static_cast<std::size_t>(largest)]) largest = g;
      for (Index g : gs)
        if (g != largest && closed[static_cast<std::size_t>(g)] &&
            (victim < 0 || group_size[static_cast<std::size_t>(g)] < group_size[static_cast<std::size_t>(victim)]))
          victim = g;
    }
    if (victim < 0) break;
    std::vector<Face> kept;
    for (std::size_t f = 0; f < faces.size(); ++f)
      if (group[f] != victim) kept.push_back(faces[f]);
    faces = std::move(kept);
    ++removed;
  }
  return removed;
}

DualMesh extract_dual(const RestrictedPowerDiagram& rpd, const OrientedCloud& cloud) {
  const auto& sites = rpd.sites;
  for (Index s : sites.source)
    if (s < 0 || s >= cloud.size()) throw Error(ErrorKind::InvalidInput, "site source outside the cloud");

  std::vector<Face> faces;
  std::vector<Vector3> face_normal;
  for (const auto& tp : rpd.triple_points) {
    std::vector<Index> ring = tp.components;
    std::rotate(ring.begin(), std::min_element(ring.begin(), ring.end()), ring.end());
    for (std::size_t k = 1; k + 1 < ring.size(); ++k) {
      faces.push_back({ring[0], ring[k], ring[k + 1]});
      face_normal.push_back(tp.normal);
    }
  }
  {
    // A cell touching only two neighbors yields the same triangle at both of
    // its corners; such pairs bound nothing and cancel.
    std::map<Face, std::vector<std::size_t>> copies;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      Face key = faces[f];
      std::sort(key.begin(), key.end());
      copies[key].push_back(f);
    }
    std::vector<char> keep(faces.size(), 0);
    for (const auto& [key, fs] : copies)
      if (fs.size() % 2 == 1) keep[fs.front()] = 1;
    std::vector<Face> kept;
    std::vector<Vector3> kept_normal;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      if (!keep[f]) continue;
      kept.push_back(faces[f]);
      kept_normal.push_back(face_normal[f]);
    }
    faces = std::move(kept);
    face_normal = std::move(kept_normal);
  }
  DualMesh out;
  {
    std::vector<Face> before = faces;
    const Index pockets = remove_pockets(faces);
    out.removed_pockets = pockets;
    if (pockets > 0) {
      out.diagnostics.warn(std::to_string(pockets) + " enclosed cell groups removed from the dual");
      std::map<Face, std::size_t> index;
      for (std::size_t f = 0; f < before.size(); ++f) index.emplace(before[f], f);
      std::vector<Vector3> kept_normal;
      for (const auto& f : faces) kept_normal.push_back(face_normal[index.at(f)]);
      face_normal = std::move(kept_normal);
    }
  }

  // Components of one site become one vertex when that keeps the surface manifold.
  std::vector<Index> rep(rpd.component_site.size());
  std::iota(rep.begin(), rep.end(), Index{0});
  {
    std::map<Index, std::vector<Index>> by_site;
    std::vector<char> used(rpd.component_site.size(), 0);
    for (const auto& f : faces)
      for (Index c : f) used[static_cast<std::size_t>(c)] = 1;
    for (std::size_t c = 0; c < used.size(); ++c)
      if (used[c]) by_site[rpd.component_site[c]].push_back(static_cast<Index>(c));
    for (const auto& [site, comps] : by_site) {
      for (std::size_t k = 1; k < comps.size(); ++k) {
        std::vector<Face> trial = faces;
        for (auto& f : trial)
          for (Index& c : f)
            if (c == comps[k]) c = comps[0];
        if (manifold(trial)) {
          faces = std::move(trial);
          ++out.merged_components;
        }
      }
    }
    if (!by_site.empty()) {
      Index split = 0;
      for (const auto& [site, comps] : by_site) split += comps.size() > 1 ? 1 : 0;
      if (split > 0) out.diagnostics.warn(std::to_string(split) + " sites have several cell components");
    }
  }

  std::vector<Index> vertex_of(rpd.component_site.size(), -1);
  {
    std::vector<std::pair<Index, Index>> used;  // (site, component)
    for (const auto& f : faces)
      for (Index c : f) used.emplace_back(rpd.component_site[static_cast<std::size_t>(c)], c);
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());
    out.mesh.vertices.resize(3, static_cast<Index>(used.size()));
    for (std::size_t v = 0; v < used.size(); ++v) {
      vertex_of[static_cast<std::size_t>(used[v].second)] = static_cast<Index>(v);
      out.vertex_site.push_back(used[v].first);
      out.mesh.vertices.col(static_cast<Index>(v)) = cloud.positions.col(sites.source[static_cast<std::size_t>(used[v].first)]);
    }
    std::vector<char> has_vertex(static_cast<std::size_t>(sites.size()), 0);
    for (Index s : out.vertex_site) has_vertex[static_cast<std::size_t>(s)] = 1;
    out.dropped_sites = static_cast<Index>(std::count(has_vertex.begin(), has_vertex.end(), 0));
    if (out.dropped_sites > 0) out.diagnostics.warn(std::to_string(out.dropped_sites) + " sites have no dual face");
  }
  for (auto& f : faces)
    for (Index& c : f) c = vertex_of[static_cast<std::size_t>(c)];

  // Coherent orientation per connected piece, then a majority vote against the base normals.
  const auto edges = edge_faces(faces);
  std::vector<int> state(faces.size(), 0);  // 0 unvisited, 1 kept, -1 flipped
  Index conflicts = 0;
  auto directed = [](const Face& f, Index u, Index v) {
    for (int k = 0; k < 3; ++k)
      if (f[k] == u && f[(k + 1) % 3] == v) return true;
    return false;
  };
  auto site_pos = [&](Index v) -> Vector3 { return sites.positions.col(out.vertex_site[static_cast<std::size_t>(v)]); };
  for (std::size_t seed = 0; seed < faces.size(); ++seed) {
    if (state[seed] != 0) continue;
    std::vector<std::size_t> piece{seed};
    state[seed] = 1;
    for (std::size_t q = 0; q < piece.size(); ++q) {
      const std::size_t f = piece[q];
      Face cur = faces[f];
      if (state[f] < 0) std::swap(cur[1], cur[2]);
      for (int k = 0; k < 3; ++k) {
        const Index u = cur[k], v = cur[(k + 1) % 3];
        const auto& fs = edges.at({std::min(u, v), std::max(u, v)});
        if (fs.size() != 2) continue;
        const std::size_t g = fs[0] == f ? fs[1] : fs[0];
        // Neighbor must traverse the edge as v -> u.
        const int want = directed(faces[g], v, u) ? 1 : -1;
        if (state[g] == 0) {
          state[g] = want;
          piece.push_back(g);
        } else if (state[g] != want) {
          ++conflicts;
        }
      }
    }
    double vote = 0;
    for (std::size_t f : piece) {
      Face cur = faces[f];
      if (state[f] < 0) std::swap(cur[1], cur[2]);
      const Vector3 n = (site_pos(cur[1]) - site_pos(cur[0])).cross(site_pos(cur[2]) - site_pos(cur[0]));
      vote += n.dot(face_normal[f]) >= 0 ? 1 : -1;
    }
    if (vote < 0)
      for (std::size_t f : piece) state[f] = -state[f];
  }
  if (conflicts > 0) out.diagnostics.warn(std::to_string(conflicts) + " orientation conflicts");

  out.mesh.triangles.resize(3, static_cast<Index>(faces.size()));
  for (std::size_t f = 0; f < faces.size(); ++f) {
    Face cur = faces[f];
    if (state[f] < 0) std::swap(cur[1], cur[2]);
    for (int k = 0; k < 3; ++k) out.mesh.triangles(k, static_cast<Index>(f)) = cur[k];
  }

  const MeshTopology topo = analyze_topology(out.mesh);
  const bool bad = topo.nonmanifold_edges > 0 || topo.nonmanifold_vertices > 0 || topo.inconsistent_edges > 0 ||
                   (rpd.closed_base && topo.boundary_edges > 0);
  if (bad) {
    std::set<Index> offending;
    for (const auto& [e, fs] : edges)
      if (fs.size() > 2 || (rpd.closed_base && fs.size() == 1)) {
        offending.insert(out.vertex_site[static_cast<std::size_t>(e.first)]);
        offending.insert(out.vertex_site[static_cast<std::size_t>(e.second)]);
      }
    std::string list;
    Index shown = 0;
    for (Index s : offending) {
      if (shown++ == 20) {
        list += " ...";
        break;
      }
      list += " " + std::to_string(s);
    }
    throw Error(ErrorKind::NonManifoldOutput,
                "dual mesh has " + std::to_string(topo.nonmanifold_edges) + " non-manifold edges, " +
                    std::to_string(topo.boundary_edges) + " boundary edges, " +
                    std::to_string(topo.nonmanifold_vertices) + " non-manifold vertices, " +
                    std::to_string(topo.inconsistent_edges) + " inconsistent edges; sites:" + list);
  }
  return out;
}

}  // namespace rfeps
