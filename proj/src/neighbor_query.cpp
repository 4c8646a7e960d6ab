#include "rfeps/neighbor_query.hpp"

#include <algorithm>
#include <numeric>
#include <queue>

namespace rfeps {
namespace {

bool hit_less(const NeighborQuery::Hit& a, const NeighborQuery::Hit& b) {
  return a.sq_distance < b.sq_distance || (a.sq_distance == b.sq_distance && a.index < b.index);
}

double box_sq_distance(const Eigen::AlignedBox3d& box, const Vector3& p) {
  return box.squaredExteriorDistance(p);
}

}  // namespace

NeighborQuery::NeighborQuery(const Points& positions, int leaf_size) : points_(positions) {
  order_.resize(static_cast<std::size_t>(points_.cols()));
  std::iota(order_.begin(), order_.end(), Index{0});
  if (!order_.empty()) {
    nodes_.reserve(2 * order_.size() / std::max(1, leaf_size) + 2);
    build(0, static_cast<Index>(order_.size()), std::max(1, leaf_size));
  }
}

Index NeighborQuery::build(Index begin, Index end, int leaf_size) {
  const Index id = static_cast<Index>(nodes_.size());
  nodes_.push_back({});
  Eigen::AlignedBox3d box;
  for (Index i = begin; i < end; ++i) box.extend(points_.col(order_[i]));
  nodes_[id].box = box;
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= leaf_size) return id;

  int axis = 0;
  box.sizes().maxCoeff(&axis);
  const Index mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](Index a, Index b) {
    const double pa = points_(axis, a);
    const double pb = points_(axis, b);
    return pa < pb || (pa == pb && a < b);
  });
  const Index left = build(begin, mid, leaf_size);
  const Index right = build(mid, end, leaf_size);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<NeighborQuery::Hit> NeighborQuery::radius(const Vector3& p, double radius,
                                                      std::optional<Index> exclude) const {
  std::vector<Hit> hits;
  if (nodes_.empty() || radius < 0) return hits;
  const double r2 = radius * radius;
  std::vector<Index> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if (box_sq_distance(node.box, p) > r2) continue;
    if (node.left < 0) {
      for (Index k = node.begin; k < node.end; ++k) {
        const Index i = order_[k];
        if (exclude && *exclude == i) continue;
        const double d2 = (points_.col(i) - p).squaredNorm();
        if (d2 <= r2) hits.push_back({i, d2});
      }
    } else {
      stack.push_back(node.right);
      stack.push_back(node.left);
    }
  }
  std::sort(hits.begin(), hits.end(), hit_less);
  return hits;
}

std::vector<NeighborQuery::Hit> NeighborQuery::knn(const Vector3& p, Index k, std::optional<Index> exclude) const {
  std::vector<Hit> heap;  // max-heap on (distance, index)
  if (nodes_.empty() || k <= 0) return heap;
  heap.reserve(static_cast<std::size_t>(k) + 1);

  auto worst = [&] { return heap.size() < static_cast<std::size_t>(k) ? INFINITY : heap.front().sq_distance; };

  using Entry = std::pair<double, Index>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> frontier;
  frontier.emplace(box_sq_distance(nodes_[0].box, p), 0);
  while (!frontier.empty()) {
    const auto [bound, id] = frontier.top();
    frontier.pop();
    if (bound > worst()) break;
    const Node& node = nodes_[id];
    if (node.left < 0) {
      for (Index t = node.begin; t < node.end; ++t) {
        const Index i = order_[t];
        if (exclude && *exclude == i) continue;
        const Hit h{i, (points_.col(i) - p).squaredNorm()};
        if (heap.size() < static_cast<std::size_t>(k)) {
          heap.push_back(h);
          std::push_heap(heap.begin(), heap.end(), hit_less);
        } else if (hit_less(h, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), hit_less);
          heap.back() = h;
          std::push_heap(heap.begin(), heap.end(), hit_less);
        }
      }
    } else {
      frontier.emplace(box_sq_distance(nodes_[node.left].box, p), node.left);
      frontier.emplace(box_sq_distance(nodes_[node.right].box, p), node.right);
    }
  }
  std::sort_heap(heap.begin(), heap.end(), hit_less);
  return heap;
}

NeighborQuery::Hit NeighborQuery::nearest(const Vector3& p) const {
  const auto hits = knn(p, 1);
  if (hits.empty()) throw Error(ErrorKind::InvalidInput, "nearest() on empty index");
  return hits.front();
}

std::vector<std::vector<Index>> radius_graph(const NeighborQuery& index, double radius, int threads) {
  std::vector<std::vector<Index>> graph(static_cast<std::size_t>(index.size()));
  parallel_for(index.size(), threads, [&](Index i) {
    auto& out = graph[static_cast<std::size_t>(i)];
    for (const auto& h : index.radius(i, radius)) out.push_back(h.index);
  });
  return graph;
}

std::vector<NeighborQuery::Hit> brute_force_radius(const Points& points, const Vector3& p, double radius,
                                                   std::optional<Index> exclude) {
  std::vector<NeighborQuery::Hit> hits;
  for (Index i = 0; i < points.cols(); ++i) {
    if (exclude && *exclude == i) continue;
    const double d2 = (points.col(i) - p).squaredNorm();
    if (d2 <= radius * radius) hits.push_back({i, d2});
  }
  std::sort(hits.begin(), hits.end(), hit_less);
  return hits;
}

std::vector<NeighborQuery::Hit> brute_force_knn(const Points& points, const Vector3& p, Index k,
                                                std::optional<Index> exclude) {
  std::vector<NeighborQuery::Hit> hits;
  for (Index i = 0; i < points.cols(); ++i) {
    if (exclude && *exclude == i) continue;
    hits.push_back({i, (points.col(i) - p).squaredNorm()});
  }
  std::sort(hits.begin(), hits.end(), hit_less);
  if (static_cast<Index>(hits.size()) > k) hits.resize(static_cast<std::size_t>(k));
  return hits;
}

}  // namespace rfeps
