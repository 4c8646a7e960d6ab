#pragma once

#include "rfeps/common.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace rfeps {

/// Immutable kd-tree over a snapshot of 3D positions.
///
/// Safe for concurrent queries. Radius results are returned in ascending
/// distance order (ties broken by index), k-NN results likewise.
class NeighborQuery {
 public:
  struct Hit {
    Index index;
    double sq_distance;
  };

  NeighborQuery() = default;
  explicit NeighborQuery(const Points& positions, int leaf_size = 12);

  Index size() const { return static_cast<Index>(points_.cols()); }
  const Points& points() const { return points_; }

  /// All points q with |q - p| <= radius, excluding `exclude` if given.
  std::vector<Hit> radius(const Vector3& p, double radius, std::optional<Index> exclude = {}) const;
  /// Radius neighbors of stored point i, excluding i itself.
  std::vector<Hit> radius(Index i, double radius) const { return this->radius(points_.col(i), radius, i); }

  /// The k nearest points to p (fewer if the set is smaller), excluding `exclude` if given.
  std::vector<Hit> knn(const Vector3& p, Index k, std::optional<Index> exclude = {}) const;
  /// k nearest neighbors of stored point i, excluding i itself.
  std::vector<Hit> knn(Index i, Index k) const { return knn(points_.col(i), k, i); }

  /// Nearest stored point; requires a non-empty index.
  Hit nearest(const Vector3& p) const;

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    Index begin = 0;
    Index end = 0;
    Index left = -1;
    Index right = -1;
  };

  Index build(Index begin, Index end, int leaf_size);

  Points points_;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
};

/// Radius neighborhoods of every stored point (self excluded), ascending distance.
std::vector<std::vector<Index>> radius_graph(const NeighborQuery& index, double radius, int threads = 0);

/// Brute-force reference used by tests and small inputs.
std::vector<NeighborQuery::Hit> brute_force_radius(const Points& points, const Vector3& p, double radius,
                                                   std::optional<Index> exclude = {});
std::vector<NeighborQuery::Hit> brute_force_knn(const Points& points, const Vector3& p, Index k,
                                                std::optional<Index> exclude = {});

}  // namespace rfeps
