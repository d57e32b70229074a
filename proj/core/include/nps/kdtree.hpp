#pragma once

#include <vector>

#include "nps/geom.hpp"

namespace nps {

// Exact nearest-neighbor kd-tree over 3D points. Ties break toward the lower
// point index, so queries are deterministic.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(std::vector<Vec3> points);

  int size() const { return static_cast<int>(points_.size()); }
  const Vec3& point(int i) const { return points_[i]; }

  // Index of the nearest point; -1 for an empty tree.
  int nearest(const Vec3& query) const;

 private:
  struct Node {
    int axis = -1;
    int point = -1;  // leaf payload start when axis == -1
    int count = 0;
    double split = 0.0;
    int left = -1, right = -1;
  };
  int build(int begin, int end, int depth);
  void search(int node, const Vec3& q, int& best, double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<int> order_;  // permutation of point indices, leaves reference ranges
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace nps
