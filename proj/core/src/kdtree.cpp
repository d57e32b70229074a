#include "nps/kdtree.hpp"

#include <algorithm>
#include <numeric>

namespace nps {

namespace {
constexpr int kLeafSize = 16;
}

KdTree3::KdTree3(std::vector<Vec3> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) root_ = build(0, static_cast<int>(points_.size()), 0);
}

int KdTree3::build(int begin, int end, int depth) {
  Node node;
  if (end - begin <= kLeafSize) {
    node.point = begin;
    node.count = end - begin;
    // Deterministic tie-break: keep leaf payload in index order.
    std::sort(order_.begin() + begin, order_.begin() + end);
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }
  const int axis = depth % 3;
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     if (points_[a][axis] != points_[b][axis])
                       return points_[a][axis] < points_[b][axis];
                     return a < b;
                   });
  node.axis = axis;
  node.split = points_[order_[mid]][axis];
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[self].left = left;
  nodes_[self].right = right;
  return self;
}

void KdTree3::search(int ni, const Vec3& q, int& best, double& best_d2) const {
  const Node& node = nodes_[ni];
  if (node.axis < 0) {
    for (int i = 0; i < node.count; ++i) {
      const int idx = order_[node.point + i];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best_d2 = d2;
        best = idx;
      }
    }
    return;
  }
  const double delta = q[node.axis] - node.split;
  const int near = delta < 0.0 ? node.left : node.right;
  const int far = delta < 0.0 ? node.right : node.left;
  search(near, q, best, best_d2);
  if (delta * delta <= best_d2) search(far, q, best, best_d2);
}

int KdTree3::nearest(const Vec3& query) const {
  if (root_ < 0) return -1;
  int best = -1;
  double best_d2 = std::numeric_limits<double>::max();
  search(root_, query, best, best_d2);
  return best;
}

}  // namespace nps
