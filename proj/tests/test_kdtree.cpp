#include <vector>

#include "doctest.h"
#include "nps/kdtree.hpp"
#include "nps/rng.hpp"

namespace {

int brute_nearest(const std::vector<nps::Vec3>& pts, const nps::Vec3& q) {
  int best = -1;
  double best_d2 = 1e300;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d2 = (pts[i] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("kd-tree agrees with brute force on random clouds") {
  nps::Rng rng(101);
  for (int n : {1, 2, 3, 17, 200}) {
    std::vector<nps::Vec3> pts;
    for (int i = 0; i < n; ++i)
      pts.emplace_back(rng.normal(), rng.normal(), rng.normal());
    const nps::KdTree3 tree(pts);
    CHECK(tree.size() == n);
    for (int q = 0; q < 500; ++q) {
      const nps::Vec3 query(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0),
                            rng.uniform(-3.0, 3.0));
      const int got = tree.nearest(query);
      const int want = brute_nearest(pts, query);
      // Exact: both sides are the same computation on the same point.
      CHECK((pts[got] - query).squaredNorm() == (pts[want] - query).squaredNorm());
    }
  }
}

TEST_CASE("kd-tree handles duplicate points and exact hits") {
  std::vector<nps::Vec3> pts = {{0, 0, 0}, {1, 1, 1}, {1, 1, 1}, {2, 0, 0}};
  const nps::KdTree3 tree(pts);
  CHECK(tree.nearest({1, 1, 1}) >= 1);
  CHECK(tree.nearest({1, 1, 1}) <= 2);
  CHECK(tree.nearest({0, 0, 0}) == 0);
  CHECK((tree.point(tree.nearest({1.9, 0, 0})) - nps::Vec3(2, 0, 0)).norm() == 0.0);
}

TEST_CASE("kd-tree on a degenerate axis-aligned line") {
  std::vector<nps::Vec3> pts;
  for (int i = 0; i < 50; ++i) pts.emplace_back(static_cast<double>(i), 0.0, 0.0);
  const nps::KdTree3 tree(pts);
  for (int i = 0; i < 50; ++i)
    CHECK(tree.nearest({i + 0.2, 5.0, -3.0}) == i);
}

TEST_CASE("empty tree returns -1") {
  const nps::KdTree3 tree;
  CHECK(tree.nearest({0, 0, 0}) == -1);
}
