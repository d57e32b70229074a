#pragma once

#include <string>
#include <vector>

#include "nps/checkpoint.hpp"
#include "nps/layout.hpp"

namespace nps {

struct MetricsReport {
  double p2s = 0.0;          // two-sided mean point-to-surface distance
  double hd = 0.0;           // two-sided max distance (sampled Hausdorff)
  double nae_degrees = 0.0;  // mean angular error at closest-point pairs
  int surface_samples = 0;
  int target_samples = 0;
  double max_positional_gap = 0.0;
  double mean_smooth_normal_dev_degrees = 0.0;
  double max_smooth_normal_dev_degrees = 0.0;
  double mean_sharp_normal_dev_degrees = 0.0;
};

// Exact distance from a point to a triangle (interior / edge / vertex regions).
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// Median-split AABB tree over a triangle soup for point-to-mesh distances.
class MeshBvh {
 public:
  MeshBvh() = default;
  MeshBvh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> triangles);
  bool empty() const { return triangles_.empty(); }
  double distance(const Vec3& p) const;

 private:
  struct Node {
    Vec3 lo, hi;
    int begin = 0, end = 0;  // leaf triangle range in order_
    int left = -1, right = -1;
  };
  int build(int begin, int end);
  void query(int node, const Vec3& p, double& best) const;

  std::vector<Vec3> vertices_;
  std::vector<std::array<int, 3>> triangles_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

// Nearest-neighbor comparison of two sampled point sets (no surface
// reconstruction involved); distances saturate at the sampling density.
MetricsReport compare_point_sets(const std::vector<Vec3>& a_pts, const std::vector<Vec3>& a_nrm,
                                 const std::vector<Vec3>& b_pts, const std::vector<Vec3>& b_nrm);

// Samples the checkpoint surface uniformly per face area and measures
// point-to-surface distances: target points against a dense tessellation of
// the reconstruction, reconstruction samples against the target mesh when one
// is present (nearest target sample otherwise). NAE disambiguates orientation
// per pair: min(theta, 180 - theta).
MetricsReport evaluate(const Checkpoint& c, const LabeledSamples& target, int n_samples = 30000,
                       std::uint64_t seed = 0);
MetricsReport evaluate(const Checkpoint& c, const FeatureComplex& fc,
                       const LabeledSamples& target, int n_samples = 30000,
                       std::uint64_t seed = 0);

// Cross-patch continuity audit: positional gap from both faces' edge
// evaluations at matched canonical t, normal deviation from eps-inset normals
// on both sides, split by smooth/sharp classification.
MetricsReport continuity_report(const Checkpoint& c, int samples_per_arc = 64);
MetricsReport continuity_report(const Checkpoint& c, const FeatureComplex& fc,
                                int samples_per_arc = 64);

std::string metrics_json(const MetricsReport& r);

}  // namespace nps
