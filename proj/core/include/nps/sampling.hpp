#pragma once

#include <vector>

#include "nps/complex.hpp"
#include "nps/kdtree.hpp"
#include "nps/layout.hpp"
#include "nps/rng.hpp"

namespace nps {

// Uniform samples over the polygon interior: fan triangulation, area-weighted
// triangle pick, uniform barycentric draw, with a 1e-6 rejection margin so no
// sample touches the boundary.
std::vector<Vec2> sample_domain(const PolygonDomain& domain, int count, Rng& rng);

// Largest-remainder allocation of `total` proportional to `areas`, each entry
// at least 1.
std::vector<int> allocate_per_face(const std::vector<double>& areas, int total);

enum class PairDirection { SurfaceToTarget, TargetToSurface };

struct PairedSamples {
  struct Pair {
    int surface_index;  // into the surface sample set
    int target_index;   // into the target sample set
    int face_id;        // -1 in label-free mode
    PairDirection direction;
  };
  std::vector<Pair> pairs;
};

// Two-sided per-patch nearest-neighbor pairing. Both point sets are bucketed
// by face id; pairs never cross patch labels. Throws on an empty bucket.
PairedSamples pair_closest(const std::vector<Vec3>& surface_pts,
                           const std::vector<int>& surface_face,
                           const std::vector<Vec3>& target_pts,
                           const std::vector<int>& target_face);

// Label-free two-sided pairing (point-cloud fitting mode).
PairedSamples pair_closest_global(const std::vector<Vec3>& surface_pts,
                                  const std::vector<Vec3>& target_pts);

// Per-arc smooth/sharp classification. Mesh-based when a mesh with patch ids
// is available (an arc is sharp when the mean normal deviation across its
// boundary mesh edges exceeds pi/4), smooth otherwise; explicit per-arc
// overrides from the layout file win either way.
std::vector<bool> classify_arcs(const PatchLayout& layout, const LabeledSamples& samples);

struct BoundaryPairs {
  struct ArcSamples {
    int arc_index;
    bool smooth;
    int face_a, face_b;
    std::vector<double> ts;          // canonical arc parameters in (0, 1)
    std::vector<Vec2> inset_a;       // epsilon-inset domain points, face_a side
    std::vector<Vec2> inset_b;
  };
  std::vector<ArcSamples> arcs;
  double eps;
};

// m samples per interior arc (arcs adjacent to exactly 2 faces); each side
// contributes the edge point moved eps along its domain's inward edge normal.
BoundaryPairs boundary_pairs(const PatchLayout& layout, const FeatureComplex& complex,
                             const std::vector<bool>& smooth, int m_per_edge, double eps);

}  // namespace nps
