#pragma once

#include <array>
#include <string>
#include <vector>

#include "nps/checkpoint.hpp"

namespace nps {

// 2D triangulation of one parametric domain. Boundary points come first:
// edge j contributes density points at t = 0, 1/density, ..., (density-1)/density
// (t = 1 is the next edge's start), so boundary_count = edges * density.
struct PatchTessellation {
  int face_id = -1;
  int density = 0;
  std::vector<Vec2> points;
  int boundary_count = 0;
  std::vector<std::array<int, 3>> triangles;  // CCW in parameter space
};

// Boundary subdivision at the shared canonical t-values plus a jittered-grid
// interior, triangulated by Delaunay (convex domains make the boundary edges
// hull edges, so no constraint enforcement is needed).
PatchTessellation tessellate_face(const PolygonDomain& domain, int density, int interior_count,
                                  std::uint64_t seed = 0);

struct SurfaceMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<int> tri_patch;
  int degenerate_triangles = 0;  // zero-area mapped triangles, kept in output
};

// Maps per-face tessellations through the network and welds boundary vertices
// across faces by (arc, canonical t) key. Each welded vertex is evaluated
// once, from the shared edge feature, so the weld is exact by construction.
// interior_count < 0 picks a count matching the boundary spacing.
SurfaceMesh mesh_surface(const Checkpoint& c, const FeatureComplex& fc, int density,
                         int interior_count = -1, bool edge_flip = false);
SurfaceMesh mesh_surface(const Checkpoint& c, int density, int interior_count = -1,
                         bool edge_flip = false);

// ASCII OBJ with 1-based indices; `groups` emits one `g patch_<id>` section
// per patch.
void export_obj(const SurfaceMesh& mesh, const std::string& path, bool groups = false);

}  // namespace nps
