#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nps/geom.hpp"

namespace nps {

struct Corner {
  int id = -1;
  Vec3 position = Vec3::Zero();
};

struct Face {
  int id = -1;
  std::vector<int> corners;  // ordered cycle of corner ids
};

// Undirected arc between two corners, a < b. `faces` lists adjacent face ids
// (at most 2 for a valid layout; more are kept so validation can report them).
struct Arc {
  int a = -1, b = -1;
  std::vector<Vec3> polyline;  // optional geometry, endpoints included when given
  std::vector<int> faces;
  std::optional<bool> smooth_override;
  double length = 0.0;
};

struct PatchLayout {
  std::vector<Corner> corners;
  std::vector<Face> faces;
  std::vector<Arc> arcs;

  std::unordered_map<int, int> corner_index;  // corner id -> index
  std::unordered_map<int, int> face_index;    // face id -> index

  const Corner& corner(int id) const { return corners[corner_index.at(id)]; }
  const Face& face(int id) const { return faces[face_index.at(id)]; }
  // Index into arcs for the undirected pair, -1 if absent.
  int arc_index(int a, int b) const;
  // Boundary edge lengths of a face, edge j runs corners[j] -> corners[j+1].
  std::vector<double> face_boundary_lengths(const Face& f) const;
  // Rebuilds arcs, indices and lengths from corners/faces. Preserves polyline
  // and smooth overrides of arcs that still exist.
  void rebuild_derived();
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Loads the JSON layout format. Throws std::runtime_error on parse failures
// and dangling corner references.
PatchLayout load_layout(const std::string& path);
void write_layout(const PatchLayout& layout, const std::string& path);

ValidationReport validate_layout(const PatchLayout& layout);

struct Sample {
  Vec3 position;
  Vec3 normal;
  int patch_id;
};

struct MeshInput {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<int> tri_patch;
};

struct NormalizeTransform {
  Vec3 shift = Vec3::Zero();  // applied before scaling
  double scale = 1.0;
  Vec3 apply(const Vec3& p) const { return (p + shift) * scale; }
};

struct LabeledSamples {
  std::vector<Sample> points;
  std::unordered_map<int, std::vector<int>> buckets;  // face id -> point indices
  std::optional<MeshInput> mesh;
  NormalizeTransform transform;

  // Per-face surface area estimate: mesh triangle areas when a mesh is
  // present, sample counts otherwise.
  std::vector<double> face_areas(const PatchLayout& layout) const;
};

// Reads `x y z nx ny nz patch_id` records. Re-normalizes normals, buckets by
// patch, recenters the shape at the origin and rescales to maximal extent 2,
// applying the same transform to the layout corners and arc polylines. Also
// orients each face cycle counter-clockwise as seen from the side the sample
// normals point to.
LabeledSamples load_samples(const std::string& path, PatchLayout& layout);

// Same contract, built from already-parsed samples (used by the synthetic
// fixtures and the mesh loader).
LabeledSamples make_samples(std::vector<Sample> points, PatchLayout& layout,
                            std::optional<MeshInput> mesh = std::nullopt);

// OBJ mesh plus sidecar file with one patch id per face line; `count` points
// are drawn area-uniformly from the triangles.
LabeledSamples load_mesh_samples(const std::string& obj_path,
                                 const std::string& sidecar_path,
                                 PatchLayout& layout, int count,
                                 std::uint64_t seed);

}  // namespace nps
