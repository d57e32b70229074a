#pragma once

// Shared synthetic fixtures: cube patch layout plus sphere / cube / ellipsoid
// sample generators labeled by dominant axis.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <utility>

#include "nps/layout.hpp"
#include "nps/rng.hpp"

namespace fixtures {

// Face ids by outward axis: 0 +x, 1 -x, 2 +y, 3 -y, 4 +z, 5 -z.
// Corner id bit k set means coordinate k is +1.
inline nps::PatchLayout cube_layout(double corner_scale) {
  nps::PatchLayout layout;
  for (int id = 0; id < 8; ++id) {
    const double x = (id & 1) ? 1.0 : -1.0;
    const double y = (id & 2) ? 1.0 : -1.0;
    const double z = (id & 4) ? 1.0 : -1.0;
    layout.corners.push_back({id, corner_scale * nps::Vec3(x, y, z)});
  }
  layout.faces = {{0, {1, 3, 7, 5}}, {1, {0, 4, 6, 2}}, {2, {2, 6, 7, 3}},
                  {3, {0, 1, 5, 4}}, {4, {4, 5, 7, 6}}, {5, {0, 2, 3, 1}}};
  layout.rebuild_derived();
  return layout;
}

inline int dominant_axis_face(const nps::Vec3& d) {
  int axis = 0;
  for (int k = 1; k < 3; ++k)
    if (std::abs(d[k]) > std::abs(d[axis])) axis = k;
  return 2 * axis + (d[axis] >= 0.0 ? 0 : 1);
}

inline nps::Vec3 unit_direction(nps::Rng& rng) {
  while (true) {
    const nps::Vec3 d(rng.normal(), rng.normal(), rng.normal());
    const double n = d.norm();
    if (n > 1e-6) return d / n;
  }
}

// Samples of the ellipsoid x = diag(axes) d over unit directions d, labeled by
// the dominant direction axis. axes = (1,1,1) gives the unit sphere.
inline std::vector<nps::Sample> ellipsoid_points(const nps::Vec3& axes, int count,
                                                 std::uint64_t seed) {
  nps::Rng rng(seed);
  std::vector<nps::Sample> pts;
  pts.reserve(count);
  for (int i = 0; i < count; ++i) {
    const nps::Vec3 d = unit_direction(rng);
    nps::Sample s;
    s.position = axes.cwiseProduct(d);
    s.normal = d.cwiseQuotient(axes).normalized();
    s.patch_id = dominant_axis_face(d);
    pts.push_back(s);
  }
  return pts;
}

// Subdivided icosahedron scaled by the ellipsoid axes; triangles labeled by
// the dominant axis of their centroid direction.
inline nps::MeshInput icosphere_mesh(const nps::Vec3& axes, int subdiv) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<nps::Vec3> v = {{-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
                              {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
                              {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> tris = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdiv; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const std::pair<int, int> key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      const int idx = static_cast<int>(v.size());
      v.push_back((v[a] + v[b]).normalized());
      midpoint[key] = idx;
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(tris.size() * 4);
    for (const auto& t : tris) {
      const int ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    tris = std::move(next);
  }
  nps::MeshInput mesh;
  for (const auto& p : v) mesh.vertices.push_back(axes.cwiseProduct(p));
  mesh.triangles = tris;
  for (const auto& t : tris) {
    const nps::Vec3 centroid = (v[t[0]] + v[t[1]] + v[t[2]]).normalized();
    mesh.tri_patch.push_back(dominant_axis_face(centroid));
  }
  return mesh;
}

// [-1, 1]^3 cube as 12 triangles, two per layout face.
inline nps::MeshInput cube_mesh() {
  const nps::PatchLayout layout = cube_layout(1.0);
  nps::MeshInput mesh;
  for (int id = 0; id < 8; ++id) mesh.vertices.push_back(layout.corner(id).position);
  for (const auto& f : layout.faces) {
    mesh.triangles.push_back({f.corners[0], f.corners[1], f.corners[2]});
    mesh.triangles.push_back({f.corners[0], f.corners[2], f.corners[3]});
    mesh.tri_patch.push_back(f.id);
    mesh.tri_patch.push_back(f.id);
  }
  return mesh;
}

inline nps::LabeledSamples sphere_fixture(nps::PatchLayout& layout, int count,
                                          std::uint64_t seed, bool with_mesh = false) {
  layout = cube_layout(1.0 / std::sqrt(3.0));
  std::optional<nps::MeshInput> mesh;
  if (with_mesh) mesh = icosphere_mesh({1.0, 1.0, 1.0}, 4);
  return nps::make_samples(ellipsoid_points({1.0, 1.0, 1.0}, count, seed), layout,
                           std::move(mesh));
}

inline nps::LabeledSamples ellipsoid_fixture(nps::PatchLayout& layout, const nps::Vec3& axes,
                                             int count, std::uint64_t seed,
                                             bool with_mesh = false) {
  layout = cube_layout(1.0 / std::sqrt(3.0));
  for (auto& c : layout.corners) c.position = axes.cwiseProduct(c.position);
  std::optional<nps::MeshInput> mesh;
  if (with_mesh) mesh = icosphere_mesh(axes, 4);
  return nps::make_samples(ellipsoid_points(axes, count, seed), layout, std::move(mesh));
}

// Surface of the axis-aligned cube [-1, 1]^3, labeled by face.
inline nps::LabeledSamples cube_fixture(nps::PatchLayout& layout, int count,
                                        std::uint64_t seed, bool with_mesh = false) {
  layout = cube_layout(1.0);
  nps::Rng rng(seed);
  std::vector<nps::Sample> pts;
  pts.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int face = rng.uniform_int(6);
    const int axis = face / 2;
    const double sign = face % 2 == 0 ? 1.0 : -1.0;
    nps::Sample s;
    s.position[axis] = sign;
    s.position[(axis + 1) % 3] = rng.uniform(-1.0, 1.0);
    s.position[(axis + 2) % 3] = rng.uniform(-1.0, 1.0);
    s.normal = nps::Vec3::Zero();
    s.normal[axis] = sign;
    s.patch_id = face;
    pts.push_back(s);
  }
  std::optional<nps::MeshInput> mesh;
  if (with_mesh) mesh = cube_mesh();
  return nps::make_samples(std::move(pts), layout, std::move(mesh));
}

// Two flat quads sharing one arc; an open surface (disc topology).
inline nps::PatchLayout two_patch_layout() {
  nps::PatchLayout layout;
  layout.corners = {{0, {0, 0, 0}}, {1, {1, 0, 0}}, {2, {1, 1, 0}},
                    {3, {0, 1, 0}}, {4, {2, 0, 0}}, {5, {2, 1, 0}}};
  layout.faces = {{0, {0, 1, 2, 3}}, {1, {1, 4, 5, 2}}};
  layout.rebuild_derived();
  return layout;
}

inline nps::LabeledSamples two_patch_fixture(nps::PatchLayout& layout, int count,
                                             std::uint64_t seed) {
  layout = two_patch_layout();
  nps::Rng rng(seed);
  std::vector<nps::Sample> pts;
  pts.reserve(count);
  for (int i = 0; i < count; ++i) {
    nps::Sample s;
    s.position = nps::Vec3(rng.uniform(0.0, 2.0), rng.uniform(0.0, 1.0), 0.0);
    s.normal = nps::Vec3(0, 0, 1);
    s.patch_id = s.position.x() < 1.0 ? 0 : 1;
    pts.push_back(s);
  }
  return nps::make_samples(std::move(pts), layout);
}

}  // namespace fixtures
