#include "nps/mesher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "nps/rng.hpp"

namespace nps {

namespace {

double signed_area(const Vec2& a, const Vec2& b, const Vec2& c) {
  return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x()));
}

// d strictly inside the circumcircle of CCW triangle (a, b, c).
bool in_circumcircle(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const double ax = a.x() - d.x(), ay = a.y() - d.y();
  const double bx = b.x() - d.x(), by = b.y() - d.y();
  const double cx = c.x() - d.x(), cy = c.y() - d.y();
  const double det = (ax * ax + ay * ay) * (bx * cy - cx * by) -
                     (bx * bx + by * by) * (ax * cy - cx * ay) +
                     (cx * cx + cy * cy) * (ax * by - bx * ay);
  return det > 1e-14;
}

// Bowyer-Watson over the point list; super-triangle vertices are appended
// internally and stripped from the result.
std::vector<std::array<int, 3>> delaunay(std::vector<Vec2> pts) {
  const int n = static_cast<int>(pts.size());
  pts.emplace_back(-100.0, -100.0);
  pts.emplace_back(100.0, -100.0);
  pts.emplace_back(0.0, 100.0);
  std::vector<std::array<int, 3>> tris{{n, n + 1, n + 2}};

  for (int p = 0; p < n; ++p) {
    std::vector<std::array<int, 3>> keep;
    std::map<std::pair<int, int>, int> edge_count;
    std::vector<std::pair<int, int>> cavity;
    for (const auto& t : tris) {
      if (in_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], pts[p])) {
        for (int e = 0; e < 3; ++e) {
          const int u = t[e], v = t[(e + 1) % 3];
          const auto key = std::minmax(u, v);
          if (++edge_count[key] == 1)
            cavity.emplace_back(u, v);
        }
      } else {
        keep.push_back(t);
      }
    }
    tris = std::move(keep);
    for (const auto& [u, v] : cavity) {
      if (edge_count[std::minmax(u, v)] != 1) continue;  // interior cavity edge
      std::array<int, 3> t{u, v, p};
      if (signed_area(pts[t[0]], pts[t[1]], pts[t[2]]) < 0.0) std::swap(t[1], t[2]);
      tris.push_back(t);
    }
  }

  std::vector<std::array<int, 3>> out;
  for (const auto& t : tris)
    if (t[0] < n && t[1] < n && t[2] < n) out.push_back(t);
  return out;
}

double edge_distance(const PolygonDomain& d, const Vec2& u) {
  double best = std::numeric_limits<double>::max();
  for (int j = 0; j < d.size(); ++j) {
    const Vec2& a = d.vertices[j];
    const Vec2& b = d.vertices[(j + 1) % d.size()];
    const Vec2 e = b - a;
    const double t = std::clamp((u - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
    best = std::min(best, (u - (a + t * e)).norm());
  }
  return best;
}

double polygon_area(const PolygonDomain& d) {
  double a = 0.0;
  for (int j = 1; j + 1 < d.size(); ++j)
    a += signed_area(d.vertices[0], d.vertices[j], d.vertices[j + 1]);
  return std::abs(a);
}

}  // namespace

PatchTessellation tessellate_face(const PolygonDomain& domain, int density, int interior_count,
                                  std::uint64_t seed) {
  if (density < 1) throw std::runtime_error("tessellate_face: density must be >= 1");
  PatchTessellation out;
  out.face_id = domain.face_id;
  out.density = density;
  for (int j = 0; j < domain.size(); ++j)
    for (int i = 0; i < density; ++i)
      out.points.push_back(domain.edge_point(j, static_cast<double>(i) / density));
  out.boundary_count = static_cast<int>(out.points.size());

  if (interior_count > 0) {
    Rng rng(seed);
    const double area = polygon_area(domain);
    const double cell = std::sqrt(area / interior_count);
    const double margin = 0.35 * cell;
    for (double y = -1.0 + 0.5 * cell; y < 1.0; y += cell) {
      for (double x = -1.0 + 0.5 * cell; x < 1.0; x += cell) {
        const Vec2 p(x + (rng.uniform() - 0.5) * 0.8 * cell,
                     y + (rng.uniform() - 0.5) * 0.8 * cell);
        if (!domain.contains(p, 0.0)) continue;
        if (edge_distance(domain, p) < margin) continue;
        out.points.push_back(p);
      }
    }
  }

  out.triangles = delaunay(out.points);
  return out;
}

namespace {

void flip_edges(SurfaceMesh& mesh);

}  // namespace

SurfaceMesh mesh_surface(const Checkpoint& c, const FeatureComplex& fc, int density,
                         int interior_count, bool edge_flip) {
  const PatchLayout& layout = c.layout;
  SurfaceMesh mesh;

  // Shared boundary vertices, evaluated once per key.
  std::map<int, int> corner_vertex;                  // corner id -> vertex
  std::map<std::pair<int, int>, int> arc_vertex;     // (arc index, k) -> vertex
  auto corner_index = [&](int cid) {
    auto it = corner_vertex.find(cid);
    if (it != corner_vertex.end()) return it->second;
    const Vec z = fc.Z.row(fc.vertex_row.at(cid)).transpose();
    const int idx = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(mlp_forward_point(c.mlp, z));
    corner_vertex[cid] = idx;
    return idx;
  };
  auto arc_index = [&](int ai, int k) {
    const Arc& arc = layout.arcs[ai];
    if (k == 0) return corner_index(arc.a);
    if (k == density) return corner_index(arc.b);
    auto it = arc_vertex.find({ai, k});
    if (it != arc_vertex.end()) return it->second;
    const Vec z = edge_feature(fc, {arc.a, arc.b}, static_cast<double>(k) / density);
    const int idx = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(mlp_forward_point(c.mlp, z));
    arc_vertex[{ai, k}] = idx;
    return idx;
  };

  for (std::size_t fi = 0; fi < layout.faces.size(); ++fi) {
    const Face& face = layout.faces[fi];
    const PolygonDomain& dom = fc.domain(face.id);
    const int ne = dom.size();
    int interior = interior_count;
    if (interior < 0) {
      double perimeter = 0.0;
      for (int j = 0; j < ne; ++j)
        perimeter += (dom.vertices[(j + 1) % ne] - dom.vertices[j]).norm();
      const double h = perimeter / (ne * density);
      interior = static_cast<int>(polygon_area(dom) / (h * h));
    }
    const PatchTessellation tess =
        tessellate_face(dom, density, interior, c.seed * 1000 + fi);

    // Local point -> global vertex.
    std::vector<int> global(tess.points.size());
    for (int j = 0; j < ne; ++j) {
      const int ca = dom.corner_ids[j], cb = dom.corner_ids[(j + 1) % ne];
      const int ai = layout.arc_index(ca, cb);
      if (ai < 0) throw std::runtime_error("face edge without arc");
      for (int i = 0; i < density; ++i) {
        const int local = j * density + i;
        if (i == 0) {
          global[local] = corner_index(ca);
        } else {
          const double t = canonical_arc_t(ca, cb, static_cast<double>(i) / density);
          global[local] = arc_index(ai, static_cast<int>(std::lround(t * density)));
        }
      }
    }
    const int n_interior = static_cast<int>(tess.points.size()) - tess.boundary_count;
    if (n_interior > 0) {
      Mat lam(n_interior, ne);
      for (int i = 0; i < n_interior; ++i) {
        const Vec w = mvc_weights(dom, tess.points[tess.boundary_count + i]);
        lam.row(i) = w.transpose();
      }
      Mat zf(ne, fc.D);
      for (int j = 0; j < ne; ++j)
        zf.row(j) = fc.Z.row(fc.vertex_row.at(dom.corner_ids[j]));
      const Mat pos = mlp_forward(c.mlp, lam * zf);
      for (int i = 0; i < n_interior; ++i) {
        global[tess.boundary_count + i] = static_cast<int>(mesh.vertices.size());
        mesh.vertices.emplace_back(pos.row(i).transpose());
      }
    }

    const bool flip_winding = c.sign_for_face(face.id) < 0.0;
    for (const auto& t : tess.triangles) {
      std::array<int, 3> tri{global[t[0]], global[t[1]], global[t[2]]};
      if (flip_winding) std::swap(tri[1], tri[2]);
      const Vec3 e1 = mesh.vertices[tri[1]] - mesh.vertices[tri[0]];
      const Vec3 e2 = mesh.vertices[tri[2]] - mesh.vertices[tri[0]];
      if (!e1.allFinite() || !e2.allFinite())
        throw std::runtime_error("non-finite vertex in tessellation");
      if (e1.cross(e2).norm() < 1e-16) ++mesh.degenerate_triangles;
      mesh.triangles.push_back(tri);
      mesh.tri_patch.push_back(face.id);
    }
  }

  if (edge_flip) flip_edges(mesh);
  return mesh;
}

SurfaceMesh mesh_surface(const Checkpoint& c, int density, int interior_count, bool edge_flip) {
  return mesh_surface(c, complex_from(c), density, interior_count, edge_flip);
}

namespace {

double min_angle(const Vec3& a, const Vec3& b, const Vec3& c) {
  auto corner = [](const Vec3& u, const Vec3& v) {
    const double d = u.norm() * v.norm();
    if (d < 1e-300) return 0.0;
    return std::acos(std::clamp(u.dot(v) / d, -1.0, 1.0));
  };
  return std::min({corner(b - a, c - a), corner(a - b, c - b), corner(a - c, b - c)});
}

double dihedral_dev(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  // Deviation from a flat join across edge (a, b) with opposite vertices c, d.
  const Vec3 n1 = (b - a).cross(c - a);
  const Vec3 n2 = (d - a).cross(b - a);
  const double den = n1.norm() * n2.norm();
  if (den < 1e-300) return 0.0;
  return std::acos(std::clamp(n1.dot(n2) / den, -1.0, 1.0));
}

// Curvature-based flipping: flip an intra-patch interior edge when the flip
// both raises the minimum triangle angle and lowers the dihedral deviation.
void flip_edges(SurfaceMesh& mesh) {
  std::map<std::pair<int, int>, std::vector<int>> edge_tris;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    for (int e = 0; e < 3; ++e) {
      const int u = mesh.triangles[t][e], v = mesh.triangles[t][(e + 1) % 3];
      edge_tris[std::minmax(u, v)].push_back(static_cast<int>(t));
    }
  auto third = [&](int t, int u, int v) {
    for (int k = 0; k < 3; ++k) {
      const int w = mesh.triangles[t][k];
      if (w != u && w != v) return w;
    }
    return -1;
  };
  for (const auto& [edge, tris] : edge_tris) {
    if (tris.size() != 2) continue;
    const int t0 = tris[0], t1 = tris[1];
    if (mesh.tri_patch[t0] != mesh.tri_patch[t1]) continue;
    const int u = edge.first, v = edge.second;
    const int p = third(t0, u, v), q = third(t1, u, v);
    if (p < 0 || q < 0 || p == q) continue;
    const Vec3 &U = mesh.vertices[u], &V = mesh.vertices[v], &P = mesh.vertices[p],
               &Q = mesh.vertices[q];
    const double before_angle = std::min(min_angle(U, V, P), min_angle(U, V, Q));
    const double after_angle = std::min(min_angle(P, Q, U), min_angle(P, Q, V));
    if (after_angle <= before_angle) continue;
    if (dihedral_dev(P, Q, U, V) >= dihedral_dev(U, V, P, Q)) continue;
    mesh.triangles[t0] = {u, q, p};
    mesh.triangles[t1] = {v, p, q};
  }
}

}  // namespace

void export_obj(const SurfaceMesh& mesh, const std::string& path, bool groups) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(17);
  for (const Vec3& v : mesh.vertices) os << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  if (!groups) {
    for (const auto& t : mesh.triangles)
      os << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  } else {
    std::map<int, std::vector<int>> by_patch;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
      by_patch[mesh.tri_patch[t]].push_back(static_cast<int>(t));
    for (const auto& [patch, tris] : by_patch) {
      os << "g patch_" << patch << "\n";
      for (int t : tris)
        os << "f " << mesh.triangles[t][0] + 1 << " " << mesh.triangles[t][1] + 1 << " "
           << mesh.triangles[t][2] + 1 << "\n";
    }
  }
  if (!os) throw std::runtime_error("write failure on " + path);
}

}  // namespace nps
