#include "nps/layout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nps/rng.hpp"

namespace nps {

namespace {

using json = nlohmann::json;

std::pair<int, int> arc_key(int a, int b) { return {std::min(a, b), std::max(a, b)}; }

double polyline_length(const std::vector<Vec3>& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += (pts[i] - pts[i - 1]).norm();
  return len;
}

}  // namespace

int PatchLayout::arc_index(int a, int b) const {
  const auto [lo, hi] = arc_key(a, b);
  for (std::size_t i = 0; i < arcs.size(); ++i)
    if (arcs[i].a == lo && arcs[i].b == hi) return static_cast<int>(i);
  return -1;
}

std::vector<double> PatchLayout::face_boundary_lengths(const Face& f) const {
  std::vector<double> lengths;
  lengths.reserve(f.corners.size());
  const std::size_t n = f.corners.size();
  for (std::size_t j = 0; j < n; ++j) {
    const int a = f.corners[j];
    const int b = f.corners[(j + 1) % n];
    const int ai = arc_index(a, b);
    if (ai >= 0 && arcs[ai].length > 0.0) {
      lengths.push_back(arcs[ai].length);
    } else {
      lengths.push_back((corner(a).position - corner(b).position).norm());
    }
  }
  return lengths;
}

void PatchLayout::rebuild_derived() {
  corner_index.clear();
  for (std::size_t i = 0; i < corners.size(); ++i)
    corner_index[corners[i].id] = static_cast<int>(i);
  face_index.clear();
  for (std::size_t i = 0; i < faces.size(); ++i)
    face_index[faces[i].id] = static_cast<int>(i);

  // Keep user-supplied arc geometry/overrides, rebuild adjacency.
  std::map<std::pair<int, int>, Arc> kept;
  for (auto& arc : arcs) kept[arc_key(arc.a, arc.b)] = arc;

  std::map<std::pair<int, int>, Arc> derived;
  for (const auto& f : faces) {
    const std::size_t n = f.corners.size();
    for (std::size_t j = 0; j < n; ++j) {
      const int a = f.corners[j];
      const int b = f.corners[(j + 1) % n];
      if (a == b) continue;  // self-loop, reported by validate_layout
      const auto key = arc_key(a, b);
      auto it = derived.find(key);
      if (it == derived.end()) {
        Arc arc;
        if (auto k = kept.find(key); k != kept.end()) arc = k->second;
        arc.a = key.first;
        arc.b = key.second;
        arc.faces = {f.id};
        derived[key] = std::move(arc);
      } else {
        it->second.faces.push_back(f.id);
      }
    }
  }
  arcs.clear();
  for (auto& [key, arc] : derived) {
    if (!arc.polyline.empty()) {
      arc.length = polyline_length(arc.polyline);
    } else if (corner_index.count(arc.a) && corner_index.count(arc.b)) {
      arc.length = (corner(arc.a).position - corner(arc.b).position).norm();
    }
    arcs.push_back(std::move(arc));
  }
}

PatchLayout load_layout(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open layout file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("layout parse failure: " + std::string(e.what()));
  }

  PatchLayout layout;
  if (!j.contains("corners") || !j.contains("faces"))
    throw std::runtime_error("layout parse failure: missing corners/faces");
  for (const auto& c : j["corners"]) {
    Corner corner;
    corner.id = c.at("id").get<int>();
    const auto& p = c.at("position");
    corner.position = Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
    layout.corners.push_back(corner);
  }
  for (const auto& f : j["faces"]) {
    Face face;
    face.id = f.at("id").get<int>();
    for (const auto& c : f.at("corners")) face.corners.push_back(c.get<int>());
    layout.faces.push_back(face);
  }
  if (j.contains("arcs")) {
    for (const auto& a : j["arcs"]) {
      Arc arc;
      arc.a = a.at("from").get<int>();
      arc.b = a.at("to").get<int>();
      if (arc.a > arc.b) std::swap(arc.a, arc.b);
      if (a.contains("polyline")) {
        for (const auto& p : a["polyline"])
          arc.polyline.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(),
                                    p.at(2).get<double>());
      }
      if (a.contains("smooth")) arc.smooth_override = a["smooth"].get<bool>();
      layout.arcs.push_back(std::move(arc));
    }
  }

  // Referential integrity is a hard error, not a validation entry.
  std::unordered_map<int, int> ids;
  for (std::size_t i = 0; i < layout.corners.size(); ++i) ids[layout.corners[i].id] = 1;
  for (const auto& f : layout.faces)
    for (int c : f.corners)
      if (!ids.count(c))
        throw std::runtime_error("unknown corner " + std::to_string(c) + " in face " +
                                 std::to_string(f.id));
  for (const auto& a : layout.arcs)
    if (!ids.count(a.a) || !ids.count(a.b))
      throw std::runtime_error("unknown corner in arc (" + std::to_string(a.a) + "," +
                               std::to_string(a.b) + ")");

  layout.rebuild_derived();
  return layout;
}

void write_layout(const PatchLayout& layout, const std::string& path) {
  json j;
  j["corners"] = json::array();
  for (const auto& c : layout.corners)
    j["corners"].push_back(
        {{"id", c.id}, {"position", {c.position.x(), c.position.y(), c.position.z()}}});
  j["faces"] = json::array();
  for (const auto& f : layout.faces) j["faces"].push_back({{"id", f.id}, {"corners", f.corners}});
  j["arcs"] = json::array();
  for (const auto& a : layout.arcs) {
    json arc = {{"from", a.a}, {"to", a.b}};
    if (!a.polyline.empty()) {
      json pl = json::array();
      for (const auto& p : a.polyline) pl.push_back({p.x(), p.y(), p.z()});
      arc["polyline"] = pl;
    }
    if (a.smooth_override) arc["smooth"] = *a.smooth_override;
    j["arcs"].push_back(arc);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write layout file: " + path);
  out << j.dump(2) << "\n";
}

ValidationReport validate_layout(const PatchLayout& layout) {
  ValidationReport report;
  auto note = [&report](std::string s) { report.violations.push_back(std::move(s)); };

  for (const auto& f : layout.faces) {
    const std::size_t n = f.corners.size();
    std::vector<int> sorted = f.corners;
    std::sort(sorted.begin(), sorted.end());
    const bool dup = std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
    if (dup)
      note("face " + std::to_string(f.id) + ": duplicate corner in cycle");
    if (n < 3 || (std::unique(sorted.begin(), sorted.end()) - sorted.begin()) < 3)
      note("face " + std::to_string(f.id) + ": fewer than 3 distinct corners");
    for (std::size_t j = 0; j < n; ++j)
      if (f.corners[j] == f.corners[(j + 1) % n])
        note("face " + std::to_string(f.id) + ": self-loop at corner " +
             std::to_string(f.corners[j]));
  }
  for (const auto& a : layout.arcs) {
    if (a.a == a.b) note("arc (" + std::to_string(a.a) + "," + std::to_string(a.b) + "): self-loop");
    if (a.faces.size() > 2)
      note("arc (" + std::to_string(a.a) + "," + std::to_string(a.b) + "): shared by " +
           std::to_string(a.faces.size()) + " faces");
  }
  return report;
}

namespace {

void orient_faces(PatchLayout& layout, const LabeledSamples& samples) {
  for (auto& f : layout.faces) {
    auto it = samples.buckets.find(f.id);
    if (it == samples.buckets.end() || it->second.empty()) continue;
    Vec3 mean_normal = Vec3::Zero();
    for (int idx : it->second) mean_normal += samples.points[idx].normal;

    // Newell normal of the corner cycle.
    Vec3 newell = Vec3::Zero();
    const std::size_t n = f.corners.size();
    for (std::size_t j = 0; j < n; ++j) {
      const Vec3& p = layout.corner(f.corners[j]).position;
      const Vec3& q = layout.corner(f.corners[(j + 1) % n]).position;
      newell += p.cross(q);
    }
    if (newell.dot(mean_normal) < 0.0)
      std::reverse(f.corners.begin(), f.corners.end());
  }
}

}  // namespace

LabeledSamples make_samples(std::vector<Sample> points, PatchLayout& layout,
                            std::optional<MeshInput> mesh) {
  LabeledSamples out;
  out.points = std::move(points);
  out.mesh = std::move(mesh);
  if (out.points.empty()) throw std::runtime_error("empty sample set");

  for (std::size_t i = 0; i < out.points.size(); ++i) {
    auto& s = out.points[i];
    const double nn = s.normal.norm();
    if (nn < 1e-12)
      throw std::runtime_error("degenerate normal at sample " + std::to_string(i));
    s.normal /= nn;
    if (!layout.face_index.count(s.patch_id))
      throw std::runtime_error("sample references unknown patch_id " +
                               std::to_string(s.patch_id));
    out.buckets[s.patch_id].push_back(static_cast<int>(i));
  }
  for (const auto& f : layout.faces)
    if (!out.buckets.count(f.id))
      throw std::runtime_error("face " + std::to_string(f.id) + " has zero samples");

  // Normalize: centroid to the origin, maximal axis extent to 2.
  Vec3 centroid = Vec3::Zero();
  for (const auto& s : out.points) centroid += s.position;
  centroid /= static_cast<double>(out.points.size());
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
  Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
  for (const auto& s : out.points) {
    lo = lo.cwiseMin(s.position - centroid);
    hi = hi.cwiseMax(s.position - centroid);
  }
  const double extent = (hi - lo).maxCoeff();
  const double scale = extent > 1e-12 ? 2.0 / extent : 1.0;
  out.transform.shift = -centroid;
  out.transform.scale = scale;

  for (auto& s : out.points) s.position = out.transform.apply(s.position);
  if (out.mesh)
    for (auto& v : out.mesh->vertices) v = out.transform.apply(v);
  for (auto& c : layout.corners) c.position = out.transform.apply(c.position);
  for (auto& a : layout.arcs)
    for (auto& p : a.polyline) p = out.transform.apply(p);
  layout.rebuild_derived();

  orient_faces(layout, out);
  return out;
}

LabeledSamples load_samples(const std::string& path, PatchLayout& layout) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open samples file: " + path);
  std::vector<Sample> points;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Sample s;
    if (!(ss >> s.position.x() >> s.position.y() >> s.position.z() >> s.normal.x() >>
          s.normal.y() >> s.normal.z() >> s.patch_id))
      throw std::runtime_error("samples parse failure at line " + std::to_string(lineno));
    points.push_back(s);
  }
  return make_samples(std::move(points), layout);
}

LabeledSamples load_mesh_samples(const std::string& obj_path, const std::string& sidecar_path,
                                 PatchLayout& layout, int count, std::uint64_t seed) {
  std::ifstream in(obj_path);
  if (!in) throw std::runtime_error("cannot open OBJ file: " + obj_path);
  MeshInput mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 v;
      ss >> v.x() >> v.y() >> v.z();
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) idx.push_back(std::stoi(tok.substr(0, tok.find('/'))) - 1);
      for (std::size_t k = 2; k < idx.size(); ++k)
        mesh.triangles.push_back({idx[0], idx[k - 1], idx[k]});
    }
  }
  std::ifstream side(sidecar_path);
  if (!side) throw std::runtime_error("cannot open sidecar file: " + sidecar_path);
  // One patch id per OBJ face line; fan-triangulated faces repeat their id.
  std::vector<int> per_face_ids;
  int pid;
  while (side >> pid) per_face_ids.push_back(pid);
  std::ifstream in2(obj_path);
  std::size_t face_line = 0;
  while (std::getline(in2, line)) {
    if (line.rfind("f ", 0) != 0) continue;
    std::istringstream ss(line);
    std::string tag, tok;
    ss >> tag;
    int nv = 0;
    while (ss >> tok) ++nv;
    if (face_line >= per_face_ids.size())
      throw std::runtime_error("sidecar has fewer entries than OBJ faces");
    for (int k = 2; k < nv; ++k) mesh.tri_patch.push_back(per_face_ids[face_line]);
    ++face_line;
  }

  // Area-uniform sampling with flat per-triangle normals.
  std::vector<double> cum;
  cum.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3 e1 = mesh.vertices[t[1]] - mesh.vertices[t[0]];
    const Vec3 e2 = mesh.vertices[t[2]] - mesh.vertices[t[0]];
    total += 0.5 * e1.cross(e2).norm();
    cum.push_back(total);
  }
  if (total <= 0.0) throw std::runtime_error("mesh has zero area");
  Rng rng(seed);
  std::vector<Sample> points;
  points.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double r = rng.uniform(0.0, total);
    const auto it = std::lower_bound(cum.begin(), cum.end(), r);
    const std::size_t ti = std::min<std::size_t>(it - cum.begin(), mesh.triangles.size() - 1);
    const auto& t = mesh.triangles[ti];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    Sample s;
    s.position = mesh.vertices[t[0]] + u * (mesh.vertices[t[1]] - mesh.vertices[t[0]]) +
                 v * (mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    const Vec3 e1 = mesh.vertices[t[1]] - mesh.vertices[t[0]];
    const Vec3 e2 = mesh.vertices[t[2]] - mesh.vertices[t[0]];
    s.normal = e1.cross(e2).normalized();
    s.patch_id = mesh.tri_patch[ti];
    points.push_back(s);
  }
  return make_samples(std::move(points), layout, std::move(mesh));
}

std::vector<double> LabeledSamples::face_areas(const PatchLayout& layout) const {
  std::vector<double> areas(layout.faces.size(), 0.0);
  if (mesh && !mesh->tri_patch.empty()) {
    for (std::size_t t = 0; t < mesh->triangles.size(); ++t) {
      const auto& tri = mesh->triangles[t];
      const Vec3 e1 = mesh->vertices[tri[1]] - mesh->vertices[tri[0]];
      const Vec3 e2 = mesh->vertices[tri[2]] - mesh->vertices[tri[0]];
      const auto it = layout.face_index.find(mesh->tri_patch[t]);
      if (it != layout.face_index.end()) areas[it->second] += 0.5 * e1.cross(e2).norm();
    }
  } else {
    // Uniformly sampled input: counts are proportional to areas.
    for (std::size_t i = 0; i < layout.faces.size(); ++i) {
      const auto it = buckets.find(layout.faces[i].id);
      areas[i] = it == buckets.end() ? 0.0 : static_cast<double>(it->second.size());
    }
  }
  return areas;
}

}  // namespace nps
