#include "nps/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace nps {

namespace {

constexpr double kInteriorMargin = 1e-6;
constexpr double kSharpThreshold = 0.78539816339744830961;  // pi/4

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

}  // namespace

std::vector<Vec2> sample_domain(const PolygonDomain& domain, int count, Rng& rng) {
  const int n = domain.size();
  std::vector<double> cum(n - 2);
  double total = 0.0;
  for (int j = 1; j + 1 < n; ++j) {
    const Vec2 e1 = domain.vertices[j] - domain.vertices[0];
    const Vec2 e2 = domain.vertices[j + 1] - domain.vertices[0];
    total += 0.5 * std::abs(e1.x() * e2.y() - e1.y() * e2.x());
    cum[j - 1] = total;
  }
  std::vector<Vec2> out;
  out.reserve(count);
  while (static_cast<int>(out.size()) < count) {
    const double r = rng.uniform(0.0, total);
    const int tri =
        static_cast<int>(std::lower_bound(cum.begin(), cum.end(), r) - cum.begin());
    double a = rng.uniform(), b = rng.uniform();
    if (a + b > 1.0) {
      a = 1.0 - a;
      b = 1.0 - b;
    }
    const Vec2 u = domain.vertices[0] + a * (domain.vertices[tri + 1] - domain.vertices[0]) +
                   b * (domain.vertices[tri + 2] - domain.vertices[0]);
    if (edge_distance(domain, u) < kInteriorMargin) continue;
    out.push_back(u);
  }
  return out;
}

std::vector<int> allocate_per_face(const std::vector<double>& areas, int total) {
  const int n = static_cast<int>(areas.size());
  if (total < n) throw std::runtime_error("total samples below face count");
  double sum = 0.0;
  for (double a : areas) sum += a;
  std::vector<int> counts(n, 1);
  int remaining = total - n;
  std::vector<std::pair<double, int>> remainders(n);
  double ideal_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double ideal = remaining * (sum > 0.0 ? areas[i] / sum : 1.0 / n);
    counts[i] += static_cast<int>(std::floor(ideal));
    ideal_sum += std::floor(ideal);
    remainders[i] = {ideal - std::floor(ideal), i};
  }
  int leftover = remaining - static_cast<int>(ideal_sum);
  // Largest remainder first; ties go to the lower face index.
  std::sort(remainders.begin(), remainders.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  for (int k = 0; k < leftover; ++k) counts[remainders[k].second] += 1;
  return counts;
}

namespace {

void pair_one_side(const std::vector<Vec3>& from, const std::vector<int>& from_idx,
                   const KdTree3& to_tree, const std::vector<int>& to_idx, int face_id,
                   PairDirection dir, bool from_is_surface, PairedSamples& out) {
  for (int i : from_idx) {
    const int nn = to_tree.nearest(from[i]);
    const int j = to_idx[nn];
    if (from_is_surface)
      out.pairs.push_back({i, j, face_id, dir});
    else
      out.pairs.push_back({j, i, face_id, dir});
  }
}

}  // namespace

PairedSamples pair_closest(const std::vector<Vec3>& surface_pts,
                           const std::vector<int>& surface_face,
                           const std::vector<Vec3>& target_pts,
                           const std::vector<int>& target_face) {
  if (surface_pts.empty() || target_pts.empty())
    throw std::runtime_error("pair_closest: empty point set");
  std::map<int, std::vector<int>> surf_buckets, tgt_buckets;
  for (std::size_t i = 0; i < surface_pts.size(); ++i)
    surf_buckets[surface_face[i]].push_back(static_cast<int>(i));
  for (std::size_t i = 0; i < target_pts.size(); ++i)
    tgt_buckets[target_face[i]].push_back(static_cast<int>(i));

  PairedSamples out;
  for (const auto& [face, sidx] : surf_buckets) {
    const auto it = tgt_buckets.find(face);
    if (it == tgt_buckets.end() || it->second.empty())
      throw std::runtime_error("pair_closest: empty target bucket for patch " +
                               std::to_string(face));
    const auto& tidx = it->second;
    std::vector<Vec3> tgt, srf;
    for (int i : tidx) tgt.push_back(target_pts[i]);
    for (int i : sidx) srf.push_back(surface_pts[i]);
    KdTree3 tgt_tree(tgt), srf_tree(srf);
    // surface -> target
    for (int i : sidx) {
      const int nn = tgt_tree.nearest(surface_pts[i]);
      out.pairs.push_back({i, tidx[nn], face, PairDirection::SurfaceToTarget});
    }
    // target -> surface
    for (int i : tidx) {
      const int nn = srf_tree.nearest(target_pts[i]);
      out.pairs.push_back({sidx[nn], i, face, PairDirection::TargetToSurface});
    }
  }
  return out;
}

PairedSamples pair_closest_global(const std::vector<Vec3>& surface_pts,
                                  const std::vector<Vec3>& target_pts) {
  if (surface_pts.empty() || target_pts.empty())
    throw std::runtime_error("pair_closest: empty point set");
  KdTree3 tgt_tree(target_pts), srf_tree(surface_pts);
  PairedSamples out;
  for (std::size_t i = 0; i < surface_pts.size(); ++i)
    out.pairs.push_back({static_cast<int>(i), tgt_tree.nearest(surface_pts[i]), -1,
                         PairDirection::SurfaceToTarget});
  for (std::size_t i = 0; i < target_pts.size(); ++i)
    out.pairs.push_back({srf_tree.nearest(target_pts[i]), static_cast<int>(i), -1,
                         PairDirection::TargetToSurface});
  return out;
}

std::vector<bool> classify_arcs(const PatchLayout& layout, const LabeledSamples& samples) {
  std::vector<bool> smooth(layout.arcs.size(), true);

  if (samples.mesh && !samples.mesh->tri_patch.empty()) {
    const auto& mesh = *samples.mesh;
    // Face-pair -> arc lookup.
    std::map<std::pair<int, int>, int> pair_to_arc;
    for (std::size_t ai = 0; ai < layout.arcs.size(); ++ai) {
      const auto& faces = layout.arcs[ai].faces;
      if (faces.size() == 2)
        pair_to_arc[{std::min(faces[0], faces[1]), std::max(faces[0], faces[1])}] =
            static_cast<int>(ai);
    }
    // Mesh edges shared by triangles of two different patches.
    std::map<std::pair<int, int>, std::vector<int>> edge_tris;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
      const auto& tri = mesh.triangles[t];
      for (int e = 0; e < 3; ++e) {
        const int a = tri[e], b = tri[(e + 1) % 3];
        edge_tris[{std::min(a, b), std::max(a, b)}].push_back(static_cast<int>(t));
      }
    }
    std::map<int, std::pair<double, int>> deviation;  // arc -> (sum, count)
    for (const auto& [edge, tris] : edge_tris) {
      if (tris.size() != 2) continue;
      const int pa = mesh.tri_patch[tris[0]], pb = mesh.tri_patch[tris[1]];
      if (pa == pb) continue;
      const auto it = pair_to_arc.find({std::min(pa, pb), std::max(pa, pb)});
      if (it == pair_to_arc.end()) continue;
      Vec3 n[2];
      for (int k = 0; k < 2; ++k) {
        const auto& tri = mesh.triangles[tris[k]];
        n[k] = (mesh.vertices[tri[1]] - mesh.vertices[tri[0]])
                   .cross(mesh.vertices[tri[2]] - mesh.vertices[tri[0]])
                   .normalized();
      }
      const double dev = std::acos(std::clamp(std::abs(n[0].dot(n[1])), -1.0, 1.0));
      auto& acc = deviation[it->second];
      acc.first += dev;
      acc.second += 1;
    }
    for (const auto& [arc, acc] : deviation)
      smooth[arc] = acc.first / acc.second <= kSharpThreshold;
  }

  for (std::size_t ai = 0; ai < layout.arcs.size(); ++ai)
    if (layout.arcs[ai].smooth_override) smooth[ai] = *layout.arcs[ai].smooth_override;
  return smooth;
}

BoundaryPairs boundary_pairs(const PatchLayout& layout, const FeatureComplex& complex,
                             const std::vector<bool>& smooth, int m_per_edge, double eps) {
  BoundaryPairs out;
  out.eps = eps;
  for (std::size_t ai = 0; ai < layout.arcs.size(); ++ai) {
    const Arc& arc = layout.arcs[ai];
    if (arc.faces.size() != 2) continue;  // open-surface boundary, excluded

    BoundaryPairs::ArcSamples entry;
    entry.arc_index = static_cast<int>(ai);
    entry.smooth = smooth[ai];
    entry.face_a = arc.faces[0];
    entry.face_b = arc.faces[1];
    for (int k = 0; k < m_per_edge; ++k)
      entry.ts.push_back(static_cast<double>(k + 1) / (m_per_edge + 1));

    for (int side = 0; side < 2; ++side) {
      const int face_id = side == 0 ? entry.face_a : entry.face_b;
      const auto& dom = complex.domain(face_id);
      int edge = -1;
      bool forward = true;  // edge runs from arc.a to arc.b
      for (int j = 0; j < dom.size(); ++j) {
        const int ca = dom.corner_ids[j], cb = dom.corner_ids[(j + 1) % dom.size()];
        if (ca == arc.a && cb == arc.b) {
          edge = j;
          forward = true;
          break;
        }
        if (ca == arc.b && cb == arc.a) {
          edge = j;
          forward = false;
          break;
        }
      }
      if (edge < 0)
        throw std::runtime_error("arc not found on face " + std::to_string(face_id));
      const Vec2 inward = dom.inward_edge_normal(edge);
      auto& dst = side == 0 ? entry.inset_a : entry.inset_b;
      for (double t : entry.ts) {
        const double s = forward ? t : 1.0 - t;
        dst.push_back(dom.edge_point(edge, s) + eps * inward);
      }
    }
    out.arcs.push_back(std::move(entry));
  }
  return out;
}

}  // namespace nps
