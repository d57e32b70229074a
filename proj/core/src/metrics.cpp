#include "nps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "nps/kdtree.hpp"
#include "nps/mesher.hpp"
#include "nps/rng.hpp"
#include "nps/sampling.hpp"

namespace nps {

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

double pair_angle_deg(const Vec3& a, const Vec3& b) {
  // Orientation-free: min(theta, 180 - theta).
  const double c = std::clamp(std::abs(a.dot(b)), 0.0, 1.0);
  return std::acos(c) * kRadToDeg;
}

struct SampledSurface {
  std::vector<Vec3> pts, nrm;
};

SampledSurface sample_surface(const Checkpoint& c, const FeatureComplex& fc, int n_samples,
                              Rng& rng) {
  const PatchLayout& layout = c.layout;
  // Face budget proportional to estimated surface area.
  std::vector<double> areas;
  for (const Face& f : layout.faces) {
    const auto& dom = fc.domain(f.id);
    const std::vector<Vec2> probe = sample_domain(dom, 128, rng);
    Mat pos, ju, jv;
    surface_batch(fc, c.mlp, f.id, probe, pos, ju, jv);
    double mean_jac = 0.0;
    for (int i = 0; i < pos.rows(); ++i)
      mean_jac += Vec3(ju.row(i)).cross(Vec3(jv.row(i))).norm();
    double dom_area = 0.0;
    for (int j = 1; j + 1 < dom.size(); ++j) {
      const Vec2 e1 = dom.vertices[j] - dom.vertices[0];
      const Vec2 e2 = dom.vertices[j + 1] - dom.vertices[0];
      dom_area += 0.5 * std::abs(e1.x() * e2.y() - e1.y() * e2.x());
    }
    areas.push_back(mean_jac / pos.rows() * dom_area);
  }
  const std::vector<int> counts = allocate_per_face(areas, n_samples);

  SampledSurface out;
  for (std::size_t fi = 0; fi < layout.faces.size(); ++fi) {
    const int face_id = layout.faces[fi].id;
    const std::vector<Vec2> us = sample_domain(fc.domain(face_id), counts[fi], rng);
    Mat pos, ju, jv;
    surface_batch(fc, c.mlp, face_id, us, pos, ju, jv);
    const double sign = c.sign_for_face(face_id);
    for (int i = 0; i < pos.rows(); ++i) {
      out.pts.emplace_back(pos.row(i).transpose());
      Vec3 n = Vec3(ju.row(i)).cross(Vec3(jv.row(i)));
      const double nn = n.norm();
      out.nrm.push_back(nn > 1e-12 ? Vec3(sign * n / nn) : Vec3::UnitZ());
    }
  }
  return out;
}

}  // namespace

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Ericson, Real-Time Collision Detection, closest point on triangle.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return (p - a).norm();

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return (p - b).norm();

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double t = d1 / (d1 - d3);
    return (p - (a + t * ab)).norm();
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return (p - c).norm();

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double t = d2 / (d2 - d6);
    return (p - (a + t * ac)).norm();
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + t * (c - b))).norm();
  }

  const double denom = va + vb + vc;
  if (denom <= 0.0) {
    // Degenerate triangle: fall back to the nearest edge.
    double best = (p - a).norm();
    for (const auto& [s, e] : {std::pair{a, b}, std::pair{b, c}, std::pair{a, c}}) {
      const Vec3 d = e - s;
      const double len2 = d.squaredNorm();
      const double t = len2 > 0.0 ? std::clamp((p - s).dot(d) / len2, 0.0, 1.0) : 0.0;
      best = std::min(best, (p - (s + t * d)).norm());
    }
    return best;
  }
  const double v = vb / denom, w = vc / denom;
  return (p - (a + v * ab + w * ac)).norm();
}

MeshBvh::MeshBvh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> triangles)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
  order_.resize(triangles_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  if (!triangles_.empty()) root_ = build(0, static_cast<int>(triangles_.size()));
}

int MeshBvh::build(int begin, int end) {
  Node node;
  node.lo = Vec3::Constant(std::numeric_limits<double>::max());
  node.hi = Vec3::Constant(std::numeric_limits<double>::lowest());
  for (int i = begin; i < end; ++i)
    for (int k = 0; k < 3; ++k) {
      const Vec3& v = vertices_[triangles_[order_[i]][k]];
      node.lo = node.lo.cwiseMin(v);
      node.hi = node.hi.cwiseMax(v);
    }
  const int idx = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= 8) {
    nodes_[idx].begin = begin;
    nodes_[idx].end = end;
    return idx;
  }
  int axis = 0;
  const Vec3 extent = node.hi - node.lo;
  if (extent.y() > extent.x()) axis = 1;
  if (extent.z() > extent[axis]) axis = 2;
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int ta, int tb) {
                     auto centroid = [&](int t) {
                       return (vertices_[triangles_[t][0]][axis] +
                               vertices_[triangles_[t][1]][axis] +
                               vertices_[triangles_[t][2]][axis]);
                     };
                     return centroid(ta) < centroid(tb);
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[idx].begin = nodes_[idx].end = 0;
  nodes_[idx].left = left;
  nodes_[idx].right = right;
  return idx;
}

namespace {

double aabb_distance(const Vec3& lo, const Vec3& hi, const Vec3& p) {
  const Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(Vec3::Zero());
  return d.norm();
}

}  // namespace

void MeshBvh::query(int node, const Vec3& p, double& best) const {
  const Node& n = nodes_[node];
  if (aabb_distance(n.lo, n.hi, p) >= best) return;
  if (n.left < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const auto& t = triangles_[order_[i]];
      best = std::min(best, point_triangle_distance(p, vertices_[t[0]], vertices_[t[1]],
                                                    vertices_[t[2]]));
    }
    return;
  }
  const double dl = aabb_distance(nodes_[n.left].lo, nodes_[n.left].hi, p);
  const double dr = aabb_distance(nodes_[n.right].lo, nodes_[n.right].hi, p);
  if (dl <= dr) {
    query(n.left, p, best);
    query(n.right, p, best);
  } else {
    query(n.right, p, best);
    query(n.left, p, best);
  }
}

double MeshBvh::distance(const Vec3& p) const {
  if (root_ < 0) throw std::runtime_error("distance query on empty mesh");
  double best = std::numeric_limits<double>::max();
  query(root_, p, best);
  return best;
}

MetricsReport compare_point_sets(const std::vector<Vec3>& a_pts, const std::vector<Vec3>& a_nrm,
                                 const std::vector<Vec3>& b_pts,
                                 const std::vector<Vec3>& b_nrm) {
  if (a_pts.empty() || b_pts.empty())
    throw std::runtime_error("compare_point_sets: empty point set");
  KdTree3 a_tree(a_pts), b_tree(b_pts);
  double dist_sum = 0.0, dist_max = 0.0, angle_sum = 0.0;
  for (std::size_t i = 0; i < a_pts.size(); ++i) {
    const int j = b_tree.nearest(a_pts[i]);
    const double d = (a_pts[i] - b_pts[j]).norm();
    dist_sum += d;
    dist_max = std::max(dist_max, d);
    angle_sum += pair_angle_deg(a_nrm[i], b_nrm[j]);
  }
  for (std::size_t i = 0; i < b_pts.size(); ++i) {
    const int j = a_tree.nearest(b_pts[i]);
    const double d = (b_pts[i] - a_pts[j]).norm();
    dist_sum += d;
    dist_max = std::max(dist_max, d);
    angle_sum += pair_angle_deg(b_nrm[i], a_nrm[j]);
  }
  const double total = static_cast<double>(a_pts.size() + b_pts.size());
  MetricsReport r;
  r.p2s = dist_sum / total;
  r.hd = dist_max;
  r.nae_degrees = angle_sum / total;
  r.surface_samples = static_cast<int>(a_pts.size());
  r.target_samples = static_cast<int>(b_pts.size());
  return r;
}

MetricsReport evaluate(const Checkpoint& c, const FeatureComplex& fc,
                       const LabeledSamples& target, int n_samples, std::uint64_t seed) {
  if (target.points.empty()) throw std::runtime_error("evaluate: empty target");
  Rng rng(seed);
  const SampledSurface surf = sample_surface(c, fc, n_samples, rng);

  std::vector<Vec3> tgt_pts, tgt_nrm;
  for (const Sample& s : target.points) {
    tgt_pts.push_back(s.position);
    tgt_nrm.push_back(s.normal);
  }
  KdTree3 tgt_tree(tgt_pts), srf_tree(surf.pts);

  // Dense tessellation of the reconstruction for honest point-to-surface
  // distances; nearest-sample distances saturate at the sampling density.
  const SurfaceMesh recon = mesh_surface(c, fc, 24);
  const MeshBvh recon_bvh(recon.vertices, recon.triangles);
  MeshBvh target_bvh;
  if (target.mesh && !target.mesh->triangles.empty())
    target_bvh = MeshBvh(target.mesh->vertices, target.mesh->triangles);

  double dist_sum = 0.0, dist_max = 0.0, angle_sum = 0.0;
  for (std::size_t i = 0; i < surf.pts.size(); ++i) {
    const int j = tgt_tree.nearest(surf.pts[i]);
    const double d = target_bvh.empty() ? (surf.pts[i] - tgt_pts[j]).norm()
                                        : target_bvh.distance(surf.pts[i]);
    dist_sum += d;
    dist_max = std::max(dist_max, d);
    angle_sum += pair_angle_deg(surf.nrm[i], tgt_nrm[j]);
  }
  for (std::size_t i = 0; i < tgt_pts.size(); ++i) {
    const int j = srf_tree.nearest(tgt_pts[i]);
    const double d = recon_bvh.distance(tgt_pts[i]);
    dist_sum += d;
    dist_max = std::max(dist_max, d);
    angle_sum += pair_angle_deg(tgt_nrm[i], surf.nrm[j]);
  }
  const double total_pairs = static_cast<double>(surf.pts.size() + tgt_pts.size());

  MetricsReport r;
  r.p2s = dist_sum / total_pairs;
  r.hd = dist_max;
  r.nae_degrees = angle_sum / total_pairs;
  r.surface_samples = static_cast<int>(surf.pts.size());
  r.target_samples = static_cast<int>(tgt_pts.size());
  return r;
}

MetricsReport evaluate(const Checkpoint& c, const LabeledSamples& target, int n_samples,
                       std::uint64_t seed) {
  return evaluate(c, complex_from(c), target, n_samples, seed);
}

MetricsReport continuity_report(const Checkpoint& c, const FeatureComplex& fc,
                                int samples_per_arc) {
  const PatchLayout& layout = c.layout;
  const double eps = c.config.boundary_eps;
  MetricsReport r;
  double smooth_sum = 0.0, sharp_sum = 0.0;
  int smooth_n = 0, sharp_n = 0;

  for (std::size_t ai = 0; ai < layout.arcs.size(); ++ai) {
    const Arc& arc = layout.arcs[ai];
    if (arc.faces.size() != 2) continue;
    for (int k = 1; k <= samples_per_arc; ++k) {
      const double t = static_cast<double>(k) / (samples_per_arc + 1);
      Vec3 pos[2], nrm[2];
      for (int side = 0; side < 2; ++side) {
        const int face_id = arc.faces[side];
        const auto& dom = fc.domain(face_id);
        int edge = -1;
        bool forward = true;
        for (int j = 0; j < dom.size(); ++j) {
          const int ca = dom.corner_ids[j], cb = dom.corner_ids[(j + 1) % dom.size()];
          if (ca == arc.a && cb == arc.b) { edge = j; forward = true; break; }
          if (ca == arc.b && cb == arc.a) { edge = j; forward = false; break; }
        }
        if (edge < 0) throw std::runtime_error("arc not found on adjacent face");
        const double s = forward ? t : 1.0 - t;
        // Position through the face's own boundary limit evaluation, so the
        // audit actually exercises the shared-edge identity.
        const Vec2 u = dom.edge_point(edge, s);
        const Vec lambda = mvc_weights(dom, u);
        Vec z = Vec::Zero(fc.D);
        for (int j = 0; j < dom.size(); ++j)
          z += lambda(j) * fc.Z.row(fc.vertex_row.at(dom.corner_ids[j])).transpose();
        pos[side] = mlp_forward_point(c.mlp, z);
        const Vec2 inset = u + eps * dom.inward_edge_normal(edge);
        nrm[side] = surface_normal(fc, c.mlp, face_id, inset) * c.sign_for_face(face_id);
      }
      r.max_positional_gap = std::max(r.max_positional_gap, (pos[0] - pos[1]).norm());
      const double dev =
          std::acos(std::clamp(nrm[0].dot(nrm[1]), -1.0, 1.0)) * kRadToDeg;
      if (c.arc_smooth[ai]) {
        smooth_sum += dev;
        smooth_n += 1;
        r.max_smooth_normal_dev_degrees = std::max(r.max_smooth_normal_dev_degrees, dev);
      } else {
        sharp_sum += dev;
        sharp_n += 1;
      }
    }
  }
  if (smooth_n > 0) r.mean_smooth_normal_dev_degrees = smooth_sum / smooth_n;
  if (sharp_n > 0) r.mean_sharp_normal_dev_degrees = sharp_sum / sharp_n;
  return r;
}

MetricsReport continuity_report(const Checkpoint& c, int samples_per_arc) {
  return continuity_report(c, complex_from(c), samples_per_arc);
}

std::string metrics_json(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(12);
  os << "{\"p2s\":" << r.p2s << ",\"hd\":" << r.hd << ",\"nae_degrees\":" << r.nae_degrees
     << ",\"surface_samples\":" << r.surface_samples
     << ",\"target_samples\":" << r.target_samples
     << ",\"max_positional_gap\":" << r.max_positional_gap
     << ",\"mean_smooth_normal_dev_degrees\":" << r.mean_smooth_normal_dev_degrees
     << ",\"max_smooth_normal_dev_degrees\":" << r.max_smooth_normal_dev_degrees
     << ",\"mean_sharp_normal_dev_degrees\":" << r.mean_sharp_normal_dev_degrees << "}";
  return os.str();
}

}  // namespace nps
