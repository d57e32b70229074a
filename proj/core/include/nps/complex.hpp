#pragma once

#include <unordered_map>
#include <vector>

#include "nps/geom.hpp"
#include "nps/layout.hpp"
#include "nps/rng.hpp"

namespace nps {

// Convex n-gon inscribed in the unit circle; vertex j corresponds to layout
// corner corner_ids[j]. First vertex sits at angle 0, order is
// counter-clockwise, and circular-arc fractions match the face's target
// boundary-length fractions.
struct PolygonDomain {
  int face_id = -1;
  std::vector<Vec2> vertices;
  std::vector<int> corner_ids;

  int size() const { return static_cast<int>(vertices.size()); }
  Vec2 edge_point(int j, double t) const;
  // Unit normal of edge j pointing into the polygon.
  Vec2 inward_edge_normal(int j) const;
  // Signed distance conventions: inside iff every edge cross product is
  // >= -tol.
  bool contains(const Vec2& u, double tol = 1e-9) const;
};

std::vector<PolygonDomain> build_domains(const PatchLayout& layout);

// Mean value coordinates of u w.r.t. the domain polygon. Points within 1e-9
// of a vertex return the indicator, points within 1e-9 of an edge return the
// linear edge interpolation (the analytic limit of the tan formula), points
// outside beyond 1e-9 throw.
Vec mvc_weights(const PolygonDomain& domain, const Vec2& u);

// Weights plus their Jacobian d(lambda)/d(u,v), evaluated with dual numbers.
// Strictly interior points only.
void mvc_weights_and_grad(const PolygonDomain& domain, const Vec2& u, Vec& lambda,
                          Mat& dlambda_du);

struct FeatureComplex {
  Mat Z;  // K x D learnable vertex features
  int D = 0;
  std::vector<PolygonDomain> domains;          // one per layout face, layout order
  std::unordered_map<int, int> vertex_row;     // corner id -> row of Z
  std::unordered_map<int, int> domain_index;   // face id -> index into domains

  const PolygonDomain& domain(int face_id) const { return domains[domain_index.at(face_id)]; }
  std::vector<int> face_rows(int face_id) const;
};

// Builds domains and initializes Z with N(0, 0.01^2) entries.
FeatureComplex make_complex(const PatchLayout& layout, int feature_dim, Rng& rng);

Vec interpolate_feature(const FeatureComplex& complex, int face_id, const Vec2& u);

// Linear feature along the shared arc (a, b): (1-t) z_a + t z_b.
Vec edge_feature(const FeatureComplex& complex, std::pair<int, int> arc, double t);

// Face edge j runs corner a -> b; the canonical arc parameter is measured
// from the arc's smaller corner id so both adjacent faces agree.
double canonical_arc_t(int corner_a, int corner_b, double t_along_edge);

}  // namespace nps
