#include "nps/complex.hpp"

#include <cmath>
#include <stdexcept>

namespace nps {

namespace {

constexpr double kBoundaryTol = 1e-9;
constexpr double kTwoPi = 6.283185307179586476925286766559;

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Dual number carrying d/du and d/dv alongside the value.
struct Dual {
  double v = 0.0;
  Vec2 g = Vec2::Zero();
  Dual() = default;
  Dual(double v_) : v(v_) {}
  Dual(double v_, const Vec2& g_) : v(v_), g(g_) {}
};

Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.g + b.g}; }
Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.g - b.g}; }
Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.v * b.g + b.v * a.g}; }
Dual operator/(const Dual& a, const Dual& b) {
  return {a.v / b.v, (a.g * b.v - a.v * b.g) / (b.v * b.v)};
}
Dual sqrt(const Dual& a) {
  const double r = std::sqrt(a.v);
  return {r, a.g / (2.0 * r)};
}

// Floater's tan half-angle form: w_j = (tan(a_{j-1}/2) + tan(a_j/2)) / r_j
// with tan(a_j/2) = (r_j r_{j+1} - d_j . d_{j+1}) / cross(d_j, d_{j+1}).
template <class S>
void mvc_generic(const std::vector<Vec2>& verts, const S& u, const S& v, std::vector<S>& lambda) {
  using std::sqrt;
  const int n = static_cast<int>(verts.size());
  std::vector<S> dx(n), dy(n), r(n), tan_half(n);
  for (int j = 0; j < n; ++j) {
    dx[j] = S(verts[j].x()) - u;
    dy[j] = S(verts[j].y()) - v;
    r[j] = sqrt(dx[j] * dx[j] + dy[j] * dy[j]);
  }
  for (int j = 0; j < n; ++j) {
    const int k = (j + 1) % n;
    const S dot = dx[j] * dx[k] + dy[j] * dy[k];
    const S crs = dx[j] * dy[k] - dy[j] * dx[k];
    tan_half[j] = (r[j] * r[k] - dot) / crs;
  }
  lambda.resize(n);
  S total(0.0);
  for (int j = 0; j < n; ++j) {
    const int jm = (j + n - 1) % n;
    lambda[j] = (tan_half[jm] + tan_half[j]) / r[j];
    total = total + lambda[j];
  }
  for (int j = 0; j < n; ++j) lambda[j] = lambda[j] / total;
}

// Projection parameter of u onto segment [a, b] and the distance to it.
std::pair<double, double> project_to_edge(const Vec2& a, const Vec2& b, const Vec2& u) {
  const Vec2 e = b - a;
  const double t = std::clamp((u - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
  return {t, (u - (a + t * e)).norm()};
}

}  // namespace

Vec2 PolygonDomain::edge_point(int j, double t) const {
  const Vec2& a = vertices[j];
  const Vec2& b = vertices[(j + 1) % size()];
  return (1.0 - t) * a + t * b;
}

Vec2 PolygonDomain::inward_edge_normal(int j) const {
  const Vec2 e = (vertices[(j + 1) % size()] - vertices[j]).normalized();
  return Vec2(-e.y(), e.x());  // interior lies to the left of a CCW edge
}

bool PolygonDomain::contains(const Vec2& u, double tol) const {
  for (int j = 0; j < size(); ++j) {
    const Vec2& a = vertices[j];
    const Vec2& b = vertices[(j + 1) % size()];
    if (cross2(b - a, u - a) < -tol * (b - a).norm()) return false;
  }
  return true;
}

std::vector<PolygonDomain> build_domains(const PatchLayout& layout) {
  std::vector<PolygonDomain> domains;
  domains.reserve(layout.faces.size());
  for (const auto& f : layout.faces) {
    const auto lengths = layout.face_boundary_lengths(f);
    double total = 0.0;
    for (std::size_t j = 0; j < lengths.size(); ++j) {
      if (lengths[j] <= 0.0)
        throw std::runtime_error("face " + std::to_string(f.id) +
                                 ": zero-length boundary edge " + std::to_string(j));
      total += lengths[j];
    }
    PolygonDomain d;
    d.face_id = f.id;
    d.corner_ids = f.corners;
    double angle = 0.0;
    for (std::size_t j = 0; j < f.corners.size(); ++j) {
      d.vertices.emplace_back(std::cos(angle), std::sin(angle));
      angle += kTwoPi * lengths[j] / total;
    }
    domains.push_back(std::move(d));
  }
  return domains;
}

Vec mvc_weights(const PolygonDomain& domain, const Vec2& u) {
  const int n = domain.size();
  // Vertex limit.
  for (int j = 0; j < n; ++j) {
    if ((u - domain.vertices[j]).norm() < kBoundaryTol) {
      Vec lambda = Vec::Zero(n);
      lambda(j) = 1.0;
      return lambda;
    }
  }
  // Edge limit: the tan formula is singular there, the analytic limit is the
  // linear interpolation of the two endpoints.
  for (int j = 0; j < n; ++j) {
    const auto [t, dist] =
        project_to_edge(domain.vertices[j], domain.vertices[(j + 1) % n], u);
    if (dist < kBoundaryTol) {
      Vec lambda = Vec::Zero(n);
      lambda(j) = 1.0 - t;
      lambda((j + 1) % n) = t;
      return lambda;
    }
  }
  if (!domain.contains(u, kBoundaryTol))
    throw std::runtime_error("parameter outside polygon domain of face " +
                             std::to_string(domain.face_id));
  std::vector<double> lam;
  mvc_generic<double>(domain.vertices, u.x(), u.y(), lam);
  return Eigen::Map<Vec>(lam.data(), n);
}

void mvc_weights_and_grad(const PolygonDomain& domain, const Vec2& u, Vec& lambda,
                          Mat& dlambda_du) {
  const int n = domain.size();
  std::vector<Dual> lam;
  mvc_generic<Dual>(domain.vertices, Dual(u.x(), Vec2(1, 0)), Dual(u.y(), Vec2(0, 1)), lam);
  lambda.resize(n);
  dlambda_du.resize(n, 2);
  for (int j = 0; j < n; ++j) {
    lambda(j) = lam[j].v;
    dlambda_du.row(j) = lam[j].g.transpose();
  }
}

std::vector<int> FeatureComplex::face_rows(int face_id) const {
  const auto& d = domain(face_id);
  std::vector<int> rows;
  rows.reserve(d.corner_ids.size());
  for (int c : d.corner_ids) rows.push_back(vertex_row.at(c));
  return rows;
}

FeatureComplex make_complex(const PatchLayout& layout, int feature_dim, Rng& rng) {
  if (feature_dim < 2) throw std::runtime_error("feature dimension must be >= 2");
  FeatureComplex c;
  c.D = feature_dim;
  c.domains = build_domains(layout);
  for (std::size_t i = 0; i < c.domains.size(); ++i)
    c.domain_index[c.domains[i].face_id] = static_cast<int>(i);
  const int k = static_cast<int>(layout.corners.size());
  for (int i = 0; i < k; ++i) c.vertex_row[layout.corners[i].id] = i;
  c.Z.resize(k, feature_dim);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < feature_dim; ++j) c.Z(i, j) = 0.01 * rng.normal();
  return c;
}

Vec interpolate_feature(const FeatureComplex& complex, int face_id, const Vec2& u) {
  const auto& d = complex.domain(face_id);
  const Vec lambda = mvc_weights(d, u);
  Vec z = Vec::Zero(complex.D);
  for (int j = 0; j < d.size(); ++j)
    z += lambda(j) * complex.Z.row(complex.vertex_row.at(d.corner_ids[j])).transpose();
  return z;
}

Vec edge_feature(const FeatureComplex& complex, std::pair<int, int> arc, double t) {
  const Vec za = complex.Z.row(complex.vertex_row.at(arc.first)).transpose();
  const Vec zb = complex.Z.row(complex.vertex_row.at(arc.second)).transpose();
  return (1.0 - t) * za + t * zb;
}

double canonical_arc_t(int corner_a, int corner_b, double t_along_edge) {
  return corner_a < corner_b ? t_along_edge : 1.0 - t_along_edge;
}

}  // namespace nps
