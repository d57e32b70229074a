#include <cmath>

#include "doctest.h"
#include "nps/complex.hpp"
#include "nps/rng.hpp"
#include "testutil.hpp"

namespace {

nps::PolygonDomain regular_ngon(int n) {
  nps::PolygonDomain d;
  d.face_id = 0;
  for (int j = 0; j < n; ++j) {
    const double a = 2.0 * M_PI * j / n;
    d.vertices.emplace_back(std::cos(a), std::sin(a));
    d.corner_ids.push_back(j);
  }
  return d;
}

// Independent oracle: direct tan-half-angle evaluation via atan2, written
// without sharing any code with the library implementation.
nps::Vec mvc_oracle(const nps::PolygonDomain& d, const nps::Vec2& u) {
  const int n = d.size();
  nps::Vec w(n);
  auto angle_at = [&](int j) {
    const nps::Vec2 a = d.vertices[j] - u;
    const nps::Vec2 b = d.vertices[(j + 1) % n] - u;
    return std::atan2(a.x() * b.y() - a.y() * b.x(), a.dot(b));
  };
  for (int j = 0; j < n; ++j) {
    const double prev = angle_at((j + n - 1) % n);
    const double cur = angle_at(j);
    w(j) = (std::tan(prev / 2.0) + std::tan(cur / 2.0)) / (d.vertices[j] - u).norm();
  }
  return w / w.sum();
}

nps::Vec2 random_interior(const nps::PolygonDomain& d, nps::Rng& rng) {
  while (true) {
    const nps::Vec2 u(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    if (!d.contains(u, 0.0)) continue;
    bool near_edge = false;
    for (int j = 0; j < d.size() && !near_edge; ++j) {
      const nps::Vec2 a = d.vertices[j], b = d.vertices[(j + 1) % d.size()];
      const nps::Vec2 e = b - a;
      const double t = std::clamp((u - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
      near_edge = (u - (a + t * e)).norm() < 1e-4;
    }
    if (!near_edge) return u;
  }
}

}  // namespace

TEST_CASE("mvc property suite across polygon sizes") {
  nps::Rng rng(31);
  for (int n : {3, 4, 5, 6, 9}) {
    const nps::PolygonDomain d = regular_ngon(n);
    for (int trial = 0; trial < 2000; ++trial) {
      const nps::Vec2 u = random_interior(d, rng);
      const nps::Vec lambda = nps::mvc_weights(d, u);
      CHECK(std::abs(lambda.sum() - 1.0) < 1e-12);
      nps::Vec2 recon = nps::Vec2::Zero();
      for (int j = 0; j < n; ++j) {
        CHECK(lambda(j) >= -1e-12);
        recon += lambda(j) * d.vertices[j];
      }
      CHECK((recon - u).norm() < 1e-10);
    }
  }
}

TEST_CASE("mvc matches the independent oracle") {
  nps::Rng rng(37);
  for (int n : {3, 4, 5, 7}) {
    const nps::PolygonDomain d = regular_ngon(n);
    for (int trial = 0; trial < 200; ++trial) {
      const nps::Vec2 u = random_interior(d, rng);
      const nps::Vec lambda = nps::mvc_weights(d, u);
      const nps::Vec oracle = mvc_oracle(d, u);
      CHECK((lambda - oracle).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("square center weights are a quarter each") {
  const nps::PolygonDomain d = regular_ngon(4);
  const nps::Vec lambda = nps::mvc_weights(d, nps::Vec2::Zero());
  for (int j = 0; j < 4; ++j) CHECK(lambda(j) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("vertex reproduction is an exact indicator") {
  const nps::PolygonDomain d = regular_ngon(5);
  for (int j = 0; j < 5; ++j) {
    const nps::Vec lambda = nps::mvc_weights(d, d.vertices[j]);
    for (int k = 0; k < 5; ++k) CHECK(lambda(k) == (k == j ? 1.0 : 0.0));
  }
}

TEST_CASE("edge points interpolate linearly between their endpoints") {
  const nps::PolygonDomain d = regular_ngon(6);
  for (double t : {0.2, 0.5, 0.9}) {
    const nps::Vec lambda = nps::mvc_weights(d, d.edge_point(2, t));
    CHECK(lambda(2) == doctest::Approx(1.0 - t).epsilon(1e-9));
    CHECK(lambda(3) == doctest::Approx(t).epsilon(1e-9));
    for (int k = 0; k < 6; ++k)
      if (k != 2 && k != 3) CHECK(std::abs(lambda(k)) < 1e-12);
  }
}

TEST_CASE("points outside the polygon throw") {
  const nps::PolygonDomain d = regular_ngon(4);
  CHECK_THROWS(nps::mvc_weights(d, nps::Vec2(2.0, 0.0)));
}

TEST_CASE("mvc gradient matches central finite differences") {
  nps::Rng rng(41);
  for (int n : {3, 4, 6}) {
    const nps::PolygonDomain d = regular_ngon(n);
    for (int trial = 0; trial < 50; ++trial) {
      const nps::Vec2 u = random_interior(d, rng);
      nps::Vec lambda;
      nps::Mat grad;
      nps::mvc_weights_and_grad(d, u, lambda, grad);
      CHECK((lambda - nps::mvc_weights(d, u)).cwiseAbs().maxCoeff() < 1e-12);
      const double h = 1e-6;
      for (int axis = 0; axis < 2; ++axis) {
        nps::Vec2 up = u, dn = u;
        up[axis] += h;
        dn[axis] -= h;
        const nps::Vec fd = (nps::mvc_weights(d, up) - nps::mvc_weights(d, dn)) / (2.0 * h);
        CHECK((grad.col(axis) - fd).cwiseAbs().maxCoeff() < 1e-5);
      }
    }
  }
}

TEST_CASE("domains respect boundary length fractions") {
  nps::PatchLayout layout = fixtures::cube_layout(1.0);
  // Stretch one arc with a polyline twice the chord length.
  const int ai = layout.arc_index(0, 1);
  REQUIRE(ai >= 0);
  nps::Arc& arc = layout.arcs[ai];
  const nps::Vec3 a = layout.corner(arc.a).position, b = layout.corner(arc.b).position;
  const nps::Vec3 mid = 0.5 * (a + b) + nps::Vec3(0, 0, std::sqrt(3.0));
  arc.polyline = {a, mid, b};
  layout.rebuild_derived();

  const auto domains = nps::build_domains(layout);
  for (const auto& d : domains) {
    CHECK(d.vertices.front().y() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(d.vertices.front().x() == doctest::Approx(1.0).epsilon(1e-12));
    const nps::Face& f = layout.face(d.face_id);
    const auto lens = layout.face_boundary_lengths(f);
    double total = 0.0;
    for (double l : lens) total += l;
    double prev = 0.0;
    for (int j = 0; j < d.size(); ++j) {
      const double ang =
          std::atan2(d.vertices[(j + 1) % d.size()].y(), d.vertices[(j + 1) % d.size()].x());
      double sweep = ang - (j == 0 ? 0.0 : prev);
      prev = ang;
      (void)sweep;
    }
    // Edge arc fraction check via cumulative angle.
    double cum = 0.0;
    for (int j = 0; j < d.size(); ++j) {
      cum += lens[j] / total * 2.0 * M_PI;
      const double expect_x = std::cos(cum), expect_y = std::sin(cum);
      const nps::Vec2& v = d.vertices[(j + 1) % d.size()];
      CHECK(v.x() == doctest::Approx(expect_x).epsilon(1e-9));
      CHECK(v.y() == doctest::Approx(expect_y).epsilon(1e-9));
    }
  }
}

TEST_CASE("edge features are shared and linear along arcs") {
  nps::PatchLayout layout = fixtures::cube_layout(1.0);
  nps::Rng rng(3);
  const nps::FeatureComplex fc = nps::make_complex(layout, 8, rng);
  const nps::Vec za = fc.Z.row(fc.vertex_row.at(1)).transpose();
  const nps::Vec zb = fc.Z.row(fc.vertex_row.at(3)).transpose();
  const nps::Vec mid = nps::edge_feature(fc, {1, 3}, 0.5);
  CHECK((mid - 0.5 * (za + zb)).norm() < 1e-15);
  CHECK((nps::edge_feature(fc, {1, 3}, 0.0) - za).norm() == 0.0);
  CHECK((nps::edge_feature(fc, {1, 3}, 1.0) - zb).norm() == 0.0);
}

TEST_CASE("canonical arc parameter agrees from both sides") {
  CHECK(nps::canonical_arc_t(2, 5, 0.25) == doctest::Approx(0.25));
  CHECK(nps::canonical_arc_t(5, 2, 0.75) == doctest::Approx(0.25));
  CHECK(nps::canonical_arc_t(5, 2, 0.25) == doctest::Approx(0.75));
}

TEST_CASE("interpolated boundary features match edge features") {
  nps::PatchLayout layout = fixtures::cube_layout(1.0);
  nps::Rng rng(5);
  const nps::FeatureComplex fc = nps::make_complex(layout, 6, rng);
  const auto& d = fc.domains.front();
  for (double t : {0.1, 0.5, 0.8}) {
    const nps::Vec via_face = nps::interpolate_feature(fc, d.face_id, d.edge_point(1, t));
    const int ca = d.corner_ids[1], cb = d.corner_ids[2];
    const double ct = nps::canonical_arc_t(ca, cb, t);
    const nps::Vec via_edge =
        nps::edge_feature(fc, {std::min(ca, cb), std::max(ca, cb)}, ct);
    CHECK((via_face - via_edge).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("feature dimension below 2 is rejected") {
  nps::PatchLayout layout = fixtures::cube_layout(1.0);
  nps::Rng rng(1);
  CHECK_THROWS(nps::make_complex(layout, 1, rng));
}
