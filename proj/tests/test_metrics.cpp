#include <cmath>

#include "doctest.h"
#include "nps/fit.hpp"
#include "nps/metrics.hpp"
#include "testutil.hpp"

namespace {

nps::Checkpoint sphere_checkpoint(std::uint64_t seed) {
  nps::PatchLayout layout;
  nps::LabeledSamples samples = fixtures::sphere_fixture(layout, 500, seed, true);
  nps::FitConfig cfg;
  cfg.iterations = 0;
  cfg.feature_dim = 4;
  cfg.layers = 2;
  cfg.hidden = 8;
  cfg.m_per_edge = 4;
  cfg.fair_samples_per_arc = 4;
  cfg.batch_points = 150;
  cfg.seed = seed;
  return nps::fit_shape(cfg, layout, samples, nullptr);
}

}  // namespace

TEST_CASE("point-triangle distance against a dense sampling oracle") {
  const nps::Vec3 a(0, 0, 0), b(2, 0, 0), c(0, 3, 0);
  nps::Rng rng(71);
  for (int trial = 0; trial < 300; ++trial) {
    const nps::Vec3 p(rng.uniform(-2.0, 4.0), rng.uniform(-2.0, 5.0), rng.uniform(-2.0, 2.0));
    // Oracle: dense barycentric grid.
    double oracle = 1e300;
    const int n = 400;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n - i; ++j) {
        const double u = static_cast<double>(i) / n, v = static_cast<double>(j) / n;
        oracle = std::min(oracle, (p - (a + u * (b - a) + v * (c - a))).norm());
      }
    const double got = nps::point_triangle_distance(p, a, b, c);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-4));
    CHECK(got <= oracle + 1e-12);  // the oracle grid can only overestimate
  }
}

TEST_CASE("point-triangle distance closed-form cases") {
  const nps::Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  CHECK(nps::point_triangle_distance({0.25, 0.25, 2.0}, a, b, c) == doctest::Approx(2.0));
  CHECK(nps::point_triangle_distance({-3.0, -4.0, 0.0}, a, b, c) == doctest::Approx(5.0));
  CHECK(nps::point_triangle_distance({0.5, -2.0, 0.0}, a, b, c) == doctest::Approx(2.0));
  CHECK(nps::point_triangle_distance({0.2, 0.3, 0.0}, a, b, c) == doctest::Approx(0.0));
  // Degenerate (collinear) triangle falls back to segment distance.
  CHECK(nps::point_triangle_distance({0.5, 1.0, 0.0}, a, b, {2, 0, 0}) == doctest::Approx(1.0));
}

TEST_CASE("mesh bvh distance matches brute force over all triangles") {
  const nps::MeshInput mesh = fixtures::icosphere_mesh({1.0, 0.8, 1.2}, 2);
  const nps::MeshBvh bvh(mesh.vertices, mesh.triangles);
  nps::Rng rng(72);
  for (int trial = 0; trial < 200; ++trial) {
    const nps::Vec3 p(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
    double brute = 1e300;
    for (const auto& t : mesh.triangles)
      brute = std::min(brute, nps::point_triangle_distance(p, mesh.vertices[t[0]],
                                                           mesh.vertices[t[1]],
                                                           mesh.vertices[t[2]]));
    CHECK(bvh.distance(p) == doctest::Approx(brute).epsilon(1e-12));
  }
}

TEST_CASE("a point set compared against itself scores zero everywhere") {
  nps::Rng rng(73);
  std::vector<nps::Vec3> pts, nrm;
  for (int i = 0; i < 300; ++i) {
    pts.push_back(fixtures::unit_direction(rng));
    nrm.push_back(pts.back());
  }
  const nps::MetricsReport r = nps::compare_point_sets(pts, nrm, pts, nrm);
  CHECK(r.p2s == 0.0);
  CHECK(r.hd == 0.0);
  CHECK(r.nae_degrees < 1e-5);  // acos round-off at exactly aligned normals
}

TEST_CASE("concentric spheres measure their radial separation") {
  // Radii 1 and 1.01 against the fine inner mesh: every outer point is 0.01
  // plus the chordal sag away.
  const nps::MeshInput inner = fixtures::icosphere_mesh({1.0, 1.0, 1.0}, 4);
  const nps::MeshBvh bvh(inner.vertices, inner.triangles);
  nps::Rng rng(74);
  double sum = 0.0, mx = 0.0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    const double d = bvh.distance(1.01 * fixtures::unit_direction(rng));
    sum += d;
    mx = std::max(mx, d);
  }
  CHECK(sum / n == doctest::Approx(0.01).epsilon(0.10));
  CHECK(mx == doctest::Approx(0.01).epsilon(0.15));
}

TEST_CASE("translated sphere hausdorff distance") {
  const nps::MeshInput mesh = fixtures::icosphere_mesh({1.0, 1.0, 1.0}, 4);
  std::vector<nps::Vec3> shifted;
  for (const auto& v : mesh.vertices) shifted.push_back(v + nps::Vec3(0.02, 0, 0));
  const nps::MeshBvh bvh(mesh.vertices, mesh.triangles);
  double mx = 0.0;
  for (const auto& p : shifted) mx = std::max(mx, bvh.distance(p));
  CHECK(mx == doctest::Approx(0.02).epsilon(0.15));
}

TEST_CASE("evaluate is deterministic and internally consistent") {
  const nps::Checkpoint c = sphere_checkpoint(41);
  nps::PatchLayout layout;
  const nps::LabeledSamples target = fixtures::sphere_fixture(layout, 500, 41, true);
  const nps::MetricsReport a = nps::evaluate(c, target, 2000, 5);
  const nps::MetricsReport b = nps::evaluate(c, target, 2000, 5);
  CHECK(a.p2s == b.p2s);
  CHECK(a.hd == b.hd);
  CHECK(a.nae_degrees == b.nae_degrees);
  CHECK(a.p2s <= a.hd);
  CHECK(a.p2s > 0.0);
  CHECK(std::isfinite(a.hd));
  CHECK(a.surface_samples == 2000);
  CHECK(a.target_samples == 500);
}

TEST_CASE("continuity report on an untrained checkpoint") {
  const nps::Checkpoint c = sphere_checkpoint(42);
  const nps::MetricsReport r = nps::continuity_report(c, 16);
  // G0 is structural: exact within floating point round-off even untrained.
  CHECK(r.max_positional_gap < 1e-9);
  CHECK(r.mean_smooth_normal_dev_degrees >= 0.0);
  CHECK(std::isfinite(r.mean_smooth_normal_dev_degrees));
  CHECK((r.max_smooth_normal_dev_degrees >= r.mean_smooth_normal_dev_degrees ||
         r.max_smooth_normal_dev_degrees == 0.0));
}
