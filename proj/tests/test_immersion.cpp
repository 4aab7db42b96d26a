#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "lipimm/immersion.hpp"
#include "lipimm/shapes.hpp"

using namespace lipimm;

namespace {

// Analytic graph of the unit circle over its tangent line: u(x) = 1 - √(1 - x²).
double circle_u(double x, double radius = 1.0) { return radius - std::sqrt(radius * radius - x * x); }
double circle_slope(double x, double radius = 1.0) { return x / std::sqrt(radius * radius - x * x); }

Subspace line2(double x, double y) {
  Mat a(2, 1);
  a << x, y;
  return orthonormalize(a);
}

}  // namespace

TEST(Delta, Ladder) {
  EXPECT_DOUBLE_EQ(delta(0, 0.2, 0.25), 0.2);
  EXPECT_NEAR(delta(1, 0.2, 0.25), 0.2 / 3.75, 1e-17);
  EXPECT_NEAR(delta(5, 0.2, 0.25), 0.2 / std::pow(3.75, 5), 1e-20);
  EXPECT_THROW(delta(-1, 0.2, 0.25), Error);
}

TEST(Isometry, AdaptedIsometryIsOrientedAndCentred) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    Mat raw = Mat::Random(4, 2);
    Vec o = Vec::Random(4);
    EuclideanIsometry a = adapted_isometry(orthonormalize(raw), o);
    EXPECT_NEAR(a.rotation.determinant(), 1.0, 1e-12);
    EXPECT_NEAR((a.apply(Vec::Zero(4)) - o).norm(), 0, 1e-15);
    EXPECT_TRUE(same_subspace(orthonormalize(a.rotation.leftCols(2)), orthonormalize(raw)));
  }
  EXPECT_THROW(make_isometry(-Mat::Identity(3, 3), Vec::Zero(3)), Error);
}

TEST(SampledImmersion, DisconnectedSamplesAreRejected) {
  // Two parallel circles bundled into one sample set.
  const int n = 64;
  Mat x(3, 2 * n);
  std::vector<std::vector<int>> edges;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < n; ++i) {
      const double t = 2 * std::numbers::pi * i / n;
      x.col(c * n + i) << std::cos(t), std::sin(t), c;
      edges.push_back({c * n + i, c * n + (i + 1) % n});
    }
  try {
    SampledImmersion f(1, x, edges);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invariant_violation);
  }
}

TEST(SampledImmersion, CircleVolumeAndTangents) {
  auto f = shapes::circle(1.0, 4096);
  EXPECT_NEAR(f.volume(), 2 * 4096 * std::sin(std::numbers::pi / 4096), 1e-12);
  EXPECT_NEAR(std::abs(f.tangent(0)(1, 0)), 1.0, 1e-15);
  auto g = shapes::without_evaluator(f);
  EXPECT_NEAR(std::abs(g.tangent(0)(1, 0)), 1.0, 1e-15);
  EXPECT_FALSE(g.has_evaluator());
}

TEST(QComponent, CircleArcMatchesCount) {
  const int n = 4096;
  auto f = shapes::circle(1.0, n);
  auto ids = q_component(f, 0, line2(0, 1), 0.2);
  // Samples on the arc through (1,0) with |sin θ| < 0.2.
  std::size_t expected = 0;
  for (int i = 0; i < n; ++i) {
    const double t = 2 * std::numbers::pi * i / n;
    if (std::cos(t) > 0 && std::abs(std::sin(t)) < 0.2) ++expected;
  }
  EXPECT_EQ(ids.size(), expected);
  EXPECT_EQ(ids.front(), 0);
}

TEST(QComponent, LargeRadiusCoversArcButNotAntipode) {
  auto f = shapes::circle(1.0, 1024);
  auto ids = q_component(f, 0, line2(0, 1), 0.99);
  EXPECT_FALSE(std::binary_search(ids.begin(), ids.end(), 512));
  EXPECT_TRUE(std::binary_search(ids.begin(), ids.end(), 200));
}

TEST(QComponent, DependsOnlyOnThePlane) {
  std::mt19937_64 rng(5);
  auto f = shapes::torus(2.0, 0.5, 60, 30);
  for (int t = 0; t < 10; ++t) {
    const int q = static_cast<int>(rng() % f.size());
    Subspace e = orthonormalize(f.tangent(q));
    Eigen::Matrix2d rot;
    const double a = 0.3 * (t + 1);
    rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    Subspace e2 = orthonormalize(e.frame() * rot);
    EXPECT_EQ(q_component(f, q, e, 0.3), q_component(f, q, e2, 0.3));
  }
}

TEST(GraphPatch, CircleMatchesAnalyticGraph) {
  auto f = shapes::circle(1.0, 4096);
  GraphPatch g = extract_graph_patch(f, 0, line2(0, 1), 0.2);
  ASSERT_EQ(g.node_count(), 129);
  for (int i = 0; i < g.node_count(); ++i) {
    const double x = g.node(i)(0);
    EXPECT_NEAR(std::abs(g.values(0, i)), circle_u(x), 1e-12);
  }
  EXPECT_NEAR(g.lambda_measured, circle_slope(0.2), 1e-5);
  EXPECT_NEAR(std::abs(g.value(Vec::Constant(1, 0.1234))(0)), circle_u(0.1234), 1e-13);
  EXPECT_NEAR(g.isometry.rotation.determinant(), 1, 1e-12);
}

TEST(GraphPatch, SampledCircleInterpolates) {
  auto f = shapes::without_evaluator(shapes::circle(1.0, 4096));
  GraphPatch g = extract_graph_patch(f, 0, line2(0, 1), 0.2);
  for (int i = 0; i < g.node_count(); ++i)
    EXPECT_NEAR(std::abs(g.values(0, i)), circle_u(g.node(i)(0)), 1e-6);
  EXPECT_NEAR(g.lambda_measured, circle_slope(0.2), 1e-3);
}

TEST(GraphPatch, NearlyFullRadiusFolds) {
  auto f = shapes::circle(1.0, 4096);
  try {
    extract_graph_patch(f, 0, line2(0, 1), 0.9999);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::not_a_graph);
  }
}

TEST(GraphPatch, CoarseSamplesAreInsufficient) {
  auto f = shapes::without_evaluator(shapes::circle(1.0, 64));
  try {
    extract_graph_patch(f, 0, line2(0, 1), 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::insufficient_sampling);
  }
}

TEST(GraphPatch, TorusPatchPassesThroughOrigin) {
  auto f = shapes::torus(2.0, 0.5, 120, 60);
  GraphPatch g = extract_graph_patch(f, 17, orthonormalize(f.tangent(17)), 0.1);
  EXPECT_EQ(g.node_count(), 65 * 65);
  EXPECT_GT(g.lambda_measured, circle_slope(0.1, 0.5) - 1e-3);
  EXPECT_LT(g.lambda_measured, 0.25);
}

TEST(CheckRLambda, CirclePassesAtPointTwo) {
  FramedImmersion fi(shapes::circle(1.0, 4096), 0.2, 0.25);
  auto rep = check_r_lambda(fi);
  EXPECT_TRUE(rep.pass);
  EXPECT_NEAR(rep.worst_lambda, 0.2 / std::sqrt(1 - 0.04), 1e-3);
}

TEST(CheckRLambda, CircleFailsAtQuarter) {
  FramedImmersion fi(shapes::circle(1.0, 4096), 0.25, 0.25);
  auto rep = check_r_lambda(fi);
  EXPECT_FALSE(rep.pass);
  EXPECT_NEAR(rep.worst_lambda, 0.25 / std::sqrt(1 - 0.0625), 1e-3);
}

TEST(CheckRLambda, ThresholdScalesWithRadius) {
  for (double radius : {0.5, 2.0}) {
    const double lam = 0.25, edge = lam * radius / std::sqrt(1 + lam * lam);
    EXPECT_TRUE(check_r_lambda(FramedImmersion(shapes::circle(radius, 2048), edge * (1 - 1e-3), lam)).pass);
    EXPECT_FALSE(check_r_lambda(FramedImmersion(shapes::circle(radius, 2048), edge * (1 + 1e-3), lam)).pass);
  }
}

TEST(CheckRLambda, BestFitPlanesAgreeWithTangents) {
  auto f = shapes::circle(1.0, 2048);
  FramedImmersion a(f, 0.2, 0.25), b(f, 0.2, 0.25, PlaneRule::best_fit());
  for (int q = 0; q < f.size(); q += 97) EXPECT_LT(geodesic_distance(a.plane(q), b.plane(q)), 1e-6);
  EXPECT_NEAR(check_r_lambda(b).worst_lambda, check_r_lambda(a).worst_lambda, 1e-4);
}

TEST(CheckRLambda, ExplicitPlanesAreUsed) {
  auto f = shapes::circle(1.0, 1024);
  FramedImmersion fi(f, 0.2, 0.25, PlaneRule::explicit_planes([&](std::int64_t id) {
                       return orthonormalize(f.tangent(f.index_of(id)));
                     }));
  EXPECT_TRUE(check_r_lambda(fi).pass);
}

TEST(CheckRLambda, SampledSphere) {
  // Facets reach past the rim by up to an edge, and rim stencils straddle kinks.
  auto f = shapes::sphere(1.0, 4);
  FramedImmersion fi(f, 0.2, 0.25);
  auto rep = check_r_lambda(fi);
  EXPECT_GT(rep.worst_lambda, circle_slope(0.2) - 0.01);
  EXPECT_LT(rep.worst_lambda, circle_slope(0.2 + 2 * f.max_edge()));
}

TEST(CheckRLambdaFunction, RoundedSquarePolylinePasses) {
  auto f = shapes::without_evaluator(shapes::rounded_rectangle(3.0, 3.0, 0.5, 4000));
  auto rep = check_r_lambda_function(FramedImmersion(f, 0.1, 0.25));
  EXPECT_TRUE(rep.pass);
  EXPECT_LT(rep.worst_lambda, 0.25);
  EXPECT_TRUE(rep.injective);
}

TEST(CheckRLambdaFunction, FigureEightCrossingIsNotInjective) {
  auto f = shapes::without_evaluator(shapes::figure_eight(0.1, 400));
  try {
    check_r_lambda_function(FramedImmersion(f, 0.12, 0.25));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::injectivity_violation);
  }
}

TEST(GraphSystem, DistanceOfATranslateIsTheSumOfShifts) {
  auto f = shapes::circle(1.0, 512);
  Vec shift(2);
  shift << 3e-4, -4e-4;
  auto g = shapes::circle(1.0, 512, shift);
  FramedImmersion a(f, 0.2, 0.25), b(g, 0.2, 0.25);
  std::vector<int> bases = {0, 100, 300};
  auto ga = graph_system(a, bases, 16), gb = graph_system(b, bases, 16);
  EXPECT_NEAR(graph_system_distance(ga, ga), 0, 1e-15);
  EXPECT_NEAR(graph_system_distance(ga, gb), 3 * 5e-4, 1e-12);
}

TEST(PatchIntersection, HoldsOnTorusPairs) {
  FramedImmersion fi(shapes::torus(2.0, 0.5, 500, 160), 0.12, 0.25);
  const double small = 0.12 / (3 * 1.25);
  std::mt19937_64 rng(9);
  int overlapping = 0;
  for (int t = 0; t < 500; ++t) {
    const int q = static_cast<int>(rng() % fi.f().size());
    // Half the pairs are close so that the overlap clause is exercised.
    int p = static_cast<int>(rng() % fi.f().size());
    if (t % 2 == 0) {
      const auto near = fi.component(q, small);
      p = near[rng() % near.size()];
    }
    auto rep = patch_intersection_check(fi, p, q, 0.12);
    EXPECT_TRUE(rep.distance_bound_holds);
    EXPECT_TRUE(rep.inclusion_holds);
    overlapping += rep.overlap;
  }
  EXPECT_GT(overlapping, 200);
}
