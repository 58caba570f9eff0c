#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "spinealign/error.hpp"
#include "spinealign/geometry/analysis.hpp"
#include "spinealign/geometry/kdtree.hpp"
#include "spinealign/geometry/meshing.hpp"
#include "spinealign/geometry/sampling.hpp"
#include "spinealign/serial/reference.hpp"
#include "test_util.hpp"

using namespace spinealign;
using namespace spinealign::geometry;
using namespace spinealign::testing;

TEST(RigidTransform, InverseAndAssociativity) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_transform(rng);
    const auto b = random_transform(rng);
    const auto c = random_transform(rng);
    const Vec3 p = random_points(1, 100 + i)[0];
    EXPECT_LT((a.inverse().apply(a.apply(p)) - p).norm(), 1e-9);
    const Vec3 lhs = ((a * b) * c).apply(p);
    const Vec3 rhs = (a * (b * c)).apply(p);
    EXPECT_LT((lhs - rhs).norm(), 1e-9);
    EXPECT_TRUE((a * b).is_valid());
  }
}

TEST(RigidTransform, AxisAngleRoundTrip) {
  const Vec3 rv(0.1, -0.2, 0.3);
  const auto t = RigidTransform::from_axis_angle(rv, Vec3(1, 2, 3));
  EXPECT_LT((t.rotation_vector() - rv).norm(), 1e-12);
  EXPECT_NEAR(t.angle(), rv.norm(), 1e-12);
  EXPECT_NEAR(RigidTransform::identity().angle(), 0.0, 0.0);
}

TEST(KdTree, ExactQueryHitsItself) {
  const auto pts = random_points(100, 1);
  const KdTree tree(pts);
  auto hit = tree.nearest_within(pts[42], 1.0);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->index, 42u);
  EXPECT_EQ(hit->distance, 0.0);
}

TEST(KdTree, ThresholdExcludesFartherPoints) {
  const std::vector<Vec3> pts{Vec3(5, 0, 0)};
  const KdTree tree(pts);
  EXPECT_FALSE(tree.nearest_within(Vec3::Zero(), 4.0));
  EXPECT_TRUE(tree.nearest_within(Vec3::Zero(), 5.0));
}

TEST(KdTree, MatchesLinearScan) {
  const auto targets = random_points(1000, 2);
  const auto queries = random_points(100, 3, 140.0);
  const KdTree tree(targets);
  for (const auto& q : queries) {
    const auto [idx, dist] = brute_nearest(targets, q);
    const auto hit = tree.nearest(q);
    ASSERT_TRUE(hit);
    EXPECT_EQ(hit->index, idx);
    EXPECT_NEAR(hit->distance, dist, 1e-12);

    const auto within = tree.nearest_within(q, 6.0);
    EXPECT_EQ(within.has_value(), dist <= 6.0);
    if (within) EXPECT_EQ(within->index, idx);
  }
}

TEST(KdTree, KnnAndRadiusMatchLinearScan) {
  const auto targets = random_points(500, 4);
  const KdTree tree(targets);
  for (const auto& q : random_points(20, 5)) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < targets.size(); ++i) all.emplace_back(std::sqrt(brute_sq(targets[i], q)), i);
    std::sort(all.begin(), all.end());
    const auto knn = tree.knn(q, 10);
    ASSERT_EQ(knn.size(), 10u);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(knn[k].index, all[k].second);

    std::vector<std::size_t> expected;
    for (const auto& [d, i] : all) {
      if (d <= 15.0) expected.push_back(i);
    }
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(tree.radius_search(q, 15.0), expected);
  }
}

TEST(KdTree, DuplicatePointsDoNotBreakBuild) {
  std::vector<Vec3> pts(100, Vec3(1, 1, 1));
  pts.push_back(Vec3(2, 2, 2));
  const KdTree tree(pts);
  EXPECT_EQ(tree.nearest(Vec3(1, 1, 1))->index, 0u);
  EXPECT_EQ(tree.nearest(Vec3(3, 3, 3))->index, 100u);
}

TEST(MarchingCubes, EmptyMaskGivesEmptyMesh) {
  const VoxelMask mask({8, 8, 8}, Vec3::Ones(), Vec3::Zero());
  const auto mesh = marching_cubes(mask);
  EXPECT_EQ(mesh.vertex_count(), 0u);
  EXPECT_EQ(mesh.triangle_count(), 0u);
}

TEST(MarchingCubes, RejectsThinGrid) {
  const VoxelMask mask({1, 8, 8}, Vec3::Ones(), Vec3::Zero());
  EXPECT_THROW(marching_cubes(mask), InvalidArgument);
}

TEST(MarchingCubes, SingleVoxelIsClosedGenusZero) {
  VoxelMask mask({3, 3, 3}, Vec3::Ones(), Vec3::Zero());
  mask.set(1, 1, 1, true);
  const auto mesh = marching_cubes(mask);
  EXPECT_EQ(euler_characteristic(mesh), 2);
  EXPECT_TRUE(is_closed_oriented(mesh));
  EXPECT_GT(mesh.signed_volume(), 0.0);
  // Octahedron with vertices at the six face-adjacent edge midpoints.
  EXPECT_EQ(mesh.vertex_count(), 6u);
  EXPECT_EQ(mesh.triangle_count(), 8u);
  for (const auto& v : mesh.vertices) EXPECT_NEAR((v - Vec3(1, 1, 1)).norm(), 0.5, 1e-12);
}

TEST(MarchingCubes, BoundaryVoxelsProduceClosedSurface) {
  VoxelMask mask({2, 2, 2}, Vec3::Ones(), Vec3::Zero());
  std::fill(mask.occupancy.begin(), mask.occupancy.end(), 1);
  const auto mesh = marching_cubes(mask);
  EXPECT_TRUE(is_closed_oriented(mesh));
  EXPECT_EQ(euler_characteristic(mesh), 2);
}

TEST(MarchingCubes, WorldCoordinatesUseSpacingAndOrigin) {
  VoxelMask mask({3, 3, 3}, Vec3(2.0, 3.0, 4.0), Vec3(10.0, 20.0, 30.0));
  mask.set(1, 1, 1, true);
  const Vec3 centre = marching_cubes(mask).vertex_centroid();
  EXPECT_LT((centre - Vec3(12.0, 23.0, 34.0)).norm(), 1e-12);
}

TEST(MarchingCubes, DigitizedSphereIsClosedAndOutward) {
  const auto mesh = marching_cubes(sphere_mask(10.0, 32));
  EXPECT_TRUE(is_closed_oriented(mesh));
  EXPECT_EQ(euler_characteristic(mesh), 2);
  EXPECT_GT(mesh.signed_volume(), 0.0);
  // Binary-field marching cubes places every vertex at an edge midpoint,
  // so the staircase surface over-estimates the area of the ideal sphere.
  const double analytic = 4.0 * kPi * 100.0;
  const double ratio = mesh.surface_area() / analytic;
  EXPECT_GT(ratio, 1.0);
  EXPECT_LT(ratio, 1.12);
}

TEST(MarchingCubes, SmoothedSphereAreaWithinFivePercent) {
  const auto mesh = mesh_from_mask(sphere_mask(10.0, 32));
  const double analytic = 4.0 * kPi * 100.0;
  EXPECT_NEAR(mesh.surface_area() / analytic, 1.0, 0.05);
}

TEST(LaplacianSmooth, ZeroIterationsIsIdentity) {
  const auto mesh = marching_cubes(sphere_mask(4.0, 12));
  const auto out = laplacian_smooth(mesh, 0, 0.5);
  EXPECT_EQ(out.vertices, mesh.vertices);
  EXPECT_EQ(out.triangles, mesh.triangles);
}

TEST(LaplacianSmooth, TetrahedronContractsSymmetrically) {
  TriMesh tet;
  tet.vertices = {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)};
  tet.triangles = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  const auto out = laplacian_smooth(tet, 1, 0.5);
  std::vector<double> moved;
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec3 step = out.vertices[i] - tet.vertices[i];
    moved.push_back(step.norm());
    // Motion is straight toward the common centroid (origin).
    EXPECT_LT(step.normalized().dot(-tet.vertices[i].normalized()) - 1.0, 1e-12);
  }
  for (double d : moved) EXPECT_NEAR(d, moved[0], 1e-12);
  EXPECT_EQ(out.triangles, tet.triangles);
}

TEST(LaplacianSmooth, ReducesRadialNoise) {
  auto mesh = marching_cubes(sphere_mask(10.0, 32));
  const Vec3 c = Vec3::Constant(15.5);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (auto& v : mesh.vertices) v += (v - c).normalized() * noise(rng);

  auto rms_dev = [&](const TriMesh& m) {
    double mean_r = 0.0;
    for (const auto& v : m.vertices) mean_r += (v - c).norm();
    mean_r /= m.vertices.size();
    double s = 0.0;
    for (const auto& v : m.vertices) s += std::pow((v - c).norm() - mean_r, 2);
    return std::sqrt(s / m.vertices.size());
  };
  const double before = rms_dev(mesh);
  const double after = rms_dev(laplacian_smooth(mesh, 10, 0.5));
  EXPECT_LT(after, before);
}

TEST(SampleSurface, DeterministicForSeed) {
  const auto mesh = box_mesh(Vec3::Zero(), Vec3(10, 20, 30));
  const auto a = sample_surface(mesh, 500, 99);
  const auto b = sample_surface(mesh, 500, 99);
  EXPECT_EQ(a.positions, b.positions);
  EXPECT_EQ(a.size(), 500u);
  EXPECT_NE(a.positions, sample_surface(mesh, 500, 100).positions);
}

TEST(SampleSurface, AreaProportionalCounts) {
  // Triangle areas 1 and 9.
  TriMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 1, 0), Vec3(10, 0, 0), Vec3(16, 0, 0), Vec3(10, 3, 0)};
  m.triangles = {{0, 1, 2}, {3, 4, 5}};
  const auto s = sample_surface_with_faces(m, 10000, 5);
  const auto second = std::count(s.faces.begin(), s.faces.end(), 1u);
  EXPECT_NEAR(static_cast<double>(second), 9000.0, 300.0);
}

TEST(SampleSurface, PointsStayInsideUnitSquare) {
  TriMesh sq;
  sq.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)};
  sq.triangles = {{0, 1, 2}, {0, 2, 3}};
  const auto c = sample_surface(sq, 30000, 1);
  ASSERT_EQ(c.size(), 30000u);
  for (const auto& p : c.positions) {
    EXPECT_GE(p.x(), -1e-9);
    EXPECT_LE(p.x(), 1 + 1e-9);
    EXPECT_GE(p.y(), -1e-9);
    EXPECT_LE(p.y(), 1 + 1e-9);
    EXPECT_NEAR(p.z(), 0.0, 1e-9);
  }
}

TEST(SampleSurface, EmptyMeshThrows) {
  EXPECT_THROW(sample_surface(TriMesh{}, 10, 1), InvalidArgument);
}

TEST(VoxelDownsample, MatchesGroupingByCell) {
  PointCloud c = random_cloud(5000, 31, 40.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < c.size(); ++i) c.colors.emplace_back(u(rng), u(rng), u(rng));
  const double voxel = 2.0;
  const auto d = voxel_downsample(c, voxel);

  // Oracle: group by cell with a linear scan over the already seen cells.
  std::vector<std::array<long, 3>> cells;
  std::vector<Vec3> sum, csum;
  std::vector<int> n;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const std::array<long, 3> cell = {static_cast<long>(std::floor(c.positions[i].x() / voxel)),
                                      static_cast<long>(std::floor(c.positions[i].y() / voxel)),
                                      static_cast<long>(std::floor(c.positions[i].z() / voxel))};
    auto it = std::find(cells.begin(), cells.end(), cell);
    std::size_t k = it - cells.begin();
    if (it == cells.end()) {
      cells.push_back(cell);
      sum.push_back(Vec3::Zero());
      csum.push_back(Vec3::Zero());
      n.push_back(0);
    }
    sum[k] += c.positions[i];
    csum[k] += c.colors[i];
    ++n[k];
  }
  ASSERT_EQ(d.size(), cells.size());
  ASSERT_EQ(d.colors.size(), cells.size());
  for (std::size_t k = 0; k < cells.size(); ++k) {
    EXPECT_LE((d.positions[k] - sum[k] / n[k]).norm(), 1e-12);
    EXPECT_LE((d.colors[k] - csum[k] / n[k]).norm(), 1e-12);
  }
  EXPECT_TRUE(d.normals.empty());
  EXPECT_THROW(voxel_downsample(c, 0.0), InvalidArgument);
  EXPECT_TRUE(voxel_downsample(PointCloud{}, 1.0).empty());
}

TEST(SampleSurface, ChiSquareAgainstAreaProportions) {
  const auto mesh = laplacian_smooth(marching_cubes(sphere_mask(6.0, 16)), 3, 0.5);
  const std::size_t n = 30000;
  const auto s = sample_surface_with_faces(mesh, n, 2024);
  // Bin triangles into ~40 groups of roughly equal expected mass.
  const double total = mesh.surface_area();
  const int bins = 40;
  std::vector<double> expected(bins, 0.0), observed(bins, 0.0);
  std::vector<int> bin_of(mesh.triangle_count());
  double acc = 0.0;
  for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
    bin_of[t] = std::min(bins - 1, static_cast<int>(acc / total * bins));
    acc += mesh.face_area(t);
    expected[bin_of[t]] += mesh.face_area(t) / total * n;
  }
  for (auto f : s.faces) observed[bin_of[f]] += 1.0;
  double chi2 = 0.0;
  for (int b = 0; b < bins; ++b) chi2 += std::pow(observed[b] - expected[b], 2) / expected[b];
  const boost::math::chi_squared dist(bins - 1);
  EXPECT_GT(1.0 - boost::math::cdf(dist, chi2), 0.01);
}

namespace {
PointCloud grid_plane(int n, double step) {
  PointCloud c;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) c.positions.emplace_back(i * step, j * step, 0.0);
  return c;
}
}  // namespace

TEST(EstimateNormals, PlaneFacesViewpoint) {
  const auto up = estimate_normals(grid_plane(20, 1.0), 30, Vec3(0, 0, 100));
  for (const auto& n : up.normals) EXPECT_LT((n - Vec3::UnitZ()).norm(), 1e-6);
  const auto down = estimate_normals(grid_plane(20, 1.0), 30, Vec3(0, 0, -100));
  for (const auto& n : down.normals) EXPECT_LT((n + Vec3::UnitZ()).norm(), 1e-6);
}

TEST(EstimateNormals, TooFewPointsThrows) {
  EXPECT_THROW(estimate_normals(grid_plane(3, 1.0), 30), InvalidArgument);
}

TEST(EstimateNormals, SphereHemisphereFacingViewpointPointsOutward) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  PointCloud c;
  for (int i = 0; i < 4000; ++i) c.positions.push_back(Vec3(g(rng), g(rng), g(rng)).normalized() * 20.0);
  const Vec3 view(0, 0, 1000);
  const auto out = estimate_normals(c, 30, view);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Vec3 radial = c.positions[i].normalized();
    EXPECT_GE(out.normals[i].dot(view - c.positions[i]), 0.0);
    if (c.positions[i].z() > 2.0) EXPECT_GT(out.normals[i].dot(radial), 0.9);
  }
}

TEST(EstimateNormals, ParallelMatchesSerialReference) {
  const auto cloud = random_cloud(2000, 17, 50.0);
  const auto a = estimate_normals(cloud, 12, Vec3(0, 0, 200));
  const auto b = serial::estimate_normals(cloud, 12, Vec3(0, 0, 200));
  EXPECT_EQ(a.normals, b.normals);
}

TEST(PrincipalFrame, BoxAxesAlignWithExtents) {
  const auto mesh = box_mesh(Vec3(-20, -10, -5), Vec3(20, 10, 5));
  const auto cloud = sample_surface(mesh, 20000, 8);
  const auto f = principal_frame(cloud);
  const Vec3 expected[3] = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  for (int i = 0; i < 3; ++i) EXPECT_GT(std::abs(f.axes[i].dot(expected[i])), std::cos(deg(2.0)));
  EXPECT_GT(f.variances[0], f.variances[1]);
  EXPECT_GT(f.variances[1], f.variances[2]);
}

TEST(PrincipalFrame, OrthonormalRightHandedAndEquivariant) {
  std::mt19937_64 rng(21);
  const auto mesh = box_mesh(Vec3(-20, -10, -5), Vec3(20, 10, 5));
  const auto cloud = sample_surface(mesh, 5000, 9);
  const auto f = principal_frame(cloud);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_transform(rng);
    const auto g = principal_frame(cloud.transformed(t));
    EXPECT_LT(g.axes[0].cross(g.axes[1]).dot(g.axes[2]) - 1.0, 1e-9);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) EXPECT_NEAR(g.axes[i].dot(g.axes[j]), i == j ? 1.0 : 0.0, 1e-9);
      EXPECT_NEAR(std::abs(g.axes[i].dot(t.rotation * f.axes[i])), 1.0, 1e-6);
    }
    EXPECT_LT((g.centroid - t.apply(f.centroid)).norm(), 1e-9);
  }
}

TEST(PrincipalFrame, CollinearPointsAreDegenerate) {
  const std::vector<Vec3> three{Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2)};
  EXPECT_THROW(principal_frame(three), DegenerateGeometry);
  const std::vector<Vec3> line{Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2), Vec3(5, 5, 5)};
  EXPECT_THROW(principal_frame(line), DegenerateGeometry);
}

TEST(ShapeMetrics, TrivialCases) {
  const auto a = random_cloud(50, 1);
  EXPECT_EQ(chamfer_distance(a, a), 0.0);
  EXPECT_EQ(hausdorff_distance(a, a), 0.0);

  PointCloud p, q;
  p.positions = {Vec3(0, 0, 0)};
  q.positions = {Vec3(3, 0, 0)};
  EXPECT_DOUBLE_EQ(chamfer_distance(p, q), 3.0);

  PointCloud two;
  two.positions = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  PointCloud one;
  one.positions = {Vec3(0, 0, 0)};
  EXPECT_DOUBLE_EQ(hausdorff_distance(two, one), 1.0);
  EXPECT_THROW(chamfer_distance(PointCloud{}, one), InvalidArgument);
  EXPECT_THROW(hausdorff_distance(one, PointCloud{}), InvalidArgument);
}

TEST(ShapeMetrics, MatchBruteForceAndAreSymmetric) {
  for (int s = 0; s < 10; ++s) {
    const auto a = random_cloud(50, 1000 + s);
    const auto b = random_cloud(50, 2000 + s);
    EXPECT_NEAR(chamfer_distance(a, b), brute_chamfer(a.positions, b.positions), 1e-9);
    EXPECT_NEAR(hausdorff_distance(a, b), brute_hausdorff(a.positions, b.positions), 1e-9);
    EXPECT_EQ(chamfer_distance(a, b), chamfer_distance(b, a));
    EXPECT_EQ(hausdorff_distance(a, b), hausdorff_distance(b, a));
    EXPECT_EQ(chamfer_distance(a, b), serial::chamfer_distance(a, b));
    EXPECT_EQ(hausdorff_distance(a, b), serial::hausdorff_distance(a, b));
  }
}
