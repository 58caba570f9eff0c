#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "spinealign/error.hpp"
#include "spinealign/kinematics/spine_model.hpp"
#include "test_util.hpp"

using namespace spinealign;
using namespace spinealign::kinematics;
using namespace spinealign::testing;

namespace {

using Mat4 = Eigen::Matrix4d;

// Rodrigues' formula written out, independent of Eigen::AngleAxis.
Mat3 rodrigues(const Vec3& axis, double angle) {
  const Vec3 k = axis.normalized();
  Mat3 kx;
  kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return Mat3::Identity() + std::sin(angle) * kx + (1 - std::cos(angle)) * kx * kx;
}

Mat4 homogeneous(const Mat3& r, const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return m;
}

Mat4 translation(const Vec3& t) { return homogeneous(Mat3::Identity(), t); }

Mat4 to_mat4(const RigidTransform& t) { return homogeneous(t.rotation, t.translation); }

// Chain of `n` finned blocks stacked 40 mm apart along z.
std::vector<std::pair<std::string, TriMesh>> stacked_blocks(std::size_t n) {
  std::vector<std::pair<std::string, TriMesh>> v;
  for (std::size_t i = 0; i < n; ++i) v.emplace_back("V" + std::to_string(i), finned_block(Vec3(0, 0, 40.0 * i)));
  return v;
}

ArticulatedPose random_pose(const SpineModel& model, std::mt19937_64& rng, bool with_global = true) {
  auto pose = ArticulatedPose::zero(model.joint_count());
  for (std::size_t j = 0; j < model.joint_count(); ++j) {
    for (int a = 0; a < 3; ++a) {
      const auto& lim = model.joints[j].limits[a];
      pose.angle(j, static_cast<Axis>(a)) = std::uniform_real_distribution<double>(lim.min, lim.max)(rng);
    }
  }
  if (with_global) pose.global = random_transform(rng);
  return pose;
}

// Moving-frame composition: joint j's position and axes are pushed through
// the transform already accumulated by its caudal link, then the three
// rotations are built about those world-space axes.
std::vector<Mat4> moving_frame_oracle(const SpineModel& model, const ArticulatedPose& pose) {
  std::vector<Mat4> link(model.link_count(), Mat4::Identity());
  for (std::size_t j = 0; j < model.joint_count(); ++j) {
    const Mat4& a = link[j];
    const Mat3 ra = a.topLeftCorner<3, 3>();
    const Vec3 p = (a * model.joints[j].position.homogeneous()).head<3>();
    const Mat3 r = rodrigues(ra * model.joints[j].axes[0], pose.joint_angles[3 * j]) *
                   rodrigues(ra * model.joints[j].axes[1], pose.joint_angles[3 * j + 1]) *
                   rodrigues(ra * model.joints[j].axes[2], pose.joint_angles[3 * j + 2]);
    link[j + 1] = translation(p) * homogeneous(r, Vec3::Zero()) * translation(-p) * a;
  }
  const Mat4 g = homogeneous(pose.global.rotation, pose.global.translation);
  for (auto& m : link) m = g * m;
  return link;
}

double max_pairwise_distance_change(const TriMesh& a, const TriMesh& b, std::size_t begin, std::size_t end) {
  double worst = 0.0;
  for (std::size_t i = begin; i < end; ++i)
    for (std::size_t k = i + 1; k < end; ++k) {
      worst = std::max(worst, std::abs((a.vertices[i] - a.vertices[k]).norm() - (b.vertices[i] - b.vertices[k]).norm()));
    }
  return worst;
}

}  // namespace

TEST(SpineModel, DefaultLimitsInRadians) {
  const auto lim = default_joint_limits();
  EXPECT_DOUBLE_EQ(lim[kMediolateral].max, deg(13));
  EXPECT_DOUBLE_EQ(lim[kAnteroposterior].min, -deg(6));
  EXPECT_DOUBLE_EQ(lim[kLongitudinal].max, deg(3));
}

TEST(BuildChain, PlainBoxesAlongZ) {
  // 20 x 40 x 10 boxes, long side along y, stacked 40 mm apart along z.
  std::vector<std::pair<std::string, TriMesh>> v = {
      {"L5", box_mesh(Vec3(-10, -20, -5), Vec3(10, 20, 5))},
      {"L4", box_mesh(Vec3(-10, -20, 35), Vec3(10, 20, 45))},
  };
  const auto model = build_chain(v);
  ASSERT_EQ(model.joint_count(), 1u);
  EXPECT_LT((model.joints[0].position - Vec3(0, 0, 20)).norm(), 1e-12);
  const auto& axes = model.joints[0].axes;
  EXPECT_LT(std::acos(std::min(1.0, std::abs(axes[kAnteroposterior].dot(Vec3::UnitY())))), deg(2));
  EXPECT_LT(std::acos(std::min(1.0, axes[kLongitudinal].dot(Vec3::UnitZ()))), deg(2));
  model.validate();
}

TEST(BuildChain, FinnedBlocksGiveSignedAxes) {
  const auto model = build_chain(stacked_blocks(3));
  ASSERT_EQ(model.joint_count(), 2u);
  for (const auto& j : model.joints) {
    EXPECT_LT((j.axes[kAnteroposterior] - Vec3::UnitY()).norm(), 1e-9);
    EXPECT_LT((j.axes[kLongitudinal] - Vec3::UnitZ()).norm(), 1e-9);
    // mediolateral = anteroposterior x longitudinal
    EXPECT_LT((j.axes[kMediolateral] - Vec3::UnitX()).norm(), 1e-9);
  }
  const Vec3 c0 = model.links[0].centroid, c1 = model.links[1].centroid;
  EXPECT_LT((model.joints[0].position - 0.5 * (c0 + c1)).norm(), 1e-12);
}

TEST(BuildChain, FlippedInputFlipsApSign) {
  auto v = stacked_blocks(2);
  const RigidTransform flip = RigidTransform::rotation_about(Vec3::Zero(), Vec3::UnitZ(), kPi);
  for (auto& [label, mesh] : v) mesh = mesh.transformed(flip);
  const auto model = build_chain(v);
  EXPECT_LT((model.joints[0].axes[kAnteroposterior] + Vec3::UnitY()).norm(), 1e-9);
}

TEST(BuildChain, RotationEquivariant) {
  std::mt19937_64 rng(17);
  const auto base = build_chain(stacked_blocks(4));
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_transform(rng);
    auto v = stacked_blocks(4);
    for (auto& [label, mesh] : v) mesh = mesh.transformed(g);
    const auto moved = build_chain(v);
    for (std::size_t j = 0; j < base.joint_count(); ++j) {
      EXPECT_LT((moved.joints[j].position - g.apply(base.joints[j].position)).norm(), 1e-6);
      for (int a = 0; a < 3; ++a) {
        EXPECT_LT((moved.joints[j].axes[a] - g.rotation * base.joints[j].axes[a]).norm(), 1e-6);
      }
    }
  }
}

TEST(BuildChain, Errors) {
  EXPECT_THROW(build_chain(stacked_blocks(1)), InvalidArgument);
  std::vector<std::pair<std::string, TriMesh>> flat = stacked_blocks(2);
  flat[0].second.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0)};
  flat[0].second.triangles = {{0, 1, 2}};
  EXPECT_THROW(build_chain(flat), DegenerateGeometry);
}

TEST(ForwardKinematics, ZeroPoseIsIdentity) {
  const auto model = build_chain(stacked_blocks(4));
  for (const auto& t : forward_kinematics(model, ArticulatedPose::zero(3))) {
    EXPECT_EQ(t.rotation, Mat3::Identity());
    EXPECT_EQ(t.translation, Vec3::Zero());
  }
}

TEST(ForwardKinematics, SingleMediolateralJoint) {
  const auto model = build_chain(stacked_blocks(2));
  auto pose = ArticulatedPose::zero(1);
  pose.angle(0, kMediolateral) = deg(10);
  const auto t = forward_kinematics(model, pose);
  EXPECT_EQ(t[0].rotation, Mat3::Identity());
  const auto& j = model.joints[0];
  for (const auto& v : model.links[1].mesh.vertices) {
    const Vec3 expected = j.position + rodrigues(j.axes[kMediolateral], deg(10)) * (v - j.position);
    EXPECT_LT((t[1].apply(v) - expected).norm(), 1e-12);
  }
}

TEST(ForwardKinematics, MatchesMovingFrameOracle) {
  std::mt19937_64 rng(2024);
  const auto model = build_chain(stacked_blocks(4));
  for (int trial = 0; trial < 200; ++trial) {
    auto pose = random_pose(model, rng);
    // Exceed the limits occasionally; the kinematics do not clamp.
    if (trial % 5 == 0) pose.angle(1, kMediolateral) = 0.9;
    const auto fk = forward_kinematics(model, pose);
    const auto oracle = moving_frame_oracle(model, pose);
    for (std::size_t i = 0; i < fk.size(); ++i) {
      EXPECT_LT((to_mat4(fk[i]) - oracle[i]).cwiseAbs().maxCoeff(), 1e-9) << "link " << i;
    }
  }
}

TEST(ForwardKinematics, GlobalEquivariance) {
  std::mt19937_64 rng(8);
  const auto model = build_chain(stacked_blocks(4));
  for (int trial = 0; trial < 50; ++trial) {
    auto pose = random_pose(model, rng);
    auto bare = pose;
    bare.global = RigidTransform::identity();
    const auto with = forward_kinematics(model, pose);
    const auto without = forward_kinematics(model, bare);
    for (std::size_t i = 0; i < with.size(); ++i) {
      EXPECT_LT((to_mat4(with[i]) - to_mat4(pose.global * without[i])).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(ForwardKinematics, Locality) {
  std::mt19937_64 rng(99);
  const auto model = build_chain(stacked_blocks(4));
  for (int trial = 0; trial < 100; ++trial) {
    const auto pose = random_pose(model, rng);
    const std::size_t j = trial % model.joint_count();
    auto changed = pose;
    for (int a = 0; a < 3; ++a) changed.angle(j, static_cast<Axis>(a)) += 0.05 * (a + 1);
    const auto before = deform_mesh(model, pose);
    const auto after = deform_mesh(model, changed);
    std::size_t untouched = 0;
    for (std::size_t i = 0; i <= j; ++i) untouched += model.links[i].mesh.vertex_count();
    for (std::size_t v = 0; v < untouched; ++v) {
      EXPECT_LE((before.vertices[v] - after.vertices[v]).norm(), 1e-12);
    }
    EXPECT_GT((before.vertices.back() - after.vertices.back()).norm(), 1e-3);
  }
}

TEST(ForwardKinematics, DimensionMismatch) {
  const auto model = build_chain(stacked_blocks(3));
  EXPECT_THROW(forward_kinematics(model, ArticulatedPose::zero(3)), DimensionMismatch);
  EXPECT_THROW(deform_mesh(model, ArticulatedPose::zero(1)), DimensionMismatch);
  EXPECT_THROW(clamp_pose(model, ArticulatedPose::zero(0)), DimensionMismatch);
}

TEST(JointAngles, InvertJointMotionRotation) {
  const auto model = build_chain(stacked_blocks(3));
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.4, 1.4);
  for (int k = 0; k < 300; ++k) {
    const auto& joint = model.joints[k % 2];
    const double ml = u(rng), ap = u(rng), lon = u(rng);
    const Mat3 r = rodrigues(joint.axes[kMediolateral], ml) * rodrigues(joint.axes[kAnteroposterior], ap) *
                   rodrigues(joint.axes[kLongitudinal], lon);
    const auto angles = joint_angles_from_rotation(joint, r);
    EXPECT_NEAR(angles[0], ml, 1e-9);
    EXPECT_NEAR(angles[1], ap, 1e-9);
    EXPECT_NEAR(angles[2], lon, 1e-9);
  }
  EXPECT_EQ(joint_angles_from_rotation(model.joints[0], Mat3::Identity()), (std::array<double, 3>{0, 0, 0}));
}

TEST(DeformMesh, ZeroPoseReproducesInput) {
  const auto model = build_chain(stacked_blocks(4));
  const auto out = deform_mesh(model, ArticulatedPose::zero(3));
  const auto in = model.combined_mesh();
  ASSERT_EQ(out.vertex_count(), in.vertex_count());
  EXPECT_EQ(out.triangles, in.triangles);
  for (std::size_t i = 0; i < in.vertex_count(); ++i) EXPECT_LE((out.vertices[i] - in.vertices[i]).norm(), 1e-9);
}

TEST(DeformMesh, RigidPerVertebraAndMatchesTransforms) {
  std::mt19937_64 rng(31);
  const auto model = build_chain(stacked_blocks(4));
  const auto rest = model.combined_mesh();
  for (int trial = 0; trial < 20; ++trial) {
    const auto pose = random_pose(model, rng);
    const auto out = deform_mesh(model, pose);
    const auto fk = forward_kinematics(model, pose);
    std::size_t begin = 0;
    for (std::size_t i = 0; i < model.link_count(); ++i) {
      const std::size_t end = begin + model.links[i].mesh.vertex_count();
      EXPECT_LE(max_pairwise_distance_change(rest, out, begin, end), 1e-6);
      for (std::size_t v = begin; v < end; ++v) {
        EXPECT_LE((out.vertices[v] - fk[i].apply(rest.vertices[v])).norm(), 1e-9);
      }
      begin = end;
    }
  }
}

TEST(ClampPose, Arithmetic) {
  const auto model = build_chain(stacked_blocks(3));
  auto pose = ArticulatedPose::zero(2);
  pose.angle(0, kMediolateral) = deg(30);
  pose.angle(1, kLongitudinal) = -1.0;
  pose.global = RigidTransform::from_axis_angle(Vec3(0.1, 0.2, 0.3), Vec3(1, 2, 3));
  const auto c = clamp_pose(model, pose);
  EXPECT_NEAR(c.angle(0, kMediolateral), 0.2269, 5e-5);
  EXPECT_DOUBLE_EQ(c.angle(0, kMediolateral), deg(13));
  EXPECT_DOUBLE_EQ(c.angle(1, kLongitudinal), -deg(3));
  EXPECT_EQ(c.global.rotation, pose.global.rotation);
  EXPECT_EQ(c.global.translation, pose.global.translation);
  EXPECT_TRUE(within_limits(model, c));
  EXPECT_FALSE(within_limits(model, pose));
}

TEST(ClampPose, InLimitsAndBoundaryUnchanged) {
  std::mt19937_64 rng(4);
  const auto model = build_chain(stacked_blocks(3));
  const auto inside = random_pose(model, rng);
  EXPECT_EQ(clamp_pose(model, inside), inside);
  auto edge = ArticulatedPose::zero(2);
  for (std::size_t j = 0; j < 2; ++j)
    for (int a = 0; a < 3; ++a)
      edge.angle(j, static_cast<Axis>(a)) = (a % 2 ? model.joints[j].limits[a].min : model.joints[j].limits[a].max);
  EXPECT_EQ(clamp_pose(model, edge), edge);
}

TEST(Serialization, PoseRoundTripIsExact) {
  std::mt19937_64 rng(12);
  const auto model = build_chain(stacked_blocks(4));
  for (int trial = 0; trial < 20; ++trial) {
    const auto pose = random_pose(model, rng);
    const auto text = pose_to_json(pose).dump();
    const auto back = pose_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(back, pose);
    EXPECT_EQ(pose_to_json(back).dump(), text);
  }
}

TEST(Serialization, RejectsNonRotation) {
  auto doc = pose_to_json(ArticulatedPose::zero(1));
  doc["global"]["rotation"][0] = 2.0;
  EXPECT_THROW(pose_from_json(doc), InvalidArgument);
}

TEST(Serialization, ModelRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "spinealign_model_rt";
  std::filesystem::create_directories(dir);
  const auto model = build_chain(stacked_blocks(3));
  save_model(dir / "spine.json", model);
  const auto back = load_model(dir / "spine.json");
  ASSERT_EQ(back.link_count(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.links[i].label, model.links[i].label);
    EXPECT_EQ(back.links[i].mesh.vertices, model.links[i].mesh.vertices);
    EXPECT_EQ(back.links[i].mesh.triangles, model.links[i].mesh.triangles);
  }
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(back.joints[j].position, model.joints[j].position);
    for (int a = 0; a < 3; ++a) {
      EXPECT_EQ(back.joints[j].axes[a], model.joints[j].axes[a]);
      EXPECT_EQ(back.joints[j].limits[a].min, model.joints[j].limits[a].min);
    }
  }
  std::filesystem::remove_all(dir);
}
