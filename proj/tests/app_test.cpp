#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "spinealign/app/align.hpp"
#include "spinealign/app/cli.hpp"
#include "spinealign/app/inputs.hpp"
#include "spinealign/app/phantom_case.hpp"
#include "spinealign/geometry/io.hpp"
#include "spinealign/labels/label.hpp"
#include "spinealign/labels/summary.hpp"
#include "spinealign/service/payload.hpp"
#include "test_util.hpp"

using namespace spinealign;
using namespace spinealign::app;
using spinealign::testing::deg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("spinealign_app_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// A cut-down phantom batch: one trial, fewer scan points, a short search.
const char* kSmallBatch = R"({
  "exposures": [3],
  "trials": 1,
  "seed": 4,
  "phantom": {"scale": 40.0, "gap": 8.0, "voxel_size": 1.0, "jitter": 0.05},
  "scan": {"noise_sigma": 1.0, "point_count": 8000, "camera_distance": 400.0},
  "trial": {"fitness_threshold": 8.0, "fitness_sample": 8000, "icp_max_iterations": 60, "landmark_noise": 1.0},
  "optimizer": {"basinhop_iterations": 2, "hop_step": 0.1, "metropolis_temperature": 0.01,
                "inner_max_iters": 20, "sample_count": 800, "smooth_objective": true}
})";

const char* kSmallAlign = R"({
  "optimizer": {"basinhop_iterations": 2, "hop_step": 0.1, "metropolis_temperature": 0.01,
                "inner_max_iters": 20, "sample_count": 800, "smooth_objective": true},
  "label": {"sample_count": 8000},
  "align": {"articulated": {"mesh_samples": 4000, "scene_samples": 4000}}
})";

phantom::BatchConfig small_batch() { return phantom::batch_config_from_json(json::parse(kSmallBatch)); }

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Shared phantom case with three frames, written once.
const fs::path& case_dir() {
  static const fs::path dir = [] {
    const auto d = scratch("case");
    CaseOptions o;
    o.frames = 3;
    write_phantom_case(small_batch(), o, d / "case");
    write_text(d / "align.json", kSmallAlign);
    write_text(d / "batch.json", kSmallBatch);
    return d;
  }();
  return dir;
}

// Mean vertex displacement between two poses of the same model.
double mean_vertex_error(const kinematics::SpineModel& model, const kinematics::ArticulatedPose& a,
                         const kinematics::ArticulatedPose& b) {
  const auto ma = kinematics::deform_mesh(model, a);
  const auto mb = kinematics::deform_mesh(model, b);
  double sum = 0.0;
  for (std::size_t v = 0; v < ma.vertices.size(); ++v) sum += (ma.vertices[v] - mb.vertices[v]).norm();
  return sum / static_cast<double>(ma.vertices.size());
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(Inputs, LineColumn) {
  const std::string text = "ab\ncd\n\nx";
  EXPECT_EQ(line_column(text, 0), std::make_pair(std::size_t{1}, std::size_t{1}));
  EXPECT_EQ(line_column(text, 4), std::make_pair(std::size_t{2}, std::size_t{2}));
  EXPECT_EQ(line_column(text, 7), std::make_pair(std::size_t{4}, std::size_t{1}));
}

TEST(Inputs, MalformedJsonNamesTheLine) {
  const auto dir = scratch("malformed");
  write_text(dir / "bad.json", "{\n  \"optimizer\": {\n    \"seed\": 1,,\n  }\n}\n");
  try {
    read_json_file(dir / "bad.json");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json:3:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_json_file(dir / "missing.json"), Error);
}

TEST(Inputs, SpineFromMeshDirectory) {
  const auto dir = scratch("meshdir");
  for (int i = 0; i < 3; ++i) {
    const auto m = spinealign::testing::finned_block(Vec3(0, 0, 40.0 * i));
    io::save_mesh_ply(dir / ("v" + std::to_string(i) + ".ply"), m);
  }
  write_text(dir / "notes.txt", "ignored");
  const auto model = load_spine(dir);
  ASSERT_EQ(model.link_count(), 3u);
  EXPECT_EQ(model.joint_count(), 2u);
  EXPECT_EQ(model.links[0].label, "v0");
  EXPECT_NEAR(model.links[2].centroid.z(), 80.0, 1.0);
  EXPECT_EQ(spine_reference(dir), dir);

  kinematics::save_model(dir / "model.json", model);
  EXPECT_EQ(spine_reference(dir), dir / "model.json");
  EXPECT_EQ(load_spine(dir).link_count(), 3u);
  EXPECT_THROW(load_spine(dir / "nope"), Error);
}

TEST(Inputs, SceneNormalsFaceTheCamera) {
  const auto dir = scratch("scene");
  PointCloud c;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) c.positions.emplace_back(i * 2.0, j * 2.0, 300.0);
  io::save_cloud_ply(dir / "plane.ply", c);
  const auto scene = load_scene(dir / "plane.ply");
  ASSERT_TRUE(scene.has_normals());
  for (const auto& n : scene.normals) EXPECT_NEAR(n.z(), -1.0, 1e-9);
}

TEST(Inputs, LandmarksRoundTripAndErrors) {
  std::vector<Landmark> in{{Vec3(1, 2, 3), Vec3(4, 5, 6), 0}, {Vec3(-1, 0, 0.5), Vec3(0, 0, 0), std::nullopt}};
  const auto back = landmarks_from_json(landmarks_to_json(in));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].mesh, in[0].mesh);
  EXPECT_EQ(back[0].scene, in[0].scene);
  EXPECT_EQ(back[0].link, std::optional<std::size_t>(0));
  EXPECT_FALSE(back[1].link);
  EXPECT_EQ(landmarks_from_json(json::parse(R"([{"mesh":[0,0,0],"scene":[1,1,1]}])")).size(), 1u);
  EXPECT_THROW(landmarks_from_json(json::parse(R"({"landmarks":[{"mesh":[0,0],"scene":[1,1,1]}]})")), ConfigError);
  EXPECT_THROW(landmarks_from_json(json::parse(R"({"landmarks":[{"mesh":[0,0,0]}]})")), ConfigError);
  EXPECT_THROW(landmarks_from_json(json::parse(R"(42)")), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Payload, Base64KnownVectors) {
  const std::pair<const char*, const char*> cases[] = {
      {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
      {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, encoded] : cases) {
    EXPECT_EQ(service::base64_encode(plain), encoded);
    EXPECT_EQ(service::base64_decode(encoded), plain);
  }
  EXPECT_THROW(service::base64_decode("Zm9"), InvalidArgument);
  EXPECT_THROW(service::base64_decode("Zm9v!A=="), InvalidArgument);
}

TEST(Payload, PointsAreLittleEndianFloat32) {
  const std::vector<Vec3> pts{Vec3(1.0, -2.0, 0.5)};
  const std::string bytes = service::base64_decode(service::encode_points(pts));
  ASSERT_EQ(bytes.size(), 12u);
  // 1.0f = 0x3f800000, -2.0f = 0xc0000000, 0.5f = 0x3f000000
  const unsigned char expect[12] = {0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0, 0, 0, 0, 0x3f};
  for (int i = 0; i < 12; ++i) EXPECT_EQ(static_cast<unsigned char>(bytes[i]), expect[i]) << i;
}

TEST(Payload, RoundTrips) {
  const auto pts = spinealign::testing::random_points(257, 3);
  const auto back = service::decode_points(service::encode_points(pts));
  ASSERT_EQ(back.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(back[i][k], static_cast<double>(static_cast<float>(pts[i][k])));

  const auto mesh = spinealign::testing::finned_block(Vec3::Zero());
  EXPECT_EQ(service::decode_triangles(service::encode_triangles(mesh.triangles)), mesh.triangles);
  EXPECT_THROW(service::decode_points(service::base64_encode("12345")), InvalidArgument);

  PointCloud c;
  c.positions = pts;
  const auto payload = service::cloud_payload(c);
  EXPECT_EQ(payload["count"], 257);
  EXPECT_FALSE(payload.contains("colors"));
}

// ---------------------------------------------------------------------------

TEST(AlignOptions, JsonRoundTripAndSeed) {
  auto o = align_options_from_json(json::parse(kSmallAlign));
  EXPECT_EQ(o.optimizer.basinhop_iterations, 2);
  EXPECT_EQ(o.label.sample_count, 8000u);
  EXPECT_EQ(o.articulated.mesh_samples, 4000u);
  apply_seed(o, 10);
  EXPECT_EQ(o.optimizer.seed, 10u);
  EXPECT_EQ(o.articulated.seed, 11u);
  EXPECT_EQ(o.label.sample_seed, 12u);
  const auto back = align_options_from_json(align_options_to_json(o));
  EXPECT_EQ(align_options_to_json(back), align_options_to_json(o));
}

TEST(AlignOptions, RejectsUnknownKeysAndTypes) {
  EXPECT_THROW(align_options_from_json(json::parse(R"({"optimiser": {}})")), ConfigError);
  EXPECT_THROW(align_options_from_json(json::parse(R"({"align": {"icp_treshold": 3}})")), ConfigError);
  EXPECT_THROW(align_options_from_json(json::parse(R"({"align": {"icp_threshold": "3"}})")), ConfigError);
  EXPECT_THROW(align_options_from_json(json::parse(R"({"optimizer": {"hop_step": -1}})")), ConfigError);
  EXPECT_THROW(align_options_from_json(json::parse(R"({"label": {"crop_radius": -1}})")), ConfigError);
}

TEST(Align, RecoversPhantomPose) {
  const auto& dir = case_dir();
  const auto model = load_spine(dir / "case/model");
  const auto scene = load_scene(dir / "case/frame_000.ply");
  const auto landmarks = load_landmarks(dir / "case/landmarks.json");
  const auto gt = kinematics::pose_from_json(read_json_file(dir / "case/gt_pose.json"));
  auto options = align_options_from_json(json::parse(kSmallAlign));
  apply_seed(options, 1);
  const auto out = scratch("align_recover");
  const auto result = run_align(model, "model.json", scene, dir / "case/frame_000.ply", landmarks, options, out);

  for (std::size_t j = 0; j < model.joint_count(); ++j)
    for (int a = 0; a < 3; ++a)
      EXPECT_LT(std::abs(result.pose.angle(j, static_cast<kinematics::Axis>(a)) -
                         gt.angle(j, static_cast<kinematics::Axis>(a))),
                deg(3))
          << "joint " << j << " axis " << a;
  EXPECT_LT(mean_vertex_error(model, result.pose, gt), 2.0);
  EXPECT_LT(result.landmark_rms, 5.0);
  ASSERT_EQ(result.label.frames.size(), 1u);
  EXPECT_EQ(result.label.exposure, 3u);
  EXPECT_GT(result.label.frames[0].deformed.fitness, 0.8);
  EXPECT_TRUE(kinematics::within_limits(model, result.pose));
}

TEST(Align, CollinearLandmarksNameTheTriple) {
  const auto& dir = case_dir();
  const auto model = load_spine(dir / "case/model");
  const auto scene = load_scene(dir / "case/frame_000.ply");
  std::vector<Landmark> lm;
  for (int i = 0; i < 4; ++i) lm.push_back({Vec3(0, 0, 10.0 * i), Vec3(5, 0, 10.0 * i), std::nullopt});
  try {
    run_align(model, "m", scene, "s.ply", lm, AlignOptions{}, scratch("collinear"));
    FAIL() << "expected DegenerateGeometry";
  } catch (const DegenerateGeometry& e) {
    EXPECT_NE(std::string(e.what()).find("triple"), std::string::npos) << e.what();
  }
  lm.resize(2);
  EXPECT_THROW(run_align(model, "m", scene, "s.ply", lm, AlignOptions{}, scratch("collinear")), InvalidArgument);
}

// ---------------------------------------------------------------------------

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, kExitConfig);
  EXPECT_EQ(cli({"align"}).code, kExitConfig);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(cli({"--log-level", "loud", "summarize", "x.json"}).code, kExitConfig);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST(Cli, MalformedConfigExitsTwoCitingTheLine) {
  const auto dir = scratch("cli_bad");
  write_text(dir / "cfg.json", "{\n  \"exposures\": [3],\n  \"trials\": 1\n  \"seed\": 2\n}\n");
  const auto run = cli({"phantom", "--config", (dir / "cfg.json").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(run.code, kExitConfig);
  EXPECT_NE(run.err.find("cfg.json:4:"), std::string::npos) << run.err;

  write_text(dir / "cfg2.json", R"({"exposures": [3], "trails": 1})");
  const auto run2 = cli({"phantom", "--config", (dir / "cfg2.json").string()});
  EXPECT_EQ(run2.code, kExitConfig);
  EXPECT_NE(run2.err.find("trails"), std::string::npos) << run2.err;
}

TEST(Cli, AlignIsDeterministic) {
  const auto& dir = case_dir();
  auto run = [&](const std::string& out) {
    return cli({"--log-level", "warn", "align", "--model", (dir / "case/model").string(), "--scene",
                (dir / "case/frame_000.ply").string(), "--landmarks", (dir / "case/landmarks.json").string(),
                "--config", (dir / "align.json").string(), "--seed", "7", "--out", (dir / out).string()});
  };
  const auto a = run("run_a");
  const auto b = run("run_b");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(read_text(dir / "run_a/aligned.json"), read_text(dir / "run_b/aligned.json"));
  // Traces match apart from wall-clock stamps.
  auto trace = [&](const std::string& out) {
    std::istringstream in(read_text(dir / out / "aligned_trace.ndjson"));
    std::vector<json> lines;
    for (std::string line; std::getline(in, line);) {
      auto j = json::parse(line);
      j.erase("elapsed_ms");
      lines.push_back(j);
    }
    return lines;
  };
  EXPECT_EQ(trace("run_a"), trace("run_b"));
  EXPECT_FALSE(trace("run_a").empty());
  const auto report = json::parse(a.out);
  EXPECT_EQ(report["pose"], json::parse(b.out)["pose"]);
  EXPECT_NO_THROW(labels::load_label(dir / "run_a/aligned.json"));
}

TEST(Cli, PropagateAndSummarize) {
  const auto& dir = case_dir();
  const auto align = cli({"--log-level", "warn", "align", "--model", (dir / "case/model").string(), "--scene",
                          (dir / "case/frame_000.ply").string(), "--landmarks",
                          (dir / "case/landmarks.json").string(), "--config", (dir / "align.json").string(),
                          "--out", (dir / "prop_ref").string(), "--sequence-id", "ref"});
  ASSERT_EQ(align.code, 0) << align.err;
  const auto prop = cli({"propagate", "--label", (dir / "prop_ref/ref.json").string(), "--sequence",
                         (dir / "case/sequence.json").string(), "--out", (dir / "prop").string()});
  ASSERT_EQ(prop.code, 0) << prop.err;
  const auto seq = labels::load_sequence(dir / "case/sequence.json");
  const auto label = labels::load_label(dir / "prop" / (seq.id + ".json"));
  ASSERT_EQ(label.frames.size(), 3u);
  EXPECT_EQ(label.pose.joint_angles, labels::load_label(dir / "prop_ref/ref.json").pose.joint_angles);
  for (const auto& f : label.frames) {
    EXPECT_FALSE(f.skipped);
    EXPECT_GT(f.deformed.fitness, 0.8);
  }
  // Camera drift of 0.5 mm per frame along a unit direction.
  const CaseOptions defaults;
  const Vec3 step = defaults.drift_direction.normalized() * defaults.drift_per_frame;
  for (std::size_t k = 1; k < 3; ++k) {
    const Vec3 moved = label.frames[k].deformed.transform.translation - label.frames[0].deformed.transform.translation;
    EXPECT_LT((moved + step * static_cast<double>(k)).norm(), 0.3) << "frame " << k;
  }

  const auto sum = cli({"summarize", (dir / "prop").string(), "--out", (dir / "summary.csv").string()});
  ASSERT_EQ(sum.code, 0) << sum.err;
  EXPECT_EQ(sum.out, read_text(dir / "summary.csv"));
  const std::vector<labels::AlignmentLabel> all{label};
  EXPECT_EQ(sum.out, labels::summary_rows_csv(labels::summarize(all)));
  EXPECT_NE(sum.out.find("Clinical,Total,3,"), std::string::npos) << sum.out;
}

TEST(Cli, PhantomWritesOutputsAndAcceptanceLines) {
  const auto& dir = case_dir();
  const auto run = cli({"--log-level", "warn", "phantom", "--config", (dir / "batch.json").string(), "--out",
                        (dir / "batch_out").string(), "--trials", "2"});
  EXPECT_TRUE(run.code == kExitOk || run.code == kExitFailure) << run.err;
  EXPECT_TRUE(fs::exists(dir / "batch_out/summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "batch_out/trials.csv"));
  EXPECT_NE(run.out.find("directionality, exposure 3"), std::string::npos) << run.out;
  EXPECT_NE(run.out.find("batch time"), std::string::npos);
}
