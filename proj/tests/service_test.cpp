#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <thread>

#include "spinealign/app/inputs.hpp"
#include "spinealign/app/phantom_case.hpp"
#include "spinealign/geometry/sampling.hpp"
#include "spinealign/labels/propagate.hpp"
#include "spinealign/service/http_service.hpp"
#include "spinealign/service/payload.hpp"
#include "spinealign/service/session.hpp"
#include "test_util.hpp"

// After Eigen: <resolv.h> defines a macro that collides with Eigen internals.
#include <httplib.h>

using namespace spinealign;
using namespace spinealign::service;
using spinealign::testing::deg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kSmallBatch = R"({
  "exposures": [3],
  "trials": 1,
  "seed": 9,
  "phantom": {"scale": 40.0, "gap": 8.0, "voxel_size": 1.0, "jitter": 0.05},
  "scan": {"noise_sigma": 1.0, "point_count": 8000, "camera_distance": 400.0}
})";

struct Case {
  fs::path dir;
  app::PhantomCase files;
  std::vector<app::Landmark> landmarks;
};

const Case& phantom_case() {
  static const Case c = [] {
    Case out;
    out.dir = fs::temp_directory_path() / "spinealign_service_case";
    fs::remove_all(out.dir);
    out.files = app::write_phantom_case(phantom::batch_config_from_json(json::parse(kSmallBatch)), {}, out.dir);
    out.landmarks = app::load_landmarks(out.files.landmarks);
    return out;
  }();
  return c;
}

ServiceOptions small_options(const std::string& name, int hops = 2) {
  ServiceOptions o;
  o.label_dir = fs::temp_directory_path() / ("spinealign_service_" + name);
  fs::remove_all(o.label_dir);
  fs::create_directories(o.label_dir);
  o.optimizer.basinhop_iterations = hops;
  o.optimizer.hop_step = 0.1;
  o.optimizer.metropolis_temperature = 0.01;
  o.optimizer.inner_max_iters = 20;
  o.optimizer.sample_count = 800;
  o.optimizer.smooth_objective = true;
  o.label.sample_count = 8000;
  return o;
}

json create_body() {
  return {{"model", phantom_case().files.model.string()}, {"cloud", phantom_case().files.scene.string()}};
}

json landmark_pairs() {
  json pairs = json::array();
  for (const auto& l : phantom_case().landmarks)
    pairs.push_back({{"mesh", {l.mesh.x(), l.mesh.y(), l.mesh.z()}}, {"scene", {l.scene.x(), l.scene.y(), l.scene.z()}}});
  return {{"pairs", pairs}};
}

int status_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    return e.status();
  }
  return 200;
}

// Reads every event of a job until the done event.
std::vector<json> drain(SessionManager& m, const std::string& id, const std::string& job) {
  std::vector<json> all;
  bool done = false;
  while (!done) {
    auto batch = m.wait_events(id, job, all.size(), std::chrono::milliseconds(200), done);
    all.insert(all.end(), batch.begin(), batch.end());
  }
  return all;
}

void expect_progress_stream(const std::vector<json>& events) {
  ASSERT_GE(events.size(), 2u);
  double best = INFINITY;
  for (std::size_t i = 0; i + 1 < events.size(); ++i) {
    const auto& e = events[i];
    EXPECT_FALSE(e["done"].get<bool>());
    for (const char* key : {"job_id", "iteration", "combined", "corr_ratio", "I", "current", "accepted", "elapsed_ms"})
      EXPECT_TRUE(e.contains(key)) << key;
    EXPECT_LE(e["combined"].get<double>(), best);
    EXPECT_LE(e["combined"].get<double>(), e["current"].get<double>() + 1e-15);
    best = e["combined"].get<double>();
  }
  EXPECT_TRUE(events.back()["done"].get<bool>());
  EXPECT_TRUE(events.back().contains("pose"));
}

}  // namespace

TEST(Session, CreateStateAndGeometry) {
  SessionManager m(small_options("create"));
  const auto st = m.create(create_body());
  const std::string id = st["id"];
  EXPECT_EQ(st["api_version"], kApiVersion);
  EXPECT_EQ(st["job"]["state"], "idle");
  EXPECT_EQ(st["undo_depth"], 0);
  EXPECT_EQ(st["links"].size(), 3u);
  EXPECT_EQ(st["joints"].size(), 2u);
  EXPECT_EQ(st["link_transforms"].size(), 3u);
  EXPECT_EQ(m.list()["sessions"], json::array({id}));

  const auto geo = m.geometry(id);
  const auto scene = app::load_scene(phantom_case().files.scene);
  const auto expect = geometry::voxel_downsample(scene, 2.0);
  EXPECT_EQ(geo["scene"]["count"], expect.size());
  EXPECT_EQ(decode_points(geo["scene"]["positions"].get<std::string>()).size(), expect.size());
  const auto model = app::load_spine(phantom_case().files.model);
  ASSERT_EQ(geo["links"].size(), 3u);
  const auto verts = decode_points(geo["links"][1]["vertices"].get<std::string>());
  ASSERT_EQ(verts.size(), model.links[1].mesh.vertices.size());
  EXPECT_NEAR((verts[0] - model.links[1].mesh.vertices[0]).norm(), 0.0, 1e-4);
  EXPECT_EQ(decode_triangles(geo["links"][1]["triangles"].get<std::string>()), model.links[1].mesh.triangles);
}

TEST(Session, RequestErrors) {
  SessionManager m(small_options("errors"));
  EXPECT_EQ(status_of([&] { m.state("nope"); }), 404);
  EXPECT_EQ(status_of([&] { m.create({{"model", "missing.json"}, {"cloud", "x.ply"}}); }), 400);
  EXPECT_EQ(status_of([&] { m.create({{"model", 3}}); }), 400);
  const std::string id = m.create(create_body())["id"];
  EXPECT_EQ(status_of([&] { m.set_joint(id, {{"joint", 5}, {"axis", 0}, {"angle", 0.1}}); }), 400);
  EXPECT_EQ(status_of([&] { m.set_joint(id, {{"joint", -1}, {"axis", 0}, {"angle", 0.1}}); }), 400);
  EXPECT_EQ(status_of([&] { m.set_joint(id, {{"joint", 0}, {"axis", "sideways"}, {"angle", 0.1}}); }), 400);
  EXPECT_EQ(status_of([&] { m.set_joint(id, {{"joint", 0}, {"axis", 0}}); }), 400);
  EXPECT_EQ(status_of([&] { m.set_global(id, {{"transform", {{"rotation", {1, 0}}}}}); }), 400);
  EXPECT_EQ(status_of([&] { m.coarse_align(id, {{"pairs", json::array()}}); }), 400);
  EXPECT_EQ(status_of([&] { m.undo(id); }), 409);
  EXPECT_EQ(status_of([&] { m.job(id, "j1"); }), 404);
  EXPECT_EQ(status_of([&] { m.save_label(id, {{"name", "../escape.json"}}); }), 400);
  EXPECT_EQ(status_of([&] { m.save_label(id, {{"name", "/abs.json"}}); }), 400);
  EXPECT_EQ(status_of([&] { m.save_label(id, {{"name", "label.txt"}}); }), 400);
  m.remove(id);
  EXPECT_EQ(status_of([&] { m.state(id); }), 404);
}

TEST(Session, SetJointClampsToTheLimit) {
  SessionManager m(small_options("clamp"));
  const std::string id = m.create(create_body())["id"];
  const auto r = m.set_joint(id, {{"joint", 1}, {"axis", "mediolateral"}, {"angle", 1.0}});
  EXPECT_TRUE(r["clamped"].get<bool>());
  EXPECT_DOUBLE_EQ(r["applied_angle"].get<double>(), deg(13));
  EXPECT_DOUBLE_EQ(m.pose(id).angle(1, kinematics::kMediolateral), deg(13));
  const auto ok = m.set_joint(id, {{"joint", 0}, {"axis", 1}, {"angle", deg(-2)}});
  EXPECT_FALSE(ok["clamped"].get<bool>());
  EXPECT_EQ(ok["undo_depth"], 2);
}

TEST(Session, UndoRestoresPosesExactly) {
  auto opts = small_options("undo");
  opts.undo_limit = 3;
  SessionManager m(opts);
  const std::string id = m.create(create_body())["id"];
  m.coarse_align(id, landmark_pairs());
  const auto p0 = m.pose(id);
  const auto s0 = m.state(id);
  m.set_joint(id, {{"joint", 0}, {"axis", 0}, {"angle", 0.1234567}});
  m.set_global(id, {{"transform", kinematics::transform_to_json(RigidTransform::from_axis_angle(
                                      Vec3(0.01, 0.02, -0.03), Vec3(1.5, -2.25, 3.125)))}});
  m.undo(id);
  m.undo(id);
  const auto p1 = m.pose(id);
  EXPECT_EQ(p1.joint_angles, p0.joint_angles);
  EXPECT_EQ(p1.global.rotation, p0.global.rotation);
  EXPECT_EQ(p1.global.translation, p0.global.translation);
  EXPECT_EQ(m.state(id)["objective"], s0["objective"]);

  for (int i = 0; i < 5; ++i) m.set_joint(id, {{"joint", 1}, {"axis", 2}, {"angle", deg(i * 0.5)}});
  EXPECT_EQ(m.state(id)["undo_depth"], 3);
  for (int i = 0; i < 3; ++i) m.undo(id);
  EXPECT_EQ(status_of([&] { m.undo(id); }), 409);
  EXPECT_DOUBLE_EQ(m.pose(id).angle(1, kinematics::kLongitudinal), deg(0.5));
}

TEST(Session, OptimizeStreamsProgressAndBlocksMutation) {
  SessionManager m(small_options("optimize", 40));
  const std::string id = m.create(create_body())["id"];
  m.coarse_align(id, landmark_pairs());
  const std::string job = m.start_optimize(id, json::object())["job_id"];
  EXPECT_EQ(m.state(id)["job"]["state"], "optimizing");
  EXPECT_EQ(status_of([&] { m.set_joint(id, {{"joint", 0}, {"axis", 0}, {"angle", 0.0}}); }), 409);
  EXPECT_EQ(status_of([&] { m.start_optimize(id, json::object()); }), 409);
  EXPECT_EQ(status_of([&] { m.run_icp(id, json::object()); }), 409);
  EXPECT_EQ(status_of([&] { m.undo(id); }), 409);

  // Wait for a few hops, then cancel.
  bool done = false;
  while (m.wait_events(id, job, 3, std::chrono::milliseconds(5000), done).empty() && !done) {
  }
  m.cancel_job(id, job);
  const auto events = drain(m, id, job);
  expect_progress_stream(events);
  EXPECT_TRUE(events.back()["cancelled"].get<bool>());
  EXPECT_LT(events.size(), 40u);
  ASSERT_TRUE(m.wait_idle(id, std::chrono::milliseconds(5000)));
  EXPECT_EQ(m.state(id)["job"]["state"], "idle");
  EXPECT_EQ(kinematics::pose_to_json(m.pose(id)), events.back()["pose"]);
  EXPECT_EQ(m.job(id, job)["done"], true);
  EXPECT_EQ(status_of([&] { m.set_joint(id, {{"joint", 0}, {"axis", 0}, {"angle", 0.0}}); }), 200);
}

TEST(Session, RemoveDuringJobJoinsTheWorker) {
  SessionManager m(small_options("remove", 40));
  const std::string id = m.create(create_body())["id"];
  m.start_optimize(id, json::object());
  m.remove(id);
  EXPECT_EQ(status_of([&] { m.state(id); }), 404);
}

// ---------------------------------------------------------------------------

class HttpFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    options_ = small_options("http");
    sessions_ = std::make_unique<SessionManager>(options_);
    http_ = std::make_unique<HttpService>(*sessions_);
    port_ = http_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { http_->listen(); });
    http_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(120, 0);
  }
  void TearDown() override {
    http_->stop();
    thread_.join();
  }

  std::pair<int, json> call(const std::string& method, const std::string& path, const json& body = nullptr) {
    httplib::Result r;
    const std::string text = body.is_null() ? "" : body.dump();
    if (method == "GET") r = client_->Get(path);
    else if (method == "POST") r = client_->Post(path, text, "application/json");
    else if (method == "PUT") r = client_->Put(path, text, "application/json");
    else r = client_->Delete(path);
    if (!r) throw std::runtime_error("no response for " + path);
    return {r->status, r->body.empty() ? json() : json::parse(r->body)};
  }

  ServiceOptions options_;
  std::unique_ptr<SessionManager> sessions_;
  std::unique_ptr<HttpService> http_;
  std::thread thread_;
  int port_ = 0;
  std::unique_ptr<httplib::Client> client_;
};

TEST_F(HttpFixture, ErrorsAreJson) {
  auto [s1, b1] = call("GET", "/api/v1/sessions/zzz");
  EXPECT_EQ(s1, 404);
  EXPECT_EQ(b1["error"]["status"], 404);
  EXPECT_EQ(b1["error"]["code"], "not_found");
  auto [s2, b2] = call("GET", "/api/v1/nothing-here");
  EXPECT_EQ(s2, 404);
  EXPECT_TRUE(b2.contains("error"));
  auto r = client_->Post("/api/v1/sessions", "{not json", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(json::parse(r->body)["error"]["code"], "bad_json");
  auto [s3, b3] = call("GET", "/api/v1/health");
  EXPECT_EQ(s3, 200);
  EXPECT_EQ(b3["api_version"], kApiVersion);
}

TEST_F(HttpFixture, LabellingWalkthrough) {
  auto [sc, created] = call("POST", "/api/v1/sessions", create_body());
  ASSERT_EQ(sc, 201) << created;
  const std::string base = "/api/v1/sessions/" + created["id"].get<std::string>();

  auto [gc, geo] = call("GET", base + "/geometry");
  ASSERT_EQ(gc, 200);
  EXPECT_GT(geo["scene"]["count"].get<std::size_t>(), 0u);

  auto [cc, coarse] = call("POST", base + "/coarse-align", landmark_pairs());
  ASSERT_EQ(cc, 200) << coarse;
  EXPECT_LT(coarse["rms"].get<double>(), 5.0);

  auto [oc, started] = call("POST", base + "/optimize", {{"config", {{"basinhop_iterations", 3}}}});
  ASSERT_EQ(oc, 202) << started;
  const std::string job = started["job_id"];

  std::string stream;
  auto r = client_->Get(base + "/jobs/" + job + "/events?from=0", [&](const char* data, std::size_t n) {
    stream.append(data, n);
    return true;
  });
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Content-Type"), "application/x-ndjson");
  std::vector<json> events;
  std::istringstream lines(stream);
  for (std::string line; std::getline(lines, line);) events.push_back(json::parse(line));
  expect_progress_stream(events);
  EXPECT_EQ(events.size(), 5u);  // initial minimisation, 3 hops, done
  EXPECT_FALSE(events.back()["cancelled"].get<bool>());

  // Replaying from an offset returns the tail only.
  std::string tail;
  client_->Get(base + "/jobs/" + job + "/events?from=3", [&](const char* data, std::size_t n) {
    tail.append(data, n);
    return true;
  });
  EXPECT_EQ(std::count(tail.begin(), tail.end(), '\n'), 2);

  const auto [jc, job_state] = call("GET", base + "/jobs/" + job);
  EXPECT_EQ(jc, 200);
  EXPECT_EQ(job_state["done"], true);

  // Manual nudge of 2 degrees on the first joint.
  const double ml = sessions_->pose(created["id"]).angle(0, kinematics::kMediolateral);
  auto [jn, nudged] = call("PUT", base + "/joint", {{"joint", 0}, {"axis", "mediolateral"}, {"angle", ml + deg(2)}});
  ASSERT_EQ(jn, 200) << nudged;

  auto [ic, icp] = call("POST", base + "/icp", json::object());
  ASSERT_EQ(ic, 200) << icp;
  EXPECT_GT(icp["fitness"]["fitness"].get<double>(), 0.5);
  EXPECT_EQ(icp["state"]["fitness"], icp["fitness"]);

  auto [lc, saved] = call("POST", base + "/label", {{"name", "case/walkthrough.json"}, {"sequence_id", "walk"}});
  ASSERT_EQ(lc, 201) << saved;
  const fs::path path = saved["path"].get<std::string>();
  EXPECT_EQ(path, options_.label_dir / "case/walkthrough.json");
  const auto label = labels::load_label(path);
  EXPECT_EQ(label.sequence_id, "walk");
  EXPECT_EQ(kinematics::pose_to_json(label.pose), kinematics::pose_to_json(sessions_->pose(created["id"])));
  ASSERT_TRUE(label.frames[0].crop);
  const auto model = app::load_spine(labels::resolve_reference(path.parent_path(), label.model));
  EXPECT_LE(labels::max_stored_crop_distance(label, model, path.parent_path()), label.config.crop_radius);

  auto [uc, undone] = call("POST", base + "/undo");
  EXPECT_EQ(uc, 200);
  EXPECT_EQ(undone["pose"]["joint_angles"], nudged["pose"]["joint_angles"]);

  auto [dc, _] = call("DELETE", base);
  EXPECT_EQ(dc, 204);
  EXPECT_EQ(call("GET", base).first, 404);
}

TEST_F(HttpFixture, MutationDuringJobIsConflict) {
  auto [sc, created] = call("POST", "/api/v1/sessions", create_body());
  ASSERT_EQ(sc, 201);
  const std::string base = "/api/v1/sessions/" + created["id"].get<std::string>();
  auto [oc, started] = call("POST", base + "/optimize", {{"config", {{"basinhop_iterations", 40}}}});
  ASSERT_EQ(oc, 202);
  auto [jc, body] = call("PUT", base + "/joint", {{"joint", 0}, {"axis", 0}, {"angle", 0.01}});
  EXPECT_EQ(jc, 409);
  EXPECT_EQ(body["error"]["code"], "conflict");
  EXPECT_EQ(call("POST", base + "/jobs/" + started["job_id"].get<std::string>() + "/cancel").first, 202);
  ASSERT_TRUE(sessions_->wait_idle(created["id"], std::chrono::milliseconds(10000)));
  EXPECT_EQ(call("PUT", base + "/joint", {{"joint", 0}, {"axis", 0}, {"angle", 0.01}}).first, 200);
}

TEST_F(HttpFixture, JointEditRoundTripIsInteractive) {
  auto [sc, created] = call("POST", "/api/v1/sessions", create_body());
  ASSERT_EQ(sc, 201);
  const std::string base = "/api/v1/sessions/" + created["id"].get<std::string>();
  call("POST", base + "/coarse-align", landmark_pairs());
  double worst_ms = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto start = std::chrono::steady_clock::now();
    auto [status, state] = call("PUT", base + "/joint", {{"joint", i % 2}, {"axis", 0}, {"angle", deg(0.25 * i)}});
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    ASSERT_EQ(status, 200);
    ASSERT_EQ(state["link_transforms"].size(), 3u);
    worst_ms = std::max(worst_ms, ms);
  }
  EXPECT_LT(worst_ms, 200.0);
}
