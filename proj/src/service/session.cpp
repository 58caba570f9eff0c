#include "spinealign/service/session.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <optional>
#include <thread>

#include "spinealign/app/inputs.hpp"
#include "spinealign/geometry/kdtree.hpp"
#include "spinealign/geometry/sampling.hpp"
#include "spinealign/labels/propagate.hpp"
#include "spinealign/registration/icp.hpp"
#include "spinealign/registration/procrustes.hpp"
#include "spinealign/service/payload.hpp"

namespace spinealign::service {

namespace fs = std::filesystem;
using kinematics::ArticulatedPose;
using nlohmann::json;

const char* job_state_name(JobState s) {
  switch (s) {
    case JobState::Idle:
      return "idle";
    case JobState::Optimizing:
      return "optimizing";
    case JobState::IcpRunning:
      return "icp-running";
  }
  return "idle";
}

struct Job {
  std::string id;
  mutable std::mutex mu;
  mutable std::condition_variable cv;
  std::vector<json> events;
  bool done = false;
  std::atomic<bool> cancel{false};
  std::thread worker;
};

struct Session {
  std::string id;
  fs::path model_path;
  fs::path cloud_path;
  kinematics::SpineModel model;
  PointCloud scene;
  geometry::KdTree index;
  PointCloud render;
  double voxel_size = 2.0;
  std::unique_ptr<registration::ObjectiveContext> scorer;

  mutable std::mutex mu;
  mutable std::condition_variable idle_cv;
  ArticulatedPose pose;
  registration::ObjectiveReport objective;
  std::optional<registration::FitnessReport> fitness;
  JobState state = JobState::Idle;
  std::string active_job;
  std::deque<ArticulatedPose> undo;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::size_t next_job = 1;

  ~Session() {
    for (auto& [_, job] : jobs) {
      job->cancel = true;
      if (job->worker.joinable()) job->worker.join();
    }
  }
};

namespace {

[[noreturn]] void bad_request(const std::string& msg) { throw ServiceError(400, "bad_request", msg); }
[[noreturn]] void conflict(const std::string& msg) { throw ServiceError(409, "conflict", msg); }

template <class T>
T field(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key)) bad_request(std::string("missing field '") + key + "'");
  try {
    return body.at(key).get<T>();
  } catch (const json::exception&) {
    bad_request(std::string("field '") + key + "' has the wrong type");
  }
}

template <class T>
T field_or(const json& body, const char* key, T fallback) {
  if (!body.is_object() || !body.contains(key)) return fallback;
  return field<T>(body, key);
}

Vec3 vec_field(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) bad_request(what + " must be an array of 3 numbers");
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    if (!j[k].is_number()) bad_request(what + " must be an array of 3 numbers");
    v[k] = j[k].get<double>();
  }
  if (!v.allFinite()) bad_request(what + " is not finite");
  return v;
}

void require_idle(const Session& s) {
  if (s.state != JobState::Idle)
    conflict("session " + s.id + " is busy (" + job_state_name(s.state) + " job " + s.active_job + ")");
}

// Caller holds s.mu.
void commit(Session& s, const ArticulatedPose& next, std::size_t undo_limit) {
  s.undo.push_back(s.pose);
  while (s.undo.size() > undo_limit) s.undo.pop_front();
  s.pose = next;
  s.objective = s.scorer->evaluate_hard(next);
}

// Caller holds s.mu.
json state_json(const Session& s) {
  json transforms = json::array();
  for (const auto& t : kinematics::forward_kinematics(s.model, s.pose)) transforms.push_back(kinematics::transform_to_json(t));
  json joints = json::array();
  for (const auto& j : s.model.joints) {
    json limits;
    for (int a = 0; a < 3; ++a) limits[kinematics::kAxisNames[a]] = {j.limits[a].min, j.limits[a].max};
    joints.push_back({{"limits", limits}});
  }
  json links = json::array();
  for (const auto& l : s.model.links) links.push_back(l.label);
  return {{"api_version", kApiVersion},
          {"id", s.id},
          {"model", s.model_path.generic_string()},
          {"cloud", s.cloud_path.generic_string()},
          {"job", {{"state", job_state_name(s.state)}, {"id", s.active_job.empty() ? json(nullptr) : json(s.active_job)}}},
          {"pose", kinematics::pose_to_json(s.pose)},
          {"link_transforms", transforms},
          {"objective", registration::report_to_json(s.objective)},
          {"fitness", s.fitness ? registration::fitness_to_json(*s.fitness) : json(nullptr)},
          {"undo_depth", s.undo.size()},
          {"joints", joints},
          {"links", links}};
}

json progress_event(const std::string& job_id, const registration::TracePoint& p) {
  return {{"job_id", job_id},       {"iteration", p.iteration}, {"combined", p.combined},
          {"corr_ratio", p.corr_ratio}, {"I", p.containment},     {"current", p.current},
          {"accepted", p.accepted}, {"elapsed_ms", p.elapsed_ms}, {"done", false}};
}

void publish(Job& job, json event, bool last) {
  {
    std::lock_guard lock(job.mu);
    job.events.push_back(std::move(event));
    if (last) job.done = true;
  }
  job.cv.notify_all();
}

bool safe_label_name(const std::string& name) {
  const fs::path p(name);
  if (name.empty() || p.is_absolute() || p.extension() != ".json") return false;
  for (const auto& part : p)
    if (part == ".." || part == ".") return false;
  return true;
}

}  // namespace

SessionManager::SessionManager(ServiceOptions options) : options_(std::move(options)) {
  options_.optimizer.validate();
  options_.label.validate();
  if (!(options_.voxel_size > 0.0)) throw InvalidArgument("service: voxel_size must be > 0");
  if (options_.undo_limit == 0) throw InvalidArgument("service: undo_limit must be >= 1");
}

SessionManager::~SessionManager() {
  std::unique_lock lock(mu_);
  auto sessions = std::move(sessions_);
  lock.unlock();
  sessions.clear();  // joins job threads
}

std::shared_ptr<Session> SessionManager::find(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "not_found", "unknown session '" + id + "'");
  return it->second;
}

json SessionManager::create(const json& body) {
  const fs::path model_path = field<std::string>(body, "model");
  const fs::path cloud_path = field<std::string>(body, "cloud");
  const double voxel = field_or<double>(body, "voxel_size", options_.voxel_size);
  if (!(voxel > 0.0)) bad_request("voxel_size must be > 0");

  auto s = std::make_shared<Session>();
  try {
    s->model = app::load_spine(model_path);
    s->scene = app::load_scene(cloud_path);
  } catch (const Error& e) {
    bad_request(e.what());
  }
  s->model_path = app::spine_reference(model_path);
  s->cloud_path = cloud_path;
  s->voxel_size = voxel;
  s->index = geometry::KdTree(s->scene.positions);
  s->render = geometry::voxel_downsample(s->scene, voxel);
  s->scorer = std::make_unique<registration::ObjectiveContext>(s->model, s->scene, s->index, options_.optimizer,
                                                               RigidTransform::identity());
  s->pose = ArticulatedPose::zero(s->model.joint_count());
  s->objective = s->scorer->evaluate_hard(s->pose);

  std::unique_lock lock(mu_);
  s->id = "s" + std::to_string(next_id_++);
  sessions_[s->id] = s;
  lock.unlock();
  std::lock_guard slock(s->mu);
  return state_json(*s);
}

json SessionManager::list() const {
  std::shared_lock lock(mu_);
  json ids = json::array();
  for (const auto& [id, _] : sessions_) ids.push_back(id);
  return {{"api_version", kApiVersion}, {"sessions", ids}};
}

json SessionManager::state(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return state_json(*s);
}

json SessionManager::geometry(const std::string& id) const {
  auto s = find(id);
  json links = json::array();
  for (const auto& l : s->model.links) {
    links.push_back({{"label", l.label},
                     {"vertex_count", l.mesh.vertex_count()},
                     {"vertices", encode_points(l.mesh.vertices)},
                     {"triangle_count", l.mesh.triangle_count()},
                     {"triangles", encode_triangles(l.mesh.triangles)}});
  }
  json scene = cloud_payload(s->render);
  scene["voxel_size"] = s->voxel_size;
  scene["source_count"] = s->scene.size();
  return {{"api_version", kApiVersion}, {"id", s->id}, {"scene", scene}, {"links", links}};
}

void SessionManager::remove(const std::string& id) {
  std::shared_ptr<Session> s;
  {
    std::unique_lock lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "not_found", "unknown session '" + id + "'");
    s = std::move(it->second);
    sessions_.erase(it);
  }
  std::vector<std::shared_ptr<Job>> jobs;
  {
    std::lock_guard lock(s->mu);
    for (auto& [_, j] : s->jobs) jobs.push_back(j);
  }
  for (auto& j : jobs) {
    j->cancel = true;
    if (j->worker.joinable()) j->worker.join();
  }
}

json SessionManager::set_joint(const std::string& id, const json& body) {
  auto s = find(id);
  const auto joint = field<long long>(body, "joint");
  const double angle = field<double>(body, "angle");
  if (!std::isfinite(angle)) bad_request("angle must be finite");
  int axis = -1;
  if (!body.contains("axis")) bad_request("missing field 'axis'");
  if (body["axis"].is_string()) {
    const auto name = body["axis"].get<std::string>();
    for (int a = 0; a < 3; ++a)
      if (name == kinematics::kAxisNames[a]) axis = a;
  } else if (body["axis"].is_number_integer()) {
    axis = body["axis"].get<int>();
  }
  if (axis < 0 || axis > 2) bad_request("axis must be one of mediolateral, anteroposterior, longitudinal or 0..2");

  std::lock_guard lock(s->mu);
  if (joint < 0 || static_cast<std::size_t>(joint) >= s->model.joint_count())
    bad_request("invalid joint index " + std::to_string(joint) + " (model has " +
                std::to_string(s->model.joint_count()) + " joints)");
  require_idle(*s);
  ArticulatedPose next = s->pose;
  next.angle(static_cast<std::size_t>(joint), static_cast<kinematics::Axis>(axis)) = angle;
  next = kinematics::clamp_pose(s->model, next);
  const double applied = next.angle(static_cast<std::size_t>(joint), static_cast<kinematics::Axis>(axis));
  commit(*s, next, options_.undo_limit);
  json out = state_json(*s);
  out["requested_angle"] = angle;
  out["applied_angle"] = applied;
  out["clamped"] = applied != angle;
  return out;
}

json SessionManager::set_global(const std::string& id, const json& body) {
  auto s = find(id);
  if (!body.is_object() || !body.contains("transform")) bad_request("missing field 'transform'");
  RigidTransform t;
  try {
    t = kinematics::transform_from_json(body.at("transform"));
  } catch (const json::exception& e) {
    bad_request(std::string("transform: ") + e.what());
  } catch (const InvalidArgument& e) {
    bad_request(std::string("transform: ") + e.what());
  }
  if (!t.rotation.allFinite() || !t.translation.allFinite()) bad_request("transform is not finite");
  std::lock_guard lock(s->mu);
  require_idle(*s);
  ArticulatedPose next = s->pose;
  next.global = t;
  commit(*s, next, options_.undo_limit);
  return state_json(*s);
}

json SessionManager::coarse_align(const std::string& id, const json& body) {
  auto s = find(id);
  if (!body.is_object() || !body.contains("pairs") || !body["pairs"].is_array()) bad_request("missing array 'pairs'");
  std::vector<Vec3> pre, intra;
  for (std::size_t i = 0; i < body["pairs"].size(); ++i) {
    const auto& p = body["pairs"][i];
    if (!p.is_object() || !p.contains("mesh") || !p.contains("scene"))
      bad_request("pair " + std::to_string(i) + " needs 'mesh' and 'scene'");
    pre.push_back(vec_field(p["mesh"], "pair " + std::to_string(i) + " mesh"));
    intra.push_back(vec_field(p["scene"], "pair " + std::to_string(i) + " scene"));
  }
  RigidTransform t;
  try {
    t = registration::coarse_align_landmarks(pre, intra);
  } catch (const Error& e) {
    bad_request(e.what());
  }
  std::lock_guard lock(s->mu);
  require_idle(*s);
  ArticulatedPose next = s->pose;
  next.global = t;
  commit(*s, next, options_.undo_limit);
  return {{"transform", kinematics::transform_to_json(t)},
          {"rms", registration::landmark_rms(t, pre, intra)},
          {"state", state_json(*s)}};
}

json SessionManager::start_optimize(const std::string& id, const json& body) {
  auto s = find(id);
  registration::OptimizerConfig cfg = options_.optimizer;
  if (body.is_object() && body.contains("config")) {
    json merged = registration::config_to_json(options_.optimizer);
    if (!body["config"].is_object()) bad_request("'config' must be an object");
    merged.update(body["config"]);
    try {
      cfg = registration::config_from_json(merged);
    } catch (const std::exception& e) {
      bad_request(std::string("config: ") + e.what());
    }
  }

  std::lock_guard lock(s->mu);
  require_idle(*s);
  auto job = std::make_shared<Job>();
  job->id = "j" + std::to_string(s->next_job++);
  s->jobs[job->id] = job;
  s->state = JobState::Optimizing;
  s->active_job = job->id;
  const ArticulatedPose init = s->pose;
  Session* raw = s.get();
  const std::size_t undo_limit = options_.undo_limit;

  job->worker = std::thread([raw, job, cfg, init, undo_limit] {
    json final_event = {{"job_id", job->id}, {"done", true}};
    try {
      const registration::ObjectiveContext context(raw->model, raw->scene, raw->index, cfg, init.global);
      const auto result = registration::optimize_pose(context, init, [&](const registration::TracePoint& p) {
        publish(*job, progress_event(job->id, p), false);
        return !job->cancel.load();
      });
      std::lock_guard lock(raw->mu);
      // The incumbent is kept when the job is cancelled.
      commit(*raw, result.pose, undo_limit);
      final_event["cancelled"] = result.cancelled;
      final_event["evaluations"] = result.evaluations;
      final_event["iteration"] = result.trace.empty() ? 0 : result.trace.back().iteration;
      final_event["combined"] = result.report.combined;
      final_event["corr_ratio"] = result.report.corr_ratio;
      final_event["I"] = result.report.containment;
      final_event["elapsed_ms"] = result.trace.empty() ? 0.0 : result.trace.back().elapsed_ms;
      final_event["pose"] = kinematics::pose_to_json(raw->pose);
      final_event["objective"] = registration::report_to_json(raw->objective);
      raw->state = JobState::Idle;
      raw->active_job.clear();
    } catch (const std::exception& e) {
      std::lock_guard lock(raw->mu);
      final_event["error"] = e.what();
      raw->state = JobState::Idle;
      raw->active_job.clear();
    }
    raw->idle_cv.notify_all();
    publish(*job, std::move(final_event), true);
  });
  return {{"job_id", job->id}, {"session", s->id}};
}

json SessionManager::job(const std::string& id, const std::string& job_id) const {
  auto s = find(id);
  std::shared_ptr<Job> j;
  {
    std::lock_guard lock(s->mu);
    auto it = s->jobs.find(job_id);
    if (it == s->jobs.end()) throw ServiceError(404, "not_found", "unknown job '" + job_id + "'");
    j = it->second;
  }
  std::lock_guard lock(j->mu);
  json out = {{"job_id", j->id}, {"done", j->done}, {"events", j->events.size()}};
  if (!j->events.empty()) out["last"] = j->events.back();
  return out;
}

void SessionManager::cancel_job(const std::string& id, const std::string& job_id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  auto it = s->jobs.find(job_id);
  if (it == s->jobs.end()) throw ServiceError(404, "not_found", "unknown job '" + job_id + "'");
  it->second->cancel = true;
}

std::vector<json> SessionManager::wait_events(const std::string& id, const std::string& job_id, std::size_t from,
                                              std::chrono::milliseconds timeout, bool& done) const {
  auto s = find(id);
  std::shared_ptr<Job> j;
  {
    std::lock_guard lock(s->mu);
    auto it = s->jobs.find(job_id);
    if (it == s->jobs.end()) throw ServiceError(404, "not_found", "unknown job '" + job_id + "'");
    j = it->second;
  }
  std::unique_lock lock(j->mu);
  j->cv.wait_for(lock, timeout, [&] { return j->events.size() > from || j->done; });
  std::vector<json> out;
  for (std::size_t i = from; i < j->events.size(); ++i) out.push_back(j->events[i]);
  done = j->done;
  return out;
}

json SessionManager::run_icp(const std::string& id, const json& body) {
  auto s = find(id);
  const double thr = field_or<double>(body, "threshold", options_.icp_threshold);
  const int iters = field_or<int>(body, "max_iterations", options_.icp_max_iterations);
  if (!(thr > 0.0) || iters < 1) bad_request("threshold must be > 0 and max_iterations >= 1");

  ArticulatedPose start;
  {
    std::lock_guard lock(s->mu);
    require_idle(*s);
    s->state = JobState::IcpRunning;
    s->active_job = "icp";
    start = s->pose;
  }
  registration::FitnessReport report;
  try {
    const PointCloud local = labels::deformed_sample(s->model, start, options_.label);
    const geometry::KdTree local_index(local.positions);
    const auto icp = registration::icp_refine_reverse(s->scene.positions, local_index, thr, iters, start.global);
    report = registration::evaluate_alignment(transform_points(icp.transform, local.positions), s->index, thr);
    report.transform = icp.transform;
    report.iterations = icp.iterations;
  } catch (...) {
    std::lock_guard lock(s->mu);
    s->state = JobState::Idle;
    s->active_job.clear();
    s->idle_cv.notify_all();
    throw;
  }
  std::lock_guard lock(s->mu);
  ArticulatedPose next = s->pose;
  next.global = report.transform;
  commit(*s, next, options_.undo_limit);
  s->fitness = report;
  s->state = JobState::Idle;
  s->active_job.clear();
  s->idle_cv.notify_all();
  return {{"fitness", registration::fitness_to_json(report)}, {"state", state_json(*s)}};
}

json SessionManager::undo(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  require_idle(*s);
  if (s->undo.empty()) conflict("nothing to undo");
  s->pose = s->undo.back();
  s->undo.pop_back();
  s->objective = s->scorer->evaluate_hard(s->pose);
  return state_json(*s);
}

json SessionManager::save_label(const std::string& id, const json& body) {
  auto s = find(id);
  const auto name = field<std::string>(body, "name");
  if (!safe_label_name(name)) bad_request("label name must be a relative path ending in .json without '..'");
  ArticulatedPose pose;
  {
    std::lock_guard lock(s->mu);
    require_idle(*s);
    pose = s->pose;
  }
  const fs::path target = options_.label_dir / name;
  labels::SequenceRecord seq;
  seq.id = field_or<std::string>(body, "sequence_id", "session-" + s->id);
  seq.frames = {s->cloud_path};
  seq.exposure = field_or<std::size_t>(body, "exposure", s->model.link_count());
  try {
    const auto label = labels::propagate_labels(seq, s->model, labels::reference_path(s->model_path, target.parent_path()),
                                                pose, options_.label, target.parent_path());
    labels::save_label(target, label);
    return {{"path", target.generic_string()},
            {"frames", label.frames.size()},
            {"fitness", registration::fitness_to_json(label.frames.front().deformed)}};
  } catch (const InvalidArgument& e) {
    bad_request(e.what());
  }
}

kinematics::ArticulatedPose SessionManager::pose(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return s->pose;
}

bool SessionManager::wait_idle(const std::string& id, std::chrono::milliseconds timeout) const {
  auto s = find(id);
  std::unique_lock lock(s->mu);
  return s->idle_cv.wait_for(lock, timeout, [&] { return s->state == JobState::Idle; });
}

}  // namespace spinealign::service
