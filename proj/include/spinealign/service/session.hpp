#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinealign/error.hpp"
#include "spinealign/kinematics/spine_model.hpp"
#include "spinealign/labels/label.hpp"
#include "spinealign/registration/optimizer.hpp"

namespace spinealign::service {

inline constexpr int kApiVersion = 1;

// Request failure with the HTTP status it maps to.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : Error(message), status_(status), code_(std::move(code)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

struct ServiceOptions {
  std::filesystem::path label_dir = "labels";  // save-label targets live below it
  double voxel_size = 2.0;                     // mm, scene payload downsampling
  std::size_t undo_limit = 100;
  registration::OptimizerConfig optimizer;     // scoring and optimize defaults
  double icp_threshold = 8.0;                  // mm
  int icp_max_iterations = 100;
  labels::PropagationConfig label;
};

enum class JobState { Idle, Optimizing, IcpRunning };
const char* job_state_name(JobState s);

struct Session;
struct Job;

// All sessions of one service process. Sessions are in memory only.
// Every method is thread-safe; pose mutations within a session are
// serialized and rejected with 409 while a job runs.
class SessionManager {
 public:
  explicit SessionManager(ServiceOptions options = {});
  ~SessionManager();
  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  const ServiceOptions& options() const { return options_; }

  // {"model": path, "cloud": path, "voxel_size"?: mm} -> state
  nlohmann::json create(const nlohmann::json& body);
  nlohmann::json list() const;
  nlohmann::json state(const std::string& id) const;
  // Downsampled scene plus rest-pose link meshes.
  nlohmann::json geometry(const std::string& id) const;
  // Cancels a running job first.
  void remove(const std::string& id);

  // {"joint": j, "axis": name or 0..2, "angle": rad}
  nlohmann::json set_joint(const std::string& id, const nlohmann::json& body);
  // {"transform": {"rotation": [9], "translation": [3]}}
  nlohmann::json set_global(const std::string& id, const nlohmann::json& body);
  // {"pairs": [{"mesh": [3], "scene": [3]}, ...]}
  nlohmann::json coarse_align(const std::string& id, const nlohmann::json& body);
  // {"config"?: partial optimizer config} -> {"job_id"}
  nlohmann::json start_optimize(const std::string& id, const nlohmann::json& body);
  nlohmann::json job(const std::string& id, const std::string& job_id) const;
  void cancel_job(const std::string& id, const std::string& job_id);
  // Events with index >= from, waiting up to `timeout` for one to appear.
  // `done` is set once the job has finished and every event was returned.
  std::vector<nlohmann::json> wait_events(const std::string& id, const std::string& job_id, std::size_t from,
                                          std::chrono::milliseconds timeout, bool& done) const;
  // {"threshold"?: mm, "max_iterations"?: n} -> {"fitness", "state"}
  nlohmann::json run_icp(const std::string& id, const nlohmann::json& body);
  nlohmann::json undo(const std::string& id);
  // {"name": "file.json", "sequence_id"?: s, "exposure"?: n} -> {"path", ...}
  nlohmann::json save_label(const std::string& id, const nlohmann::json& body);

  kinematics::ArticulatedPose pose(const std::string& id) const;
  // True once the session has no running job.
  bool wait_idle(const std::string& id, std::chrono::milliseconds timeout) const;

 private:
  std::shared_ptr<Session> find(const std::string& id) const;

  ServiceOptions options_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t next_id_ = 1;
};

}  // namespace spinealign::service
