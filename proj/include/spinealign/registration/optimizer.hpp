#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "spinealign/registration/objective.hpp"

namespace spinealign::registration {

// --- Box-constrained limited-memory quasi-Newton --------------------------

struct BoxProblem {
  std::function<double(std::span<const double>)> value;  // must be thread-safe
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> fd_step;  // forward-difference step per parameter
};

struct LbfgsOptions {
  int max_iterations = 50;
  int memory = 8;
  double gradient_tolerance = 1e-6;  // on the projected gradient, scaled units
  double value_tolerance = 1e-9;     // relative decrease that counts as stalled
};

struct LocalResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  std::size_t evaluations = 0;
};

// Forward differences (backward where the forward step would leave the box).
// Components are evaluated in parallel; the result does not depend on the
// thread count.
std::vector<double> finite_difference_gradient(const BoxProblem& problem, std::span<const double> x, double fx);
std::vector<double> finite_difference_gradient_serial(const BoxProblem& problem, std::span<const double> x, double fx);

// Projected L-BFGS with Armijo backtracking along the projection arc. The
// returned point is inside the box and its value is never above f(x0).
// Throws OptimizerAbort when the objective returns a non-finite value.
LocalResult minimize_box(const BoxProblem& problem, std::span<const double> x0, const LbfgsOptions& options);

// --- Pose optimization ----------------------------------------------------

struct TracePoint {
  int iteration = 0;            // 0 = initial local minimization, then one per hop
  double combined = 1.0;        // best-so-far (non-increasing)
  double corr_ratio = 0.0;      // of the best-so-far pose
  double containment = 1.0;
  double current = 1.0;         // local minimum reached by this hop
  bool accepted = true;
  double elapsed_ms = 0.0;
};

struct OptimizeResult {
  kinematics::ArticulatedPose pose;  // clamped
  ObjectiveReport report;            // of `pose`, same mode as the minimized objective
  std::vector<TracePoint> trace;
  std::size_t evaluations = 0;
  bool cancelled = false;
};

// Called after every trace point; return false to stop early.
using ProgressCallback = std::function<bool(const TracePoint&)>;

// Basin hopping around the box-constrained local minimizer. The pose vector
// is relative to init.global (see PoseCodec); the incumbent starts at init.
OptimizeResult optimize_pose(const ObjectiveContext& context, const kinematics::ArticulatedPose& init,
                             const ProgressCallback& progress = {});

// Convenience form that builds the index and context itself.
OptimizeResult optimize_pose(const kinematics::SpineModel& model, const PointCloud& scene,
                             const kinematics::ArticulatedPose& init, const OptimizerConfig& cfg);

// One JSON object per line: iteration, combined, corr_ratio, I, elapsed_ms.
nlohmann::json trace_point_to_json(const TracePoint& p);
void write_trace_ndjson(std::ostream& out, std::span<const TracePoint> trace);

}  // namespace spinealign::registration
