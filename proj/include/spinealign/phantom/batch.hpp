#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinealign/phantom/phantom.hpp"

namespace spinealign::phantom {

// One JSON file drives a whole batch. Trial k at a given exposure uses seed
// `seed + k` for the phantom, the ground truth, the scan and the optimizer.
struct BatchConfig {
  std::vector<std::size_t> exposures{3, 4};
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  PhantomSpec phantom;          // n_vertebrae and seed are set per trial
  ScanSpec scan;                // exposed, viewpoint and seed are set per trial
  double camera_distance = 400.0;  // mm behind the middle of the spine
  PoseRanges ranges;
  TrialOptions trial;
  registration::OptimizerConfig optimizer;

  void validate() const;
};

nlohmann::json batch_config_to_json(const BatchConfig& c);
// Missing keys keep their defaults; unknown keys and wrong types throw
// InvalidArgument naming the key.
BatchConfig batch_config_from_json(const nlohmann::json& doc);

// Inputs of trial `index` at `exposure`, fully determined by the config.
struct TrialSetup {
  PhantomSpec phantom;
  ScanSpec scan;
  kinematics::ArticulatedPose gt_pose;
  registration::OptimizerConfig optimizer;
};

TrialSetup make_trial_setup(const BatchConfig& config, std::size_t exposure, std::size_t index);

// Fitness/RMSE aggregate for one exposure.
struct ExposureSummary {
  std::size_t exposure = 0;
  std::size_t trials = 0;
  double fitness_rigid_mean = 0.0, fitness_rigid_std = 0.0;
  double fitness_deformed_mean = 0.0, fitness_deformed_std = 0.0;
  double rmse_rigid_mean = 0.0, rmse_rigid_std = 0.0;
  double rmse_deformed_mean = 0.0, rmse_deformed_std = 0.0;
  std::size_t fitness_improved = 0;  // deformed fitness > rigid fitness
  std::size_t rmse_improved = 0;     // deformed RMSE <= rigid RMSE
  std::array<double, 3> median_angle_error{};  // |error| per axis, rad
  double median_translation_error = 0.0;       // mm
};

struct BatchResult {
  std::vector<TrialReport> trials;  // grouped by exposure, then seed
  std::vector<ExposureSummary> summaries;
  std::array<double, 3> median_angle_error{};  // over all trials
  double median_translation_error = 0.0;
  double elapsed_ms = 0.0;
};

std::vector<ExposureSummary> summarize_trials(const std::vector<TrialReport>& trials);

// Called after each finished trial with (done, total); runs on the calling
// thread's team, so it must be thread-safe.
using BatchProgress = std::function<void(std::size_t, std::size_t)>;

// Trials run in parallel over OpenMP threads. A failing trial aborts the
// batch with its error after the other threads finish.
BatchResult run_batch(const BatchConfig& config, const BatchProgress& progress = {});

// trials.csv, summary.csv and trial_<exposure>_<seed>.json under `dir`.
void write_batch_outputs(const BatchResult& result, const std::filesystem::path& dir);

// Pass/fail of the batch against the phantom thresholds: per exposure, the
// deformed path beats the rigid one (fitness strictly, RMSE non-strictly) in
// at least `min_fraction` of trials; the batch finishes within the time
// budget; median per-axis angle error and median translation error over all
// trials stay within bounds.
struct AcceptanceLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct AcceptanceThresholds {
  double min_fraction = 0.8;
  double time_budget_ms = 600000.0;
  double max_median_angle = 0.03490658503988659;  // rad, 2 deg
  double max_median_translation = 2.0;             // mm
};

std::vector<AcceptanceLine> evaluate_acceptance(const BatchResult& result, const AcceptanceThresholds& t = {});

std::string trials_csv(const std::vector<TrialReport>& trials);
std::string summary_csv(const std::vector<ExposureSummary>& summaries);

}  // namespace spinealign::phantom
