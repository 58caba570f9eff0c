#include "spinealign/phantom/batch.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "spinealign/error.hpp"
#include "spinealign/geometry/io.hpp"

namespace spinealign::phantom {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

template <typename T>
void read_field(const nlohmann::json& obj, const std::string& section, const char* key, T& field) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(field);
  } catch (const nlohmann::json::exception&) {
    throw InvalidArgument("batch config: '" + section + key + "' has the wrong type");
  }
}

void reject_unknown(const nlohmann::json& obj, const nlohmann::json& known, const std::string& section) {
  if (!obj.is_object()) throw InvalidArgument("batch config: '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!known.contains(key)) throw InvalidArgument("batch config: unknown key '" + section + key + "'");
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

void median_errors(const std::vector<TrialReport>& trials, std::array<double, 3>& angles, double& translation) {
  std::array<std::vector<double>, 3> per_axis;
  std::vector<double> t;
  for (const auto& r : trials) {
    for (std::size_t i = 0; i < r.angle_errors.size(); ++i) per_axis[i % 3].push_back(std::abs(r.angle_errors[i]));
    t.push_back(r.global_translation_error);
  }
  for (int k = 0; k < 3; ++k) angles[k] = median(per_axis[k]);
  translation = median(t);
}

}  // namespace

void BatchConfig::validate() const {
  if (exposures.empty()) throw InvalidArgument("batch config: exposures is empty");
  for (auto e : exposures) {
    if (e < 2) throw InvalidArgument("batch config: exposure must be >= 2");
  }
  if (trials == 0) throw InvalidArgument("batch config: trials must be positive");
  if (!(camera_distance > 0.0)) throw InvalidArgument("batch config: camera_distance must be positive");
  if (!(ranges.ml_min >= 0.0 && ranges.ml_max >= ranges.ml_min && ranges.ap_max >= 0.0 && ranges.lon_max >= 0.0 &&
        ranges.global_rotation_max >= 0.0 && ranges.global_translation_max >= 0.0)) {
    throw InvalidArgument("batch config: invalid pose ranges");
  }
  if (!(trial.fitness_threshold > 0.0) || trial.fitness_sample == 0 || trial.icp_max_iterations <= 0 ||
      !(trial.landmark_noise >= 0.0)) {
    throw InvalidArgument("batch config: invalid trial options");
  }
  PhantomSpec p = phantom;
  p.n_vertebrae = exposures.front();
  p.validate();
  ScanSpec s = scan;
  s.exposed = {0};
  s.validate(1);
  optimizer.validate();
}

nlohmann::json batch_config_to_json(const BatchConfig& c) {
  return {{"exposures", c.exposures},
          {"trials", c.trials},
          {"seed", c.seed},
          {"phantom",
           {{"scale", c.phantom.scale},
            {"gap", c.phantom.gap},
            {"voxel_size", c.phantom.voxel_size},
            {"jitter", c.phantom.jitter}}},
          {"scan",
           {{"noise_sigma", c.scan.noise_sigma},
            {"point_count", c.scan.point_count},
            {"occlusion_fraction", c.scan.occlusion_fraction},
            {"zbuffer", c.scan.zbuffer},
            {"normal_neighbors", c.scan.normal_neighbors},
            {"camera_distance", c.camera_distance}}},
          {"pose_ranges",
           {{"ml_min_deg", c.ranges.ml_min / kDeg},
            {"ml_max_deg", c.ranges.ml_max / kDeg},
            {"ap_max_deg", c.ranges.ap_max / kDeg},
            {"lon_max_deg", c.ranges.lon_max / kDeg},
            {"global_rotation_max_deg", c.ranges.global_rotation_max / kDeg},
            {"global_translation_max", c.ranges.global_translation_max}}},
          {"trial",
           {{"fitness_threshold", c.trial.fitness_threshold},
            {"fitness_sample", c.trial.fitness_sample},
            {"icp_max_iterations", c.trial.icp_max_iterations},
            {"landmark_noise", c.trial.landmark_noise}}},
          {"optimizer", registration::config_to_json(c.optimizer)}};
}

BatchConfig batch_config_from_json(const nlohmann::json& doc) {
  BatchConfig c;
  const auto known = batch_config_to_json(c);
  reject_unknown(doc, known, "");
  read_field(doc, "", "exposures", c.exposures);
  read_field(doc, "", "trials", c.trials);
  read_field(doc, "", "seed", c.seed);

  if (doc.contains("phantom")) {
    const auto& p = doc["phantom"];
    reject_unknown(p, known["phantom"], "phantom.");
    read_field(p, "phantom.", "scale", c.phantom.scale);
    read_field(p, "phantom.", "gap", c.phantom.gap);
    read_field(p, "phantom.", "voxel_size", c.phantom.voxel_size);
    read_field(p, "phantom.", "jitter", c.phantom.jitter);
  }
  if (doc.contains("scan")) {
    const auto& s = doc["scan"];
    reject_unknown(s, known["scan"], "scan.");
    read_field(s, "scan.", "noise_sigma", c.scan.noise_sigma);
    read_field(s, "scan.", "point_count", c.scan.point_count);
    read_field(s, "scan.", "occlusion_fraction", c.scan.occlusion_fraction);
    read_field(s, "scan.", "zbuffer", c.scan.zbuffer);
    read_field(s, "scan.", "normal_neighbors", c.scan.normal_neighbors);
    read_field(s, "scan.", "camera_distance", c.camera_distance);
  }
  if (doc.contains("pose_ranges")) {
    const auto& r = doc["pose_ranges"];
    reject_unknown(r, known["pose_ranges"], "pose_ranges.");
    auto deg = [&](const char* key, double& field) {
      double v = field / kDeg;
      read_field(r, "pose_ranges.", key, v);
      field = v * kDeg;
    };
    deg("ml_min_deg", c.ranges.ml_min);
    deg("ml_max_deg", c.ranges.ml_max);
    deg("ap_max_deg", c.ranges.ap_max);
    deg("lon_max_deg", c.ranges.lon_max);
    deg("global_rotation_max_deg", c.ranges.global_rotation_max);
    read_field(r, "pose_ranges.", "global_translation_max", c.ranges.global_translation_max);
  }
  if (doc.contains("trial")) {
    const auto& t = doc["trial"];
    reject_unknown(t, known["trial"], "trial.");
    read_field(t, "trial.", "fitness_threshold", c.trial.fitness_threshold);
    read_field(t, "trial.", "fitness_sample", c.trial.fitness_sample);
    read_field(t, "trial.", "icp_max_iterations", c.trial.icp_max_iterations);
    read_field(t, "trial.", "landmark_noise", c.trial.landmark_noise);
  }
  if (doc.contains("optimizer")) c.optimizer = registration::config_from_json(doc["optimizer"]);
  c.validate();
  return c;
}

TrialSetup make_trial_setup(const BatchConfig& config, std::size_t exposure, std::size_t index) {
  const std::uint64_t seed = config.seed + index;
  TrialSetup s;
  s.phantom = config.phantom;
  s.phantom.n_vertebrae = exposure;
  s.phantom.seed = seed;
  const auto model = make_phantom(s.phantom);

  std::mt19937_64 rng(seed * 2654435761ULL + exposure);
  s.gt_pose = random_pose(model, config.ranges, rng);

  s.scan = config.scan;
  s.scan.exposed.clear();
  for (std::size_t i = 0; i < exposure; ++i) s.scan.exposed.push_back(i);
  s.scan.viewpoint = s.gt_pose.global.apply(posterior_viewpoint(model, config.camera_distance));
  s.scan.seed = seed;

  s.optimizer = config.optimizer;
  s.optimizer.seed = seed;
  return s;
}

std::vector<ExposureSummary> summarize_trials(const std::vector<TrialReport>& trials) {
  std::vector<std::size_t> exposures;
  for (const auto& t : trials) {
    if (std::find(exposures.begin(), exposures.end(), t.exposure) == exposures.end()) exposures.push_back(t.exposure);
  }
  std::vector<ExposureSummary> out;
  for (auto e : exposures) {
    std::vector<TrialReport> group;
    for (const auto& t : trials)
      if (t.exposure == e) group.push_back(t);
    ExposureSummary s;
    s.exposure = e;
    s.trials = group.size();
    std::vector<double> fr, fd, rr, rd;
    for (const auto& t : group) {
      fr.push_back(t.rigid.fitness);
      fd.push_back(t.deformed.fitness);
      rr.push_back(t.rigid.inlier_rmse);
      rd.push_back(t.deformed.inlier_rmse);
      s.fitness_improved += t.deformed.fitness > t.rigid.fitness;
      s.rmse_improved += t.deformed.inlier_rmse <= t.rigid.inlier_rmse;
    }
    std::tie(s.fitness_rigid_mean, s.fitness_rigid_std) = mean_std(fr);
    std::tie(s.fitness_deformed_mean, s.fitness_deformed_std) = mean_std(fd);
    std::tie(s.rmse_rigid_mean, s.rmse_rigid_std) = mean_std(rr);
    std::tie(s.rmse_deformed_mean, s.rmse_deformed_std) = mean_std(rd);
    median_errors(group, s.median_angle_error, s.median_translation_error);
    out.push_back(s);
  }
  return out;
}

BatchResult run_batch(const BatchConfig& config, const BatchProgress& progress) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t per = config.trials;
  const std::size_t total = per * config.exposures.size();
  BatchResult result;
  result.trials.resize(total);
  std::vector<std::exception_ptr> errors(total);
  std::size_t done = 0;

#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t k = 0; k < total; ++k) {
    try {
      const std::size_t exposure = config.exposures[k / per];
      const auto setup = make_trial_setup(config, exposure, k % per);
      result.trials[k] = run_trial(setup.phantom, setup.scan, setup.gt_pose, setup.optimizer, config.trial);
    } catch (...) {
      errors[k] = std::current_exception();
    }
    std::size_t finished;
#pragma omp atomic capture
    finished = ++done;
    if (progress) {
#pragma omp critical(spinealign_batch_progress)
      progress(finished, total);
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  result.summaries = summarize_trials(result.trials);
  median_errors(result.trials, result.median_angle_error, result.median_translation_error);
  result.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<AcceptanceLine> evaluate_acceptance(const BatchResult& result, const AcceptanceThresholds& t) {
  std::vector<AcceptanceLine> lines;
  for (const auto& s : result.summaries) {
    const double need = t.min_fraction * static_cast<double>(s.trials);
    const bool pass = s.trials > 0 && static_cast<double>(s.fitness_improved) >= need &&
                      static_cast<double>(s.rmse_improved) >= need;
    lines.push_back({fmt::format("directionality, exposure {}", s.exposure), pass,
                     fmt::format("fitness {}/{}, rmse {}/{} (need {:.0f}%)", s.fitness_improved, s.trials,
                                 s.rmse_improved, s.trials, 100.0 * t.min_fraction)});
  }
  lines.push_back({"batch time", result.elapsed_ms <= t.time_budget_ms,
                   fmt::format("{:.1f} s (budget {:.0f} s)", result.elapsed_ms / 1000.0, t.time_budget_ms / 1000.0)});
  const auto& a = result.median_angle_error;
  const bool angles = std::max({a[0], a[1], a[2]}) <= t.max_median_angle;
  lines.push_back({"pose recovery, joint angles", angles && !result.trials.empty(),
                   fmt::format("median |error| ml {:.3f}, ap {:.3f}, lon {:.3f} deg (limit {:.1f})", a[0] / kDeg,
                               a[1] / kDeg, a[2] / kDeg, t.max_median_angle / kDeg)});
  lines.push_back({"pose recovery, global translation",
                   result.median_translation_error <= t.max_median_translation && !result.trials.empty(),
                   fmt::format("median {:.3f} mm (limit {:.1f})", result.median_translation_error,
                               t.max_median_translation)});
  return lines;
}

std::string trials_csv(const std::vector<TrialReport>& trials) {
  std::ostringstream out;
  out << "exposure,seed,fitness_rigid,fitness_deformed,rmse_rigid,rmse_deformed,"
         "median_abs_angle_error_deg,max_abs_angle_error_deg,global_translation_error_mm,"
         "global_rotation_error_deg,elapsed_ms\n";
  for (const auto& t : trials) {
    std::vector<double> abs_err;
    for (double e : t.angle_errors) abs_err.push_back(std::abs(e) / kDeg);
    const double max_err = abs_err.empty() ? 0.0 : *std::max_element(abs_err.begin(), abs_err.end());
    out << fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.4f},{:.4f},{:.4f},{:.4f},{:.1f}\n", t.exposure, t.seed,
                       t.rigid.fitness, t.deformed.fitness, t.rigid.inlier_rmse, t.deformed.inlier_rmse,
                       median(abs_err), max_err, t.global_translation_error, t.global_rotation_error / kDeg,
                       t.elapsed_ms);
  }
  return out.str();
}

std::string summary_csv(const std::vector<ExposureSummary>& summaries) {
  std::ostringstream out;
  out << "source,exposure,trials,fitness_rigid,fitness_rigid_std,fitness_deformed,fitness_deformed_std,"
         "rmse_rigid,rmse_rigid_std,rmse_deformed,rmse_deformed_std,fitness_improved,rmse_improved,"
         "median_ml_error_deg,median_ap_error_deg,median_lon_error_deg,median_translation_error_mm\n";
  for (const auto& s : summaries) {
    out << fmt::format("Phantom,{},{},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},{},{},{:.4f},{:.4f},{:.4f},{:.4f}\n",
                       s.exposure, s.trials, s.fitness_rigid_mean, s.fitness_rigid_std, s.fitness_deformed_mean,
                       s.fitness_deformed_std, s.rmse_rigid_mean, s.rmse_rigid_std, s.rmse_deformed_mean,
                       s.rmse_deformed_std, s.fitness_improved, s.rmse_improved, s.median_angle_error[0] / kDeg,
                       s.median_angle_error[1] / kDeg, s.median_angle_error[2] / kDeg, s.median_translation_error);
  }
  return out.str();
}

void write_batch_outputs(const BatchResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / "trials.csv", trials_csv(result.trials));
  io::write_file_atomic(dir / "summary.csv", summary_csv(result.summaries));
  for (const auto& t : result.trials) {
    io::write_file_atomic(dir / fmt::format("trial_{}_{}.json", t.exposure, t.seed), trial_to_json(t).dump(2) + "\n");
  }
}

}  // namespace spinealign::phantom
