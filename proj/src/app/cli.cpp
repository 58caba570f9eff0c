#include "spinealign/app/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <csignal>
#include <fstream>
#include <optional>
#include <ostream>

#include <fmt/format.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "spinealign/app/align.hpp"
#include "spinealign/app/phantom_case.hpp"
#include "spinealign/geometry/io.hpp"
#include "spinealign/labels/propagate.hpp"
#include "spinealign/labels/summary.hpp"
#include "spinealign/phantom/batch.hpp"
#include "spinealign/service/http_service.hpp"

namespace spinealign::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "JSON configuration file");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "Seed overriding the configuration");
  cmd->add_option("--out", c.out, out_help);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

// Schema errors from the module parsers become ConfigError with the file name.
template <class F>
auto parse_config(const fs::path& path, F parse) {
  const json doc = read_json_file(path);
  try {
    return parse(doc);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

int cmd_phantom(const Common& c, std::size_t trials, std::ostream& out) {
  auto config = parse_config(c.config, phantom::batch_config_from_json);
  if (c.seed) config.seed = *c.seed;
  if (trials > 0) config.trials = trials;
  try {
    config.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(c.config + ": " + e.what());
  }
  const fs::path dir = c.out.empty() ? fs::path("phantom_out") : fs::path(c.out);
  spdlog::info("phantom batch: {} trials x {} exposures", config.trials, config.exposures.size());
  const auto result = phantom::run_batch(config, [](std::size_t done, std::size_t total) {
    spdlog::info("trial {}/{}", done, total);
  });
  phantom::write_batch_outputs(result, dir);
  out << phantom::summary_csv(result.summaries);
  bool all = true;
  for (const auto& line : phantom::evaluate_acceptance(result)) {
    out << (line.pass ? "PASS " : "FAIL ") << line.name << ": " << line.detail << "\n";
    all = all && line.pass;
  }
  spdlog::info("outputs in {} ({:.1f} s)", dir.string(), result.elapsed_ms / 1000.0);
  return all ? kExitOk : kExitFailure;
}

int cmd_align(const Common& c, const std::string& model_path, const std::string& scene_path,
              const std::string& landmark_path, const std::string& sequence_id, std::size_t exposure,
              std::ostream& out) {
  AlignOptions options;
  if (!c.config.empty()) options = parse_config(c.config, align_options_from_json);
  if (c.seed) apply_seed(options, *c.seed);
  if (!sequence_id.empty()) options.sequence_id = sequence_id;
  if (exposure > 0) options.exposure = exposure;

  const auto model = load_spine(model_path);
  const auto scene = load_scene(scene_path);
  const auto landmarks = load_landmarks(landmark_path);
  const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
  fs::create_directories(dir);
  const std::string model_ref = labels::reference_path(spine_reference(model_path), dir);

  const auto result = run_align(model, model_ref, scene, scene_path, landmarks, options, dir,
                                [](const registration::TracePoint& p) {
                                  spdlog::debug("hop {}: best {:.6f} current {:.6f}", p.iteration, p.combined,
                                                p.current);
                                  return true;
                                });
  const fs::path label_path = dir / (options.sequence_id + ".json");
  labels::save_label(label_path, result.label);
  std::ofstream trace(dir / (options.sequence_id + "_trace.ndjson"));
  registration::write_trace_ndjson(trace, result.optimized.trace);

  json report = {{"label", label_path.generic_string()},
                 {"landmark_rms", result.landmark_rms},
                 {"objective", registration::report_to_json(result.objective)},
                 {"fitness", registration::fitness_to_json(result.label.frames.front().deformed)},
                 {"fitness_rigid", registration::fitness_to_json(result.label.frames.front().rigid)},
                 {"pose", kinematics::pose_to_json(result.pose)}};
  out << report.dump(2) << "\n";
  return kExitOk;
}

int cmd_propagate(const Common& c, const std::string& label_path, const std::string& sequence_path,
                  std::ostream& out) {
  const auto reference = labels::load_label(label_path);
  const fs::path label_dir = fs::path(label_path).parent_path();
  labels::PropagationConfig cfg = reference.config;
  if (!c.config.empty()) cfg = parse_config(c.config, align_options_from_json).label;
  if (c.seed) cfg.sample_seed = *c.seed;

  const auto seq = labels::load_sequence(sequence_path);
  const fs::path model_path = labels::resolve_reference(label_dir, reference.model);
  const auto model = load_spine(model_path);
  const fs::path dir = c.out.empty() ? label_dir : fs::path(c.out);
  fs::create_directories(dir);

  const auto label = labels::propagate_labels(seq, model, labels::reference_path(model_path, dir), reference.pose, cfg, dir);
  const fs::path target = dir / (seq.id + ".json");
  labels::save_label(target, label);
  const std::vector<labels::AlignmentLabel> all{label};
  const std::string csv = labels::summary_rows_csv(labels::summarize(all));
  write_text(dir / (seq.id + "_summary.csv"), csv);
  std::size_t skipped = 0;
  for (const auto& f : label.frames) skipped += f.skipped ? 1 : 0;
  spdlog::info("{}: {} frames labelled, {} skipped", target.string(), label.frames.size() - skipped, skipped);
  out << csv;
  return kExitOk;
}

int cmd_summarize(const Common& c, const std::vector<std::string>& inputs, const std::string& source,
                  std::ostream& out) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".json") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(in);
    }
  }
  std::vector<labels::AlignmentLabel> all;
  for (const auto& f : files) {
    const json doc = read_json_file(f);
    if (!doc.is_object() || !doc.contains("frames")) {
      spdlog::debug("skipping {} (not a label)", f.string());
      continue;
    }
    all.push_back(labels::load_label(f));
  }
  if (all.empty()) throw InvalidArgument("summarize: no label files found");
  const std::string csv = labels::summary_rows_csv(labels::summarize(all), source);
  if (!c.out.empty()) write_text(c.out, csv);
  out << csv;
  return kExitOk;
}

std::atomic<service::HttpService*> g_server{nullptr};

int cmd_serve(const Common& c, const std::string& host, int port, const std::string& label_dir, std::ostream& out) {
  service::ServiceOptions options;
  if (!c.config.empty()) {
    auto align = parse_config(c.config, align_options_from_json);
    if (c.seed) apply_seed(align, *c.seed);
    options.optimizer = align.optimizer;
    options.label = align.label;
    options.icp_threshold = align.icp_threshold;
    options.icp_max_iterations = align.icp_max_iterations;
  } else if (c.seed) {
    options.optimizer.seed = *c.seed;
    options.label.sample_seed = *c.seed + 2;
  }
  options.label_dir = label_dir;
  fs::create_directories(options.label_dir);
  service::SessionManager sessions(options);
  service::HttpService http(sessions);
  const int bound = http.bind(host, port);
  out << "listening on http://" << host << ":" << bound << "/api/v1\n" << std::flush;
  g_server = &http;
  auto previous_int = std::signal(SIGINT, [](int) {
    if (auto* s = g_server.load()) s->stop();
  });
  auto previous_term = std::signal(SIGTERM, [](int) {
    if (auto* s = g_server.load()) s->stop();
  });
  http.listen();
  std::signal(SIGINT, previous_int);
  std::signal(SIGTERM, previous_term);
  g_server = nullptr;
  return kExitOk;
}

int cmd_make_case(const Common& c, const CaseOptions& options, std::ostream& out) {
  auto config = parse_config(c.config, phantom::batch_config_from_json);
  if (c.seed) config.seed = *c.seed;
  const fs::path dir = c.out.empty() ? fs::path("phantom_case") : fs::path(c.out);
  const auto pc = write_phantom_case(config, options, dir);
  out << json{{"model", pc.model.generic_string()},
              {"scene", pc.scene.generic_string()},
              {"landmarks", pc.landmarks.generic_string()},
              {"sequence", pc.sequence.generic_string()},
              {"gt_pose", pc.gt_pose.generic_string()}}
             .dump(2)
      << "\n";
  return kExitOk;
}

spdlog::level::level_enum parse_level(const std::string& name) {
  const auto level = spdlog::level::from_str(name);
  if (level == spdlog::level::off && name != "off") throw ConfigError("unknown log level '" + name + "'");
  return level;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Articulated spine registration to RGB-D point clouds", "spinealign"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  Common c;
  std::size_t trials = 0;
  auto* phantom_cmd = app.add_subcommand("phantom", "Run the synthetic phantom batch");
  add_common(phantom_cmd, c, "Output directory (default phantom_out)", true);
  phantom_cmd->add_option("--trials", trials, "Trials per exposure, overriding the configuration");

  std::string model, scene, landmarks, sequence_id;
  std::size_t exposure = 0;
  auto* align_cmd = app.add_subcommand("align", "Register a spine model to one RGB-D point cloud");
  add_common(align_cmd, c, "Directory for the label and trace (default .)", false);
  align_cmd->add_option("--model", model, "model.json, its directory, or a directory of vertebra meshes")->required();
  align_cmd->add_option("--scene", scene, "Scene point cloud (PLY)")->required();
  align_cmd->add_option("--landmarks", landmarks, "Landmark pairs (JSON)")->required();
  align_cmd->add_option("--sequence-id", sequence_id, "Label name");
  align_cmd->add_option("--exposure", exposure, "Exposed vertebra count recorded in the label");

  std::string label_path, sequence_path;
  auto* propagate_cmd = app.add_subcommand("propagate", "Propagate an aligned label through a sequence");
  add_common(propagate_cmd, c, "Output directory (default: next to the label)", false);
  propagate_cmd->add_option("--label", label_path, "Label holding the aligned pose")->required();
  propagate_cmd->add_option("--sequence", sequence_path, "Sequence manifest (JSON)")->required();

  std::vector<std::string> inputs;
  std::string source = "Clinical";
  auto* summarize_cmd = app.add_subcommand("summarize", "Fitness and RMSE summary over label files");
  add_common(summarize_cmd, c, "CSV file to write", false);
  summarize_cmd->add_option("labels", inputs, "Label files or directories")->required();
  summarize_cmd->add_option("--source", source, "Value of the source column")->capture_default_str();

  std::string host = "127.0.0.1", label_dir = "labels";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP service for the labelling front end");
  add_common(serve_cmd, c, "Unused", false);
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port, "0 picks a free port")->capture_default_str();
  serve_cmd->add_option("--labels", label_dir, "Directory for saved labels")->capture_default_str();

  CaseOptions case_options;
  auto* case_cmd = app.add_subcommand("make-case", "Write one phantom trial as align/propagate inputs");
  add_common(case_cmd, c, "Output directory (default phantom_case)", true);
  case_cmd->add_option("--exposure", case_options.exposure)->capture_default_str();
  case_cmd->add_option("--index", case_options.index, "Trial index")->capture_default_str();
  case_cmd->add_option("--frames", case_options.frames)->capture_default_str();
  case_cmd->add_option("--drift", case_options.drift_per_frame, "Camera drift per frame, mm")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto logger = std::make_shared<spdlog::logger>("spinealign", sink);
  logger->set_pattern("[%H:%M:%S.%e] [%l] %v");
  const auto previous = spdlog::default_logger();
  spdlog::set_default_logger(logger);
  struct Restore {
    std::shared_ptr<spdlog::logger> logger;
    ~Restore() { spdlog::set_default_logger(logger); }
  } restore{previous};

  try {
    spdlog::set_level(parse_level(log_level));
    if (phantom_cmd->parsed()) return cmd_phantom(c, trials, out);
    if (align_cmd->parsed()) return cmd_align(c, model, scene, landmarks, sequence_id, exposure, out);
    if (propagate_cmd->parsed()) return cmd_propagate(c, label_path, sequence_path, out);
    if (summarize_cmd->parsed()) return cmd_summarize(c, inputs, source, out);
    if (serve_cmd->parsed()) return cmd_serve(c, host, port, label_dir, out);
    if (case_cmd->parsed()) return cmd_make_case(c, case_options, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitConfig;
}

}  // namespace spinealign::app
