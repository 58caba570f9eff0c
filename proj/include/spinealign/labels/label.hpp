#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spinealign/kinematics/spine_model.hpp"
#include "spinealign/labels/crop.hpp"
#include "spinealign/registration/icp.hpp"

namespace spinealign::labels {

inline constexpr int kLabelSchemaVersion = 1;
inline constexpr int kSequenceSchemaVersion = 1;

// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct LandmarkPair {
  Vec3 mesh = Vec3::Zero();   // model rest frame
  Vec3 scene = Vec3::Zero();  // reference frame cloud
};

// One recorded sequence: per-frame cloud files in acquisition order.
struct SequenceRecord {
  std::string id;
  std::vector<std::filesystem::path> frames;
  std::size_t reference_frame = 0;  // index into frames
  std::vector<LandmarkPair> landmarks;
  std::size_t exposure = 0;

  // Throws InvalidArgument. Landmarks are only required when
  // `need_landmarks` is set.
  void validate(bool need_landmarks = false) const;
};

// Manifest JSON:
//   {"schema_version": 1, "id": "...", "exposure": 3, "reference_frame": 0,
//    "frames": ["f000.ply", ...], "landmarks": [{"mesh": [x,y,z], "scene": [x,y,z]}]}
// Relative frame paths are resolved against the manifest directory.
SequenceRecord sequence_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
nlohmann::json sequence_to_json(const SequenceRecord& seq);
SequenceRecord load_sequence(const std::filesystem::path& path);
void save_sequence(const std::filesystem::path& path, const SequenceRecord& seq);

struct CloudRef {
  std::string path;    // as recorded; relative paths resolve against the label directory
  std::string sha256;  // of the file bytes
};

struct StoredCrop {
  SceneCrop crop;
  std::string scene_file;  // PLY subset of the frame cloud, empty until exported
  std::string mesh_file;   // PLY subset of the transformed mesh sample
};

struct FrameLabel {
  std::size_t frame = 0;  // index in the sequence
  CloudRef cloud;
  bool skipped = false;
  std::string skip_reason;
  // Transforms map the deformed (resp. rest) model sample into this frame.
  registration::FitnessReport deformed;
  registration::FitnessReport rigid;
  std::optional<StoredCrop> crop;
};

struct PropagationConfig {
  double icp_threshold = 10.0;  // mm
  int icp_max_iterations = 100;
  std::size_t sample_count = 30000;
  std::uint64_t sample_seed = 0;
  double crop_radius = kDefaultCropRadius;
  bool compute_crops = true;
  // Move the frame onto the model sample and invert, instead of moving the
  // sample. Reported fitness and RMSE are those of the model sample either way.
  bool scene_as_source = true;

  void validate() const;
};

nlohmann::json propagation_to_json(const PropagationConfig& c);
PropagationConfig propagation_from_json(const nlohmann::json& doc);

struct AlignmentLabel {
  std::string sequence_id;
  std::size_t exposure = 0;
  std::string model;  // spine model reference in its original pose
  kinematics::ArticulatedPose pose;
  std::size_t reference_frame = 0;
  PropagationConfig config;
  // Reference frame first, then every later frame that was visited.
  std::vector<FrameLabel> frames;

  // Structural checks: frames ascending from the reference, finite numbers,
  // sane crop indices. Throws InvalidArgument.
  void validate() const;
};

nlohmann::json label_to_json(const AlignmentLabel& label);
AlignmentLabel label_from_json(const nlohmann::json& doc);

// Canonical text: two-space indented JSON with sorted keys and shortest
// round-trip number formatting, so save(load(save(x))) reproduces the bytes.
std::string serialize_label(const AlignmentLabel& label);

// Atomic write.
void save_label(const std::filesystem::path& path, const AlignmentLabel& label);

// Parses the label and re-hashes every referenced cloud. A missing file or a
// changed digest throws StaleReference.
AlignmentLabel load_label(const std::filesystem::path& path);

// How a label stored under `label_dir` records `file`: relative to the label
// directory, or absolute when `label_dir` is empty.
std::string reference_path(const std::filesystem::path& file, const std::filesystem::path& label_dir);

// Resolved location of a path recorded in a label stored under `label_dir`.
std::filesystem::path resolve_reference(const std::filesystem::path& label_dir, const std::string& recorded);

}  // namespace spinealign::labels
