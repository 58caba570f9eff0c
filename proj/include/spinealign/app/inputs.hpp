#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinealign/error.hpp"
#include "spinealign/kinematics/spine_model.hpp"

namespace spinealign::app {

// Malformed or schema-violating configuration. The CLI maps it to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Parses a JSON file. Syntax errors become ConfigError naming the file,
// line and column.
nlohmann::json read_json_file(const std::filesystem::path& path);

// 1-based line and column of a byte offset.
std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t offset);

// Spine model from a model JSON file, a directory holding model.json, or a
// directory of per-vertebra meshes (.ply/.obj) whose names sort caudal to
// rostral.
kinematics::SpineModel load_spine(const std::filesystem::path& path);

// The file a label should reference for `path` as accepted by load_spine.
std::filesystem::path spine_reference(const std::filesystem::path& path);

// PLY cloud. Missing normals are estimated and turned toward the origin,
// which is the camera centre for clouds in camera coordinates.
PointCloud load_scene(const std::filesystem::path& path, std::size_t normal_neighbors = 30);

struct Landmark {
  Vec3 mesh = Vec3::Zero();
  Vec3 scene = Vec3::Zero();
  std::optional<std::size_t> link;  // vertebra the mesh point lies on
};

// {"landmarks": [{"mesh": [x,y,z], "scene": [x,y,z], "link": 0}, ...]}; schema
// violations throw ConfigError.
// "link" is optional.
std::vector<Landmark> landmarks_from_json(const nlohmann::json& doc);
nlohmann::json landmarks_to_json(std::span<const Landmark> landmarks);
std::vector<Landmark> load_landmarks(const std::filesystem::path& path);

}  // namespace spinealign::app
