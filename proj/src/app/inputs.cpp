#include "spinealign/app/inputs.hpp"

#include <algorithm>

#include "spinealign/geometry/analysis.hpp"
#include "spinealign/geometry/io.hpp"

namespace spinealign::app {

namespace fs = std::filesystem;

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < offset; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

nlohmann::json read_json_file(const fs::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // nlohmann reports the offset one past the offending character.
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    std::string msg = e.what();
    if (auto pos = msg.find(": "); pos != std::string::npos) msg = msg.substr(pos + 2);
    throw ConfigError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": malformed JSON at line " + std::to_string(line) + ": " + msg);
  }
}

fs::path spine_reference(const fs::path& path) {
  if (fs::is_directory(path) && fs::exists(path / "model.json")) return path / "model.json";
  return path;
}

kinematics::SpineModel load_spine(const fs::path& path) {
  const fs::path ref = spine_reference(path);
  if (!fs::is_directory(ref)) return kinematics::load_model(ref);

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(ref)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".ply" || ext == ".obj")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw InvalidArgument(ref.string() + ": need at least two vertebra meshes");
  std::vector<std::pair<std::string, TriMesh>> vertebrae;
  for (const auto& f : files) vertebrae.emplace_back(f.stem().string(), io::load_mesh(f));
  return kinematics::build_chain(vertebrae);
}

PointCloud load_scene(const fs::path& path, std::size_t normal_neighbors) {
  PointCloud cloud = io::load_cloud(path);
  if (cloud.empty()) throw InvalidArgument(path.string() + ": cloud has no points");
  if (!cloud.has_normals()) cloud = geometry::estimate_normals(cloud, normal_neighbors, Vec3::Zero());
  return cloud;
}

namespace {

Vec3 vec_from(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(what + " must be an array of 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

std::vector<Landmark> landmarks_from_json(const nlohmann::json& doc) {
  try {
    std::vector<Landmark> out;
    const auto& list = doc.is_array() ? doc : doc.at("landmarks");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& l = list[i];
      const std::string where = "landmark " + std::to_string(i);
      Landmark lm;
      lm.mesh = vec_from(l.at("mesh"), where + " mesh");
      lm.scene = vec_from(l.at("scene"), where + " scene");
      if (l.contains("link")) lm.link = l.at("link").get<std::size_t>();
      if (!lm.mesh.allFinite() || !lm.scene.allFinite()) throw ConfigError(where + " is not finite");
      out.push_back(lm);
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("landmarks: ") + e.what());
  }
}

nlohmann::json landmarks_to_json(std::span<const Landmark> landmarks) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& l : landmarks) {
    nlohmann::json e = {{"mesh", {l.mesh.x(), l.mesh.y(), l.mesh.z()}},
                        {"scene", {l.scene.x(), l.scene.y(), l.scene.z()}}};
    if (l.link) e["link"] = *l.link;
    list.push_back(std::move(e));
  }
  return {{"landmarks", list}};
}

std::vector<Landmark> load_landmarks(const fs::path& path) {
  try {
    return landmarks_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace spinealign::app
