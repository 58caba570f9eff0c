#include "spinealign/labels/label.hpp"

#include <algorithm>
#include <cmath>

#include <openssl/evp.h>

#include "spinealign/error.hpp"
#include "spinealign/geometry/io.hpp"

namespace spinealign::labels {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(io::read_file(path)); }

namespace {

nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument(what + " must be an array of 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

bool finite(const Vec3& v) { return v.allFinite(); }

bool finite(const registration::FitnessReport& r) {
  return std::isfinite(r.fitness) && std::isfinite(r.inlier_rmse) && r.transform.rotation.allFinite() &&
         finite(r.transform.translation);
}

bool ascending(const std::vector<std::size_t>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] <= v[i - 1]) return false;
  return true;
}

template <class F>
auto wrap_json(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(what + ": " + e.what());
  }
}

}  // namespace

// --- sequences -------------------------------------------------------------

void SequenceRecord::validate(bool need_landmarks) const {
  if (id.empty()) throw InvalidArgument("sequence: empty id");
  if (frames.empty()) throw InvalidArgument("sequence '" + id + "': no frames");
  if (reference_frame >= frames.size())
    throw InvalidArgument("sequence '" + id + "': reference frame " + std::to_string(reference_frame) +
                          " is not among its " + std::to_string(frames.size()) + " frames");
  if (exposure == 0) throw InvalidArgument("sequence '" + id + "': exposure must be >= 1");
  for (const auto& l : landmarks)
    if (!finite(l.mesh) || !finite(l.scene)) throw InvalidArgument("sequence '" + id + "': non-finite landmark");
  if (need_landmarks && landmarks.size() < 3)
    throw InvalidArgument("sequence '" + id + "': coarse alignment needs >= 3 landmark pairs, got " +
                          std::to_string(landmarks.size()));
}

SequenceRecord sequence_from_json(const nlohmann::json& doc, const fs::path& base_dir) {
  return wrap_json("sequence manifest", [&] {
    if (doc.value("schema_version", kSequenceSchemaVersion) != kSequenceSchemaVersion)
      throw InvalidArgument("sequence manifest: unsupported schema_version");
    SequenceRecord seq;
    seq.id = doc.at("id").get<std::string>();
    seq.exposure = doc.at("exposure").get<std::size_t>();
    seq.reference_frame = doc.value("reference_frame", std::size_t{0});
    for (const auto& f : doc.at("frames")) {
      fs::path p = f.get<std::string>();
      seq.frames.push_back(p.is_relative() && !base_dir.empty() ? base_dir / p : p);
    }
    if (doc.contains("landmarks")) {
      for (const auto& l : doc.at("landmarks"))
        seq.landmarks.push_back({vec_from(l.at("mesh"), "landmark mesh"), vec_from(l.at("scene"), "landmark scene")});
    }
    seq.validate();
    return seq;
  });
}

nlohmann::json sequence_to_json(const SequenceRecord& seq) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : seq.frames) frames.push_back(f.generic_string());
  nlohmann::json landmarks = nlohmann::json::array();
  for (const auto& l : seq.landmarks) landmarks.push_back({{"mesh", vec_json(l.mesh)}, {"scene", vec_json(l.scene)}});
  return {{"schema_version", kSequenceSchemaVersion}, {"id", seq.id},          {"exposure", seq.exposure},
          {"reference_frame", seq.reference_frame},   {"frames", frames},      {"landmarks", landmarks}};
}

SequenceRecord load_sequence(const fs::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  return sequence_from_json(doc, path.parent_path());
}

void save_sequence(const fs::path& path, const SequenceRecord& seq) {
  seq.validate();
  io::write_file_atomic(path, sequence_to_json(seq).dump(2) + "\n");
}

// --- propagation config ----------------------------------------------------

void PropagationConfig::validate() const {
  if (!(icp_threshold > 0.0)) throw InvalidArgument("icp_threshold must be > 0");
  if (icp_max_iterations < 1) throw InvalidArgument("icp_max_iterations must be >= 1");
  if (sample_count < 3) throw InvalidArgument("sample_count must be >= 3");
  if (!(crop_radius >= 0.0)) throw InvalidArgument("crop_radius must be >= 0");
}

nlohmann::json propagation_to_json(const PropagationConfig& c) {
  return {{"icp_threshold", c.icp_threshold}, {"icp_max_iterations", c.icp_max_iterations},
          {"sample_count", c.sample_count},   {"sample_seed", c.sample_seed},
          {"crop_radius", c.crop_radius},     {"compute_crops", c.compute_crops},
          {"scene_as_source", c.scene_as_source}};
}

PropagationConfig propagation_from_json(const nlohmann::json& doc) {
  return wrap_json("propagation config", [&] {
    if (!doc.is_object()) throw InvalidArgument("propagation config must be an object");
    static const std::vector<std::string> known = {"icp_threshold", "sample_count", "crop_radius",
                                                   "icp_max_iterations", "sample_seed", "compute_crops",
                                                   "scene_as_source"};
    for (const auto& [key, _] : doc.items())
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw InvalidArgument("propagation config: unknown key '" + key + "'");
    PropagationConfig c;
    c.icp_threshold = doc.value("icp_threshold", c.icp_threshold);
    c.icp_max_iterations = doc.value("icp_max_iterations", c.icp_max_iterations);
    c.sample_count = doc.value("sample_count", c.sample_count);
    c.sample_seed = doc.value("sample_seed", c.sample_seed);
    c.crop_radius = doc.value("crop_radius", c.crop_radius);
    c.compute_crops = doc.value("compute_crops", c.compute_crops);
    c.scene_as_source = doc.value("scene_as_source", c.scene_as_source);
    c.validate();
    return c;
  });
}

// --- labels ----------------------------------------------------------------

void AlignmentLabel::validate() const {
  config.validate();
  if (pose.joint_angles.size() % 3 != 0) throw InvalidArgument("label: joint angle count is not a multiple of 3");
  for (double a : pose.joint_angles)
    if (!std::isfinite(a)) throw InvalidArgument("label: non-finite joint angle");
  if (!pose.global.is_valid(1e-6)) throw InvalidArgument("label: global transform is not rigid");
  if (!frames.empty() && frames.front().frame != reference_frame)
    throw InvalidArgument("label: first frame entry must be the reference frame");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (i > 0 && f.frame <= frames[i - 1].frame) throw InvalidArgument("label: frame entries must be ascending");
    if (f.skipped) {
      if (f.skip_reason.empty()) throw InvalidArgument("label: skipped frame without a reason");
      if (i == 0) throw InvalidArgument("label: the reference frame cannot be skipped");
      continue;
    }
    if (!finite(f.deformed) || !finite(f.rigid))
      throw InvalidArgument("label: non-finite fitness report in frame " + std::to_string(f.frame));
    if (f.crop) {
      if (!ascending(f.crop->crop.scene_indices) || !ascending(f.crop->crop.mesh_indices))
        throw InvalidArgument("label: crop indices must be strictly ascending");
      if (!f.crop->crop.mesh_indices.empty() && f.crop->crop.mesh_indices.back() >= config.sample_count)
        throw InvalidArgument("label: crop mesh index beyond the sample");
    }
  }
}

nlohmann::json label_to_json(const AlignmentLabel& label) {
  label.validate();
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : label.frames) {
    nlohmann::json e = {{"frame", f.frame}, {"cloud", {{"path", f.cloud.path}, {"sha256", f.cloud.sha256}}}};
    if (f.skipped) {
      e["status"] = "skipped";
      e["reason"] = f.skip_reason;
    } else {
      e["status"] = "ok";
      e["deformed"] = registration::fitness_to_json(f.deformed);
      e["rigid"] = registration::fitness_to_json(f.rigid);
      if (f.crop) {
        e["crop"] = {{"scene_indices", f.crop->crop.scene_indices},
                     {"mesh_indices", f.crop->crop.mesh_indices},
                     {"scene_file", f.crop->scene_file},
                     {"mesh_file", f.crop->mesh_file}};
      }
    }
    frames.push_back(std::move(e));
  }
  return {{"schema_version", kLabelSchemaVersion},
          {"sequence_id", label.sequence_id},
          {"exposure", label.exposure},
          {"model", label.model},
          {"pose", kinematics::pose_to_json(label.pose)},
          {"reference_frame", label.reference_frame},
          {"propagation", propagation_to_json(label.config)},
          {"frames", frames}};
}

AlignmentLabel label_from_json(const nlohmann::json& doc) {
  return wrap_json("label", [&] {
    if (doc.at("schema_version").get<int>() != kLabelSchemaVersion)
      throw InvalidArgument("label: unsupported schema_version");
    AlignmentLabel label;
    label.sequence_id = doc.at("sequence_id").get<std::string>();
    label.exposure = doc.at("exposure").get<std::size_t>();
    label.model = doc.at("model").get<std::string>();
    label.pose = kinematics::pose_from_json(doc.at("pose"));
    label.reference_frame = doc.at("reference_frame").get<std::size_t>();
    label.config = propagation_from_json(doc.at("propagation"));
    for (const auto& e : doc.at("frames")) {
      FrameLabel f;
      f.frame = e.at("frame").get<std::size_t>();
      f.cloud.path = e.at("cloud").at("path").get<std::string>();
      f.cloud.sha256 = e.at("cloud").at("sha256").get<std::string>();
      const auto status = e.at("status").get<std::string>();
      if (status == "skipped") {
        f.skipped = true;
        f.skip_reason = e.at("reason").get<std::string>();
      } else if (status == "ok") {
        f.deformed = registration::fitness_from_json(e.at("deformed"));
        f.rigid = registration::fitness_from_json(e.at("rigid"));
        if (e.contains("crop")) {
          const auto& c = e.at("crop");
          StoredCrop sc;
          sc.crop.scene_indices = c.at("scene_indices").get<std::vector<std::size_t>>();
          sc.crop.mesh_indices = c.at("mesh_indices").get<std::vector<std::size_t>>();
          sc.scene_file = c.at("scene_file").get<std::string>();
          sc.mesh_file = c.at("mesh_file").get<std::string>();
          f.crop = std::move(sc);
        }
      } else {
        throw InvalidArgument("label: unknown frame status '" + status + "'");
      }
      label.frames.push_back(std::move(f));
    }
    label.validate();
    return label;
  });
}

std::string serialize_label(const AlignmentLabel& label) { return label_to_json(label).dump(2) + "\n"; }

void save_label(const fs::path& path, const AlignmentLabel& label) {
  io::write_file_atomic(path, serialize_label(label));
}

std::string reference_path(const fs::path& file, const fs::path& label_dir) {
  const fs::path abs = fs::absolute(file).lexically_normal();
  if (label_dir.empty()) return abs.generic_string();
  const fs::path rel = abs.lexically_relative(fs::absolute(label_dir).lexically_normal());
  return rel.empty() ? abs.generic_string() : rel.generic_string();
}

fs::path resolve_reference(const fs::path& label_dir, const std::string& recorded) {
  fs::path p = recorded;
  return p.is_relative() ? label_dir / p : p;
}

AlignmentLabel load_label(const fs::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  AlignmentLabel label = label_from_json(doc);
  const fs::path dir = path.parent_path();
  for (const auto& f : label.frames) {
    if (f.skipped) continue;
    const fs::path cloud = resolve_reference(dir, f.cloud.path);
    std::string digest;
    try {
      digest = sha256_file(cloud);
    } catch (const Error& e) {
      throw StaleReference("label " + path.string() + ": frame " + std::to_string(f.frame) + " cloud " +
                           cloud.string() + " is unreadable (" + e.what() + ")");
    }
    if (digest != f.cloud.sha256)
      throw StaleReference("label " + path.string() + ": frame " + std::to_string(f.frame) + " cloud " +
                           cloud.string() + " changed since labelling (sha256 " + digest + ", recorded " +
                           f.cloud.sha256 + ")");
  }
  return label;
}

}  // namespace spinealign::labels
