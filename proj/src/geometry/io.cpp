#include "spinealign/geometry/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "spinealign/error.hpp"

namespace spinealign::io {

namespace {

enum class Scalar { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };
enum class Format { Ascii, BinaryLE, BinaryBE };

std::optional<Scalar> scalar_from_name(const std::string& s) {
  if (s == "char" || s == "int8") return Scalar::Int8;
  if (s == "uchar" || s == "uint8") return Scalar::UInt8;
  if (s == "short" || s == "int16") return Scalar::Int16;
  if (s == "ushort" || s == "uint16") return Scalar::UInt16;
  if (s == "int" || s == "int32") return Scalar::Int32;
  if (s == "uint" || s == "uint32") return Scalar::UInt32;
  if (s == "float" || s == "float32") return Scalar::Float32;
  if (s == "double" || s == "float64") return Scalar::Float64;
  return std::nullopt;
}

std::size_t scalar_size(Scalar s) {
  switch (s) {
    case Scalar::Int8:
    case Scalar::UInt8: return 1;
    case Scalar::Int16:
    case Scalar::UInt16: return 2;
    case Scalar::Int32:
    case Scalar::UInt32:
    case Scalar::Float32: return 4;
    case Scalar::Float64: return 8;
  }
  return 0;
}

bool is_integral(Scalar s) { return s != Scalar::Float32 && s != Scalar::Float64; }

struct Property {
  std::string name;
  Scalar type = Scalar::Float32;
  bool is_list = false;
  Scalar count_type = Scalar::UInt8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> props;
};

struct Header {
  Format format = Format::Ascii;
  std::vector<Element> elements;
  std::size_t body_offset = 0;
};

Header parse_header(const std::string& bytes) {
  if (bytes.rfind("ply", 0) != 0) throw ParseError("not a PLY file: missing 'ply' magic", 0);
  Header h;
  std::size_t pos = 0;
  bool have_format = false;
  while (true) {
    const auto eol = bytes.find('\n', pos);
    if (eol == std::string::npos) throw ParseError("PLY header is not terminated by end_header", pos);
    std::string line = bytes.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto line_offset = pos;
    pos = eol + 1;

    std::istringstream ls(line);
    std::string keyword;
    ls >> keyword;
    if (keyword == "ply" || keyword == "comment" || keyword == "obj_info" || keyword.empty()) continue;
    if (keyword == "end_header") break;
    if (keyword == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") h.format = Format::Ascii;
      else if (fmt == "binary_little_endian") h.format = Format::BinaryLE;
      else if (fmt == "binary_big_endian") h.format = Format::BinaryBE;
      else throw ParseError("unsupported PLY format '" + fmt + "'", line_offset);
      have_format = true;
    } else if (keyword == "element") {
      Element e;
      long long count = -1;
      ls >> e.name >> count;
      if (!ls || count < 0) throw ParseError("malformed PLY element line", line_offset);
      e.count = static_cast<std::size_t>(count);
      h.elements.push_back(std::move(e));
    } else if (keyword == "property") {
      if (h.elements.empty()) throw ParseError("PLY property before any element", line_offset);
      Property p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type >> p.name;
        auto ct = scalar_from_name(count_type);
        auto it = scalar_from_name(item_type);
        if (!ct || !it || !is_integral(*ct)) throw ParseError("malformed PLY list property", line_offset);
        p.is_list = true;
        p.count_type = *ct;
        p.type = *it;
      } else {
        auto t = scalar_from_name(type);
        if (!t) throw ParseError("unknown PLY property type '" + type + "'", line_offset);
        p.type = *t;
        ls >> p.name;
      }
      if (p.name.empty()) throw ParseError("PLY property without a name", line_offset);
      h.elements.back().props.push_back(std::move(p));
    } else {
      throw ParseError("unexpected PLY header keyword '" + keyword + "'", line_offset);
    }
  }
  if (!have_format) throw ParseError("PLY header has no format line", 0);
  h.body_offset = pos;
  return h;
}

// Sequential reader over the PLY body; `offset()` is the byte offset of the
// value most recently started, used in error messages.
class BodyReader {
 public:
  BodyReader(const std::string& bytes, std::size_t pos, Format format) : bytes_(bytes), pos_(pos), format_(format) {}

  std::size_t offset() const { return last_; }

  double read(Scalar type) {
    if (format_ == Format::Ascii) return read_ascii(type);
    const auto n = scalar_size(type);
    last_ = pos_;
    if (pos_ + n > bytes_.size()) throw ParseError("unexpected end of PLY binary body", pos_);
    unsigned char buf[8];
    std::memcpy(buf, bytes_.data() + pos_, n);
    pos_ += n;
    const bool host_le = std::endian::native == std::endian::little;
    if ((format_ == Format::BinaryLE) != host_le) std::reverse(buf, buf + n);
    switch (type) {
      case Scalar::Int8: { std::int8_t v; std::memcpy(&v, buf, 1); return v; }
      case Scalar::UInt8: { std::uint8_t v; std::memcpy(&v, buf, 1); return v; }
      case Scalar::Int16: { std::int16_t v; std::memcpy(&v, buf, 2); return v; }
      case Scalar::UInt16: { std::uint16_t v; std::memcpy(&v, buf, 2); return v; }
      case Scalar::Int32: { std::int32_t v; std::memcpy(&v, buf, 4); return v; }
      case Scalar::UInt32: { std::uint32_t v; std::memcpy(&v, buf, 4); return v; }
      case Scalar::Float32: { float v; std::memcpy(&v, buf, 4); return v; }
      case Scalar::Float64: { double v; std::memcpy(&v, buf, 8); return v; }
    }
    return 0.0;
  }

 private:
  double read_ascii(Scalar type) {
    while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    last_ = pos_;
    if (pos_ >= bytes_.size()) throw ParseError("unexpected end of PLY ascii body", pos_);
    auto end = pos_;
    while (end < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[end]))) ++end;
    const char* first = bytes_.data() + pos_;
    const char* last = bytes_.data() + end;
    double value = 0.0;
    if (is_integral(type)) {
      long long iv = 0;
      auto [p, ec] = std::from_chars(first, last, iv);
      if (ec != std::errc() || p != last) throw ParseError("malformed integer in PLY body", pos_);
      value = static_cast<double>(iv);
    } else {
      auto [p, ec] = std::from_chars(first, last, value);
      if (ec != std::errc() || p != last) throw ParseError("malformed number in PLY body", pos_);
    }
    pos_ = end;
    return value;
  }

  const std::string& bytes_;
  std::size_t pos_;
  std::size_t last_ = 0;
  Format format_;
};

struct PlyData {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;
  std::vector<Vec3> normals;
  std::vector<Triangle> triangles;
  bool colors_are_8bit = true;
};

PlyData parse_ply(const std::string& bytes) {
  const Header h = parse_header(bytes);
  BodyReader reader(bytes, h.body_offset, h.format);
  PlyData data;

  const Element* vertex = nullptr;
  for (const auto& e : h.elements) {
    if (e.name == "vertex") vertex = &e;
  }
  if (!vertex) throw ParseError("PLY file has no vertex element", 0);

  for (const auto& e : h.elements) {
    if (e.name == "vertex") {
      int xyz[3] = {-1, -1, -1}, rgb[3] = {-1, -1, -1}, nrm[3] = {-1, -1, -1};
      const char* xyz_names[3] = {"x", "y", "z"};
      const char* rgb_names[3] = {"red", "green", "blue"};
      const char* nrm_names[3] = {"nx", "ny", "nz"};
      for (int p = 0; p < static_cast<int>(e.props.size()); ++p) {
        for (int k = 0; k < 3; ++k) {
          if (e.props[p].name == xyz_names[k]) xyz[k] = p;
          if (e.props[p].name == rgb_names[k]) rgb[k] = p;
          if (e.props[p].name == nrm_names[k]) nrm[k] = p;
        }
      }
      if (xyz[0] < 0 || xyz[1] < 0 || xyz[2] < 0) throw ParseError("PLY vertex element lacks x/y/z", 0);
      const bool has_rgb = rgb[0] >= 0 && rgb[1] >= 0 && rgb[2] >= 0;
      const bool has_nrm = nrm[0] >= 0 && nrm[1] >= 0 && nrm[2] >= 0;
      if (has_rgb) data.colors_are_8bit = e.props[rgb[0]].type == Scalar::UInt8;

      data.positions.reserve(e.count);
      std::vector<double> values(e.props.size());
      for (std::size_t i = 0; i < e.count; ++i) {
        for (std::size_t p = 0; p < e.props.size(); ++p) {
          const auto& prop = e.props[p];
          if (prop.is_list) {
            const auto n = static_cast<std::size_t>(reader.read(prop.count_type));
            for (std::size_t k = 0; k < n; ++k) reader.read(prop.type);
            values[p] = 0.0;
          } else {
            values[p] = reader.read(prop.type);
          }
        }
        data.positions.emplace_back(values[xyz[0]], values[xyz[1]], values[xyz[2]]);
        if (has_rgb) data.colors.emplace_back(values[rgb[0]], values[rgb[1]], values[rgb[2]]);
        if (has_nrm) data.normals.emplace_back(values[nrm[0]], values[nrm[1]], values[nrm[2]]);
      }
    } else if (e.name == "face") {
      int list_prop = -1;
      for (int p = 0; p < static_cast<int>(e.props.size()); ++p) {
        if (e.props[p].is_list && (e.props[p].name == "vertex_indices" || e.props[p].name == "vertex_index")) {
          list_prop = p;
        }
      }
      if (list_prop < 0) throw ParseError("PLY face element lacks a vertex_indices list", 0);
      data.triangles.reserve(e.count);
      std::vector<std::uint32_t> poly;
      for (std::size_t i = 0; i < e.count; ++i) {
        for (int p = 0; p < static_cast<int>(e.props.size()); ++p) {
          const auto& prop = e.props[p];
          if (!prop.is_list) {
            reader.read(prop.type);
            continue;
          }
          const double n_raw = reader.read(prop.count_type);
          const auto count_offset = reader.offset();
          if (n_raw < 0) throw ParseError("negative PLY list length", count_offset);
          const auto n = static_cast<std::size_t>(n_raw);
          if (p != list_prop) {
            for (std::size_t k = 0; k < n; ++k) reader.read(prop.type);
            continue;
          }
          if (n < 3) throw ParseError("PLY face with fewer than 3 vertices", count_offset);
          poly.clear();
          for (std::size_t k = 0; k < n; ++k) {
            const double idx = reader.read(prop.type);
            if (!(idx >= 0.0) || idx != std::floor(idx) || idx >= static_cast<double>(data.positions.size())) {
              throw ParseError("PLY face index " + std::to_string(static_cast<long long>(idx)) +
                                   " out of range for " + std::to_string(data.positions.size()) + " vertices",
                               reader.offset());
            }
            poly.push_back(static_cast<std::uint32_t>(idx));
          }
          for (std::size_t k = 1; k + 1 < poly.size(); ++k) data.triangles.push_back({poly[0], poly[k], poly[k + 1]});
        }
      }
    } else {
      for (std::size_t i = 0; i < e.count; ++i) {
        for (const auto& prop : e.props) {
          if (prop.is_list) {
            const auto n = static_cast<std::size_t>(reader.read(prop.count_type));
            for (std::size_t k = 0; k < n; ++k) reader.read(prop.type);
          } else {
            reader.read(prop.type);
          }
        }
      }
    }
  }
  return data;
}

std::string extension_of(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::endian::native == std::endian::little, "binary PLY writer assumes a little-endian host");
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::uint8_t to_byte(double c) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

TriMesh parse_ply_mesh(const std::string& bytes) {
  PlyData data = parse_ply(bytes);
  TriMesh mesh;
  mesh.vertices = std::move(data.positions);
  mesh.triangles = std::move(data.triangles);
  mesh.validate();
  mesh.remove_degenerate();
  return mesh;
}

TriMesh parse_obj_mesh(const std::string& bytes) {
  TriMesh mesh;
  std::vector<std::pair<std::vector<long long>, std::size_t>> faces;  // raw indices + line offset
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    auto eol = bytes.find('\n', pos);
    if (eol == std::string::npos) eol = bytes.size();
    const std::string line = bytes.substr(pos, eol - pos);
    const auto line_offset = pos;
    pos = eol + 1;

    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw ParseError("malformed OBJ vertex", line_offset);
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<long long> idx;
      std::string tok;
      while (ls >> tok) {
        const auto slash = tok.find('/');
        const std::string head = tok.substr(0, slash);
        long long v = 0;
        auto [p, ec] = std::from_chars(head.data(), head.data() + head.size(), v);
        if (ec != std::errc() || p != head.data() + head.size() || v == 0) {
          throw ParseError("malformed OBJ face index '" + tok + "'", line_offset);
        }
        idx.push_back(v);
      }
      if (idx.size() < 3) throw ParseError("OBJ face with fewer than 3 vertices", line_offset);
      faces.emplace_back(std::move(idx), line_offset);
    }
  }
  const auto nv = static_cast<long long>(mesh.vertices.size());
  for (const auto& [idx, offset] : faces) {
    std::vector<std::uint32_t> poly;
    for (long long v : idx) {
      const long long resolved = v > 0 ? v - 1 : nv + v;
      if (resolved < 0 || resolved >= nv) {
        throw ParseError("OBJ face index " + std::to_string(v) + " out of range for " + std::to_string(nv) +
                             " vertices",
                         offset);
      }
      poly.push_back(static_cast<std::uint32_t>(resolved));
    }
    for (std::size_t k = 1; k + 1 < poly.size(); ++k) mesh.triangles.push_back({poly[0], poly[k], poly[k + 1]});
  }
  mesh.remove_degenerate();
  return mesh;
}

TriMesh load_mesh(const std::filesystem::path& path) {
  const auto ext = extension_of(path);
  if (ext != ".ply" && ext != ".obj") throw ParseError("unsupported mesh format '" + ext + "' for " + path.string());
  const std::string bytes = read_file(path);
  try {
    return ext == ".ply" ? parse_ply_mesh(bytes) : parse_obj_mesh(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

PointCloud parse_ply_cloud(const std::string& bytes) {
  PlyData data = parse_ply(bytes);
  PointCloud cloud;
  cloud.positions = std::move(data.positions);
  cloud.colors = std::move(data.colors);
  if (data.colors_are_8bit) {
    for (auto& c : cloud.colors) c /= 255.0;
  }
  cloud.normals = std::move(data.normals);
  for (std::size_t i = 0; i < cloud.normals.size(); ++i) {
    const double len = cloud.normals[i].norm();
    if (!(len > 0.0)) throw ParseError("zero-length normal at vertex " + std::to_string(i));
    cloud.normals[i] /= len;
  }
  return cloud;
}

PointCloud load_cloud(const std::filesystem::path& path) {
  if (extension_of(path) != ".ply") {
    throw ParseError("unsupported cloud format '" + extension_of(path) + "' for " + path.string());
  }
  try {
    return parse_ply_cloud(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_mesh_ply(const std::filesystem::path& path, const TriMesh& mesh, PlyEncoding encoding) {
  mesh.validate();
  const bool binary = encoding == PlyEncoding::BinaryLittleEndian;
  std::string out;
  out += "ply\nformat ";
  out += binary ? "binary_little_endian" : "ascii";
  out += " 1.0\nelement vertex " + std::to_string(mesh.vertices.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  out += "element face " + std::to_string(mesh.triangles.size()) + "\n";
  out += "property list uchar uint vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices) {
    if (binary) {
      put(out, v.x()), put(out, v.y()), put(out, v.z());
    } else {
      out += format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z()) + "\n";
    }
  }
  for (const auto& t : mesh.triangles) {
    if (binary) {
      put<std::uint8_t>(out, 3);
      put(out, t[0]), put(out, t[1]), put(out, t[2]);
    } else {
      out += "3 " + std::to_string(t[0]) + " " + std::to_string(t[1]) + " " + std::to_string(t[2]) + "\n";
    }
  }
  write_file_atomic(path, out);
}

void save_cloud_ply(const std::filesystem::path& path, const PointCloud& cloud, PlyEncoding encoding) {
  cloud.validate();
  const bool binary = encoding == PlyEncoding::BinaryLittleEndian;
  std::string out;
  out += "ply\nformat ";
  out += binary ? "binary_little_endian" : "ascii";
  out += " 1.0\nelement vertex " + std::to_string(cloud.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  if (cloud.has_colors()) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (cloud.has_normals()) out += "property float nx\nproperty float ny\nproperty float nz\n";
  out += "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    if (binary) {
      put(out, p.x()), put(out, p.y()), put(out, p.z());
      if (cloud.has_colors()) {
        for (int k = 0; k < 3; ++k) put(out, to_byte(cloud.colors[i][k]));
      }
      if (cloud.has_normals()) {
        for (int k = 0; k < 3; ++k) put(out, static_cast<float>(cloud.normals[i][k]));
      }
    } else {
      out += format_double(p.x()) + " " + format_double(p.y()) + " " + format_double(p.z());
      if (cloud.has_colors()) {
        for (int k = 0; k < 3; ++k) out += " " + std::to_string(to_byte(cloud.colors[i][k]));
      }
      if (cloud.has_normals()) {
        for (int k = 0; k < 3; ++k) out += " " + format_double(static_cast<float>(cloud.normals[i][k]));
      }
      out += "\n";
    }
  }
  write_file_atomic(path, out);
}

VoxelMask load_voxel_mask(const std::filesystem::path& header_path) {
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(read_file(header_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(header_path.string() + ": " + e.what(), e.byte);
  }
  try {
    if (h.value("format", std::string{}) != "spinealign-voxel-mask") {
      throw ParseError(header_path.string() + ": not a spinealign voxel mask header");
    }
    const auto dims = h.at("dims").get<std::array<std::size_t, 3>>();
    const auto spacing = h.at("spacing_mm").get<std::array<double, 3>>();
    const auto origin = h.at("origin_mm").get<std::array<double, 3>>();
    const auto encoding = h.value("encoding", std::string("byte"));
    VoxelMask mask(dims, Vec3(spacing[0], spacing[1], spacing[2]), Vec3(origin[0], origin[1], origin[2]));

    const auto payload = read_file(header_path.parent_path() / h.at("payload").get<std::string>());
    const auto n = mask.voxel_count();
    if (encoding == "bit") {
      if (payload.size() != (n + 7) / 8) {
        throw ParseError("voxel payload has " + std::to_string(payload.size()) + " bytes, expected " +
                         std::to_string((n + 7) / 8));
      }
      for (std::size_t i = 0; i < n; ++i) {
        mask.occupancy[i] = (static_cast<unsigned char>(payload[i / 8]) >> (i % 8)) & 1u;
      }
    } else if (encoding == "byte") {
      if (payload.size() != n) {
        throw ParseError("voxel payload has " + std::to_string(payload.size()) + " bytes, expected " +
                         std::to_string(n));
      }
      for (std::size_t i = 0; i < n; ++i) mask.occupancy[i] = payload[i] != 0 ? 1 : 0;
    } else {
      throw ParseError("unknown voxel encoding '" + encoding + "'");
    }
    return mask;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(header_path.string() + ": " + e.what());
  }
}

void save_voxel_mask(const std::filesystem::path& header_path, const VoxelMask& mask, bool packed_bits) {
  mask.validate();
  auto payload_path = header_path;
  payload_path.replace_extension(".raw");
  const auto n = mask.voxel_count();
  std::string payload;
  if (packed_bits) {
    payload.assign((n + 7) / 8, '\0');
    for (std::size_t i = 0; i < n; ++i) {
      if (mask.occupancy[i]) payload[i / 8] = static_cast<char>(payload[i / 8] | (1u << (i % 8)));
    }
  } else {
    payload.resize(n);
    for (std::size_t i = 0; i < n; ++i) payload[i] = mask.occupancy[i] ? 1 : 0;
  }
  nlohmann::json h = {
      {"format", "spinealign-voxel-mask"},
      {"version", 1},
      {"dims", mask.dims},
      {"spacing_mm", {mask.spacing.x(), mask.spacing.y(), mask.spacing.z()}},
      {"origin_mm", {mask.origin.x(), mask.origin.y(), mask.origin.z()}},
      {"encoding", packed_bits ? "bit" : "byte"},
      {"payload", payload_path.filename().string()},
  };
  write_file_atomic(payload_path, payload);
  write_file_atomic(header_path, h.dump(2) + "\n");
}

}  // namespace spinealign::io
