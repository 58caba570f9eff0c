#include "spinealign/service/payload.hpp"

#include <cstring>

#include <openssl/evp.h>

#include "spinealign/error.hpp"

namespace spinealign::service {

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw InvalidArgument("base64: length is not a multiple of 4");
  std::string out(3 * (text.size() / 4), '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw InvalidArgument("base64: invalid character");
  // EVP_DecodeBlock keeps the bytes produced by padding; drop them.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

namespace {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

template <class T>
T get_le(const std::string& in, std::size_t at) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
  T v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

std::string encode_points(std::span<const Vec3> points) {
  std::string raw;
  raw.reserve(12 * points.size());
  for (const auto& p : points)
    for (int k = 0; k < 3; ++k) put_le(raw, static_cast<float>(p[k]));
  return base64_encode(raw);
}

std::vector<Vec3> decode_points(std::string_view text) {
  const std::string raw = base64_decode(text);
  if (raw.size() % 12 != 0) throw InvalidArgument("point payload is not a whole number of float32 triples");
  std::vector<Vec3> out(raw.size() / 12);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (int k = 0; k < 3; ++k) out[i][k] = get_le<float>(raw, 12 * i + 4 * k);
  return out;
}

std::string encode_triangles(std::span<const Triangle> triangles) {
  std::string raw;
  raw.reserve(12 * triangles.size());
  for (const auto& t : triangles)
    for (auto v : t) put_le(raw, v);
  return base64_encode(raw);
}

std::vector<Triangle> decode_triangles(std::string_view text) {
  const std::string raw = base64_decode(text);
  if (raw.size() % 12 != 0) throw InvalidArgument("triangle payload is not a whole number of uint32 triples");
  std::vector<Triangle> out(raw.size() / 12);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (int k = 0; k < 3; ++k) out[i][k] = get_le<std::uint32_t>(raw, 12 * i + 4 * k);
  return out;
}

nlohmann::json cloud_payload(const PointCloud& cloud) {
  nlohmann::json j = {{"count", cloud.size()}, {"positions", encode_points(cloud.positions)}};
  if (cloud.has_colors()) j["colors"] = encode_points(cloud.colors);
  return j;
}

}  // namespace spinealign::service
