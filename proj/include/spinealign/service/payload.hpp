#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spinealign/geometry/types.hpp"

namespace spinealign::service {

// Standard alphabet with padding. decode throws InvalidArgument on bad input.
std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

// Little-endian float32 triples / uint32 triples, base64 encoded.
std::string encode_points(std::span<const Vec3> points);
std::vector<Vec3> decode_points(std::string_view text);
std::string encode_triangles(std::span<const Triangle> triangles);
std::vector<Triangle> decode_triangles(std::string_view text);

// {"count": n, "positions": "<base64>", "colors": "<base64>"?}
nlohmann::json cloud_payload(const PointCloud& cloud);

}  // namespace spinealign::service
