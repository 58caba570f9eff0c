#pragma once

#include <filesystem>
#include <string>

#include "spinealign/geometry/types.hpp"

namespace spinealign::io {

enum class PlyEncoding { Ascii, BinaryLittleEndian };

// PLY (ascii, binary little/big endian) or OBJ, chosen by extension.
// Polygons are fan-triangulated; degenerate triangles are dropped.
TriMesh load_mesh(const std::filesystem::path& path);
TriMesh parse_ply_mesh(const std::string& bytes);
TriMesh parse_obj_mesh(const std::string& bytes);

// PLY with vertex properties x,y,z[,red,green,blue][,nx,ny,nz]. 8-bit colours
// are scaled to [0,1]; normals are renormalised.
PointCloud load_cloud(const std::filesystem::path& path);
PointCloud parse_ply_cloud(const std::string& bytes);

void save_mesh_ply(const std::filesystem::path& path, const TriMesh& mesh,
                   PlyEncoding encoding = PlyEncoding::BinaryLittleEndian);
void save_cloud_ply(const std::filesystem::path& path, const PointCloud& cloud,
                    PlyEncoding encoding = PlyEncoding::BinaryLittleEndian);

// Voxel masks: a JSON header
//   {"format": "spinealign-voxel-mask", "version": 1, "dims": [nx, ny, nz],
//    "spacing_mm": [sx, sy, sz], "origin_mm": [ox, oy, oz],
//    "encoding": "bit" | "byte", "payload": "<file relative to header>"}
// plus a payload with one entry per voxel, x fastest then y then z.
// "bit" packs 8 voxels per byte, least significant bit first.
VoxelMask load_voxel_mask(const std::filesystem::path& header_path);
void save_voxel_mask(const std::filesystem::path& header_path, const VoxelMask& mask, bool packed_bits = true);

std::string read_file(const std::filesystem::path& path);
// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace spinealign::io
