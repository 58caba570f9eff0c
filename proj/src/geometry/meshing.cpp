#include "spinealign/geometry/meshing.hpp"

#include <algorithm>
#include <string>
#include <unordered_map>

#include "spinealign/error.hpp"
#include "spinealign/geometry/mc_tables.hpp"

namespace spinealign::geometry {

TriMesh marching_cubes(const VoxelMask& mask, double iso_level) {
  mask.validate();
  const auto [nx, ny, nz] = mask.dims;
  if (nx < 2 || ny < 2 || nz < 2) {
    throw InvalidArgument("marching cubes: grid dimensions must be >= 2 per axis, got " + std::to_string(nx) + "x" +
                          std::to_string(ny) + "x" + std::to_string(nz));
  }

  TriMesh mesh;
  if (std::none_of(mask.occupancy.begin(), mask.occupancy.end(), [](std::uint8_t v) { return v != 0; })) {
    return mesh;
  }

  // Grid points are addressed in a padded frame shifted by one voxel so that
  // the ring of implicit zeros around the mask has non-negative coordinates.
  const auto px = static_cast<std::int64_t>(nx) + 2;
  const auto py = static_cast<std::int64_t>(ny) + 2;
  const auto pz = static_cast<std::int64_t>(nz) + 2;
  auto value = [&](std::int64_t x, std::int64_t y, std::int64_t z) -> double {
    --x, --y, --z;
    if (x < 0 || y < 0 || z < 0 || x >= static_cast<std::int64_t>(nx) || y >= static_cast<std::int64_t>(ny) ||
        z >= static_cast<std::int64_t>(nz)) {
      return 0.0;
    }
    return mask.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)) ? 1.0 : 0.0;
  };

  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  auto vertex_on_edge = [&](const std::array<std::int64_t, 3>& a, const std::array<std::int64_t, 3>& b, double va,
                            double vb) -> std::uint32_t {
    // Canonical key: the lower endpoint plus the axis the edge runs along.
    const bool swap = std::tie(a[2], a[1], a[0]) > std::tie(b[2], b[1], b[0]);
    const auto& lo = swap ? b : a;
    const int axis = a[0] != b[0] ? 0 : (a[1] != b[1] ? 1 : 2);
    const auto key = static_cast<std::uint64_t>(((lo[2] * py + lo[1]) * px + lo[0]) * 3 + axis);
    if (auto it = edge_vertex.find(key); it != edge_vertex.end()) return it->second;

    const double t = (va == vb) ? 0.5 : (iso_level - va) / (vb - va);
    const Vec3 pa = mask.world(static_cast<double>(a[0] - 1), static_cast<double>(a[1] - 1), static_cast<double>(a[2] - 1));
    const Vec3 pb = mask.world(static_cast<double>(b[0] - 1), static_cast<double>(b[1] - 1), static_cast<double>(b[2] - 1));
    const auto id = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(pa + t * (pb - pa));
    edge_vertex.emplace(key, id);
    return id;
  };

  for (std::int64_t z = 0; z + 1 < pz; ++z) {
    for (std::int64_t y = 0; y + 1 < py; ++y) {
      for (std::int64_t x = 0; x + 1 < px; ++x) {
        std::array<double, 8> v{};
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          const auto& o = detail::kCornerOffset[c];
          v[c] = value(x + o[0], y + o[1], z + o[2]);
          if (v[c] < iso_level) cube |= 1 << c;
        }
        if (detail::kEdgeTable[cube] == 0) continue;

        std::array<std::uint32_t, 12> ids{};
        for (int e = 0; e < 12; ++e) {
          if (!(detail::kEdgeTable[cube] & (1 << e))) continue;
          const int c0 = detail::kEdgeCorners[e][0];
          const int c1 = detail::kEdgeCorners[e][1];
          const auto& o0 = detail::kCornerOffset[c0];
          const auto& o1 = detail::kCornerOffset[c1];
          ids[e] = vertex_on_edge({x + o0[0], y + o0[1], z + o0[2]}, {x + o1[0], y + o1[1], z + o1[2]}, v[c0], v[c1]);
        }
        // With bits set for corners below the iso level the table winds
        // triangles counter-clockwise seen from the low (outside) side.
        for (int t = 0; detail::kTriTable[cube][t] != -1; t += 3) {
          mesh.triangles.push_back({ids[detail::kTriTable[cube][t]], ids[detail::kTriTable[cube][t + 1]],
                                    ids[detail::kTriTable[cube][t + 2]]});
        }
      }
    }
  }
  mesh.remove_degenerate(0.0);
  return mesh;
}

std::vector<std::vector<std::uint32_t>> vertex_neighbors(const TriMesh& mesh) {
  std::vector<std::vector<std::uint32_t>> nbrs(mesh.vertices.size());
  for (const auto& tri : mesh.triangles) {
    for (int i = 0; i < 3; ++i) {
      nbrs[tri[i]].push_back(tri[(i + 1) % 3]);
      nbrs[tri[i]].push_back(tri[(i + 2) % 3]);
    }
  }
  for (auto& n : nbrs) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return nbrs;
}

TriMesh laplacian_smooth(const TriMesh& mesh, int iterations, double factor) {
  TriMesh out = mesh;
  if (iterations <= 0) return out;
  const auto nbrs = vertex_neighbors(mesh);
  std::vector<Vec3> next(out.vertices.size());
  for (int it = 0; it < iterations; ++it) {
    const auto n = static_cast<std::ptrdiff_t>(out.vertices.size());
#pragma omp parallel for schedule(static) if (n > 8192)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto& ring = nbrs[i];
      if (ring.empty()) {
        next[i] = out.vertices[i];
        continue;
      }
      Vec3 mean = Vec3::Zero();
      for (auto j : ring) mean += out.vertices[j];
      mean /= static_cast<double>(ring.size());
      next[i] = out.vertices[i] + factor * (mean - out.vertices[i]);
    }
    out.vertices.swap(next);
  }
  return out;
}

TriMesh mesh_from_mask(const VoxelMask& mask, int smooth_iterations, double smooth_factor) {
  return laplacian_smooth(marching_cubes(mask, kDefaultIsoLevel), smooth_iterations, smooth_factor);
}

}  // namespace spinealign::geometry
