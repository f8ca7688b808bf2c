#pragma once

#include <filesystem>

#include "convocc/geometry.hpp"

namespace convocc {

// Binary little-endian PLY: f32 vertices, u32 triangle indices.
void write_mesh_ply(const std::filesystem::path& path, const TriangleMesh& mesh);
// Text OFF.
void write_mesh_off(const std::filesystem::path& path, const TriangleMesh& mesh);

TriangleMesh read_mesh_ply(const std::filesystem::path& path);
TriangleMesh read_mesh_off(const std::filesystem::path& path);

// ---- inference inputs ----
// ASCII XYZ: one "x y z" triple per line (extra columns ignored).
PointCloud read_xyz_points(const std::filesystem::path& path);
// Binary little-endian PLY vertex positions (other properties skipped).
PointCloud read_ply_points(const std::filesystem::path& path);

}  // namespace convocc
