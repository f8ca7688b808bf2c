#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "convocc/geometry.hpp"

namespace convocc {

// Classic 256-case marching cubes over a dense node grid. field holds
// node_dims[0] x node_dims[1] x node_dims[2] values indexed [z][y][x];
// node (i,j,k) sits at origin + (i,j,k) .* spacing. Vertices are placed by
// linear interpolation of (field - iso) along crossing edges and shared
// between cells, triangles are wound so normals point toward lower field
// values, and saddle faces are resolved with the asymptotic decider so
// neighboring cells agree on face connectivity.
TriangleMesh marching_cubes(const std::vector<double>& field, const std::array<int, 3>& node_dims,
                            double iso, const Vec3& origin, const Vec3& spacing);

// Nodes spanning [0,1]^3: node i at i/(dims-1).
TriangleMesh marching_cubes_unit(const std::vector<double>& field, const std::array<int, 3>& node_dims,
                                 double iso);

}  // namespace convocc
