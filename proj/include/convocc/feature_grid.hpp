#pragma once

#include <utility>
#include <vector>

#include "convocc/common.hpp"
#include "convocc/tensor.hpp"

namespace convocc {

enum class GridLayout { plane_xy, plane_xz, plane_yz, volume };

const char* grid_layout_name(GridLayout layout);
bool is_plane(GridLayout layout);

// Channels-first feature plane or volume.
//   planes:  data shape {d, Ev, Eu}, extents {Eu, Ev}
//   volume:  data shape {d, Ez, Ey, Ex}, extents {Ex, Ey, Ez}
// Normalized coordinates map onto the grid with node i at i/(E-1).
struct FeatureGrid {
    GridLayout layout = GridLayout::plane_xy;
    std::vector<int> extents;
    Tensor data;

    int channels() const { return data.dim(0); }
};

FeatureGrid make_feature_grid(GridLayout layout, const std::vector<int>& extents, Tensor data);

// In-plane coordinates of a 3D point for a plane layout (u, v); the
// orthogonal coordinate is dropped.
std::pair<double, double> plane_uv(GridLayout layout, const Vec3& p);

}  // namespace convocc
