#pragma once

#include <string>
#include <vector>

#include "convocc/feature_grid.hpp"
#include "convocc/geometry.hpp"
#include "convocc/nn_ops.hpp"
#include "convocc/tensor.hpp"

namespace convocc {

enum class EncoderMode { single_plane, three_planes, volume, hybrid, global_baseline };
const char* encoder_mode_name(EncoderMode mode);
EncoderMode encoder_mode_from_name(const std::string& name);

struct EncoderConfig {
    EncoderMode mode = EncoderMode::three_planes;
    int plane_resolution = 64;
    int volume_resolution = 32;
    int feature_dim = 32;
    int point_net_blocks = 5;
};

// Target grids (cell extents per axis) for a config. Empty for the global
// baseline, which pools over the whole cloud instead.
struct GridSpec {
    GridLayout layout;
    std::vector<int> extents;
};
std::vector<GridSpec> grids_for_config(const EncoderConfig& cfg);

// Cell assignment: floor(u * E) per axis, clamped to E-1 (coordinates are
// clamped to [0,1] first). Flat index is row-major with u fastest.
int64_t cell_index(const GridSpec& spec, const Vec3& p);
int64_t cell_count(const GridSpec& spec);

// Per-axis cell lattice covering each world axis (max across grids; axes
// not covered by any grid fall back to the overall max). All zero when no
// grids are given.
std::array<int, 3> lattice_extents(const std::vector<GridSpec>& grids);
// In-cell offset of p on that lattice, each component in [0,1]. Feeding
// these (rather than absolute positions) into the point network and the
// occupancy head is what makes whole-cell translations exact; absolute
// position enters only through where features are scattered.
Vec3 lattice_offset(const Vec3& p, const std::array<int, 3>& lattice);

// Shallow point network: lift 3->d, then point_net_blocks blocks of
// (shared linear d->d, ReLU, local-pool concat reduced 2d->d). Local pools
// run over each target grid's cells, gathered results summed.
struct PointNetParams {
    Tensor lift_w, lift_b;
    struct Block {
        Tensor fc_w, fc_b;          // d -> d
        Tensor reduce_w, reduce_b;  // 2d -> d
    };
    std::vector<Block> blocks;

    void init(int feature_dim, int n_blocks, RngStream& rng);
    void collect(const std::string& prefix, std::vector<NamedTensor>& out);
};

// Per-point features, order matching the input. Coordinates outside [0,1]
// are clamped for pooling purposes.
Tensor pointnet_encode(const PointCloud& cloud, const EncoderConfig& cfg, const PointNetParams& params);
// Same network pooled over explicit grids (used by sliding-window crops).
Tensor pointnet_encode_over(const PointCloud& cloud, const std::vector<GridSpec>& grids,
                            const PointNetParams& params);

// One-layer 3D CNN over the binary voxel grid, 1 -> d channels, 3^3 kernel,
// pad 1. Output {d, R, R, R}.
struct VoxelEncoderParams {
    Tensor w, b;
    void init(int feature_dim, RngStream& rng);
    void collect(const std::string& prefix, std::vector<NamedTensor>& out);
};
Tensor voxel_encode(const VoxelGrid& grid, const EncoderConfig& cfg, const VoxelEncoderParams& params);

// Scatter-average point features into one grid; untouched cells stay zero.
FeatureGrid project_and_pool(const Tensor& features, const std::vector<Vec3>& positions,
                             const GridSpec& spec);

// ONet-style global code: max-pool over all per-point features.
Tensor global_encode(const PointCloud& cloud, const EncoderConfig& cfg, const PointNetParams& params);

// Voxel centers (i+0.5)/R in normalized coordinates, linear order [z][y][x].
std::vector<Vec3> voxel_center_positions(int resolution);

}  // namespace convocc
