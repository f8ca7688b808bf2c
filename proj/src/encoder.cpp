#include "convocc/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace convocc {

namespace op = ops;

const char* encoder_mode_name(EncoderMode mode) {
    switch (mode) {
        case EncoderMode::single_plane: return "single_plane";
        case EncoderMode::three_planes: return "three_planes";
        case EncoderMode::volume: return "volume";
        case EncoderMode::hybrid: return "hybrid";
        case EncoderMode::global_baseline: return "global_baseline";
    }
    return "?";
}

EncoderMode encoder_mode_from_name(const std::string& name) {
    if (name == "single_plane") return EncoderMode::single_plane;
    if (name == "three_planes") return EncoderMode::three_planes;
    if (name == "volume") return EncoderMode::volume;
    if (name == "hybrid") return EncoderMode::hybrid;
    if (name == "global_baseline") return EncoderMode::global_baseline;
    throw std::invalid_argument("unknown encoder mode '" + name +
                                "' (valid: single_plane, three_planes, volume, hybrid, global_baseline)");
}

std::vector<GridSpec> grids_for_config(const EncoderConfig& cfg) {
    if (cfg.plane_resolution < 2 || cfg.volume_resolution < 2)
        throw std::invalid_argument("encoder: resolutions must be >= 2");
    std::vector<GridSpec> grids;
    int pr = cfg.plane_resolution, vr = cfg.volume_resolution;
    switch (cfg.mode) {
        case EncoderMode::single_plane:
            grids.push_back({GridLayout::plane_xy, {pr, pr}});
            break;
        case EncoderMode::three_planes:
            grids.push_back({GridLayout::plane_xy, {pr, pr}});
            grids.push_back({GridLayout::plane_xz, {pr, pr}});
            grids.push_back({GridLayout::plane_yz, {pr, pr}});
            break;
        case EncoderMode::volume:
            grids.push_back({GridLayout::volume, {vr, vr, vr}});
            break;
        case EncoderMode::hybrid:
            grids.push_back({GridLayout::plane_xy, {pr, pr}});
            grids.push_back({GridLayout::plane_xz, {pr, pr}});
            grids.push_back({GridLayout::plane_yz, {pr, pr}});
            grids.push_back({GridLayout::volume, {vr, vr, vr}});
            break;
        case EncoderMode::global_baseline:
            break;
    }
    return grids;
}

static int axis_cell(double u, int extent) {
    int i = static_cast<int>(std::floor(std::clamp(u, 0.0, 1.0) * extent));
    return std::min(i, extent - 1);
}

int64_t cell_index(const GridSpec& spec, const Vec3& p) {
    if (is_plane(spec.layout)) {
        auto [u, v] = plane_uv(spec.layout, p);
        int iu = axis_cell(u, spec.extents[0]);
        int iv = axis_cell(v, spec.extents[1]);
        return static_cast<int64_t>(iv) * spec.extents[0] + iu;
    }
    int ix = axis_cell(p.x, spec.extents[0]);
    int iy = axis_cell(p.y, spec.extents[1]);
    int iz = axis_cell(p.z, spec.extents[2]);
    return (static_cast<int64_t>(iz) * spec.extents[1] + iy) * spec.extents[0] + ix;
}

int64_t cell_count(const GridSpec& spec) {
    int64_t n = 1;
    for (int e : spec.extents) n *= e;
    return n;
}

std::array<int, 3> lattice_extents(const std::vector<GridSpec>& grids) {
    std::array<int, 3> lat{0, 0, 0};
    int overall = 0;
    for (const GridSpec& g : grids) {
        int axes[3] = {-1, -1, -1};
        switch (g.layout) {
            case GridLayout::plane_xy: axes[0] = 0; axes[1] = 1; break;
            case GridLayout::plane_xz: axes[0] = 0; axes[1] = 2; break;
            case GridLayout::plane_yz: axes[0] = 1; axes[1] = 2; break;
            case GridLayout::volume: axes[0] = 0; axes[1] = 1; axes[2] = 2; break;
        }
        for (size_t i = 0; i < g.extents.size(); ++i) {
            lat[static_cast<size_t>(axes[i])] = std::max(lat[static_cast<size_t>(axes[i])], g.extents[i]);
            overall = std::max(overall, g.extents[i]);
        }
    }
    for (int& v : lat)
        if (v == 0) v = overall;
    return lat;
}

Vec3 lattice_offset(const Vec3& p, const std::array<int, 3>& lattice) {
    Vec3 out;
    for (int a = 0; a < 3; ++a) {
        double x = std::clamp(p[a], 0.0, 1.0) * lattice[static_cast<size_t>(a)];
        double cell = std::min(std::floor(x), static_cast<double>(lattice[static_cast<size_t>(a)] - 1));
        out[a] = x - cell;
    }
    return out;
}

// ---------------------------------------------------------------- pointnet

static Tensor he_linear(int out, int in, RngStream& rng) {
    return Tensor::randn({out, in}, rng, std::sqrt(2.0 / in), true);
}

void PointNetParams::init(int feature_dim, int n_blocks, RngStream& rng) {
    lift_w = he_linear(feature_dim, 3, rng);
    lift_b = Tensor::zeros({feature_dim}, true);
    blocks.clear();
    for (int i = 0; i < n_blocks; ++i) {
        Block b;
        b.fc_w = he_linear(feature_dim, feature_dim, rng);
        b.fc_b = Tensor::zeros({feature_dim}, true);
        b.reduce_w = he_linear(feature_dim, 2 * feature_dim, rng);
        b.reduce_b = Tensor::zeros({feature_dim}, true);
        blocks.push_back(b);
    }
}

void PointNetParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".lift.w", lift_w});
    out.push_back({prefix + ".lift.b", lift_b});
    for (size_t i = 0; i < blocks.size(); ++i) {
        std::string bp = prefix + ".block" + std::to_string(i);
        out.push_back({bp + ".fc.w", blocks[i].fc_w});
        out.push_back({bp + ".fc.b", blocks[i].fc_b});
        out.push_back({bp + ".reduce.w", blocks[i].reduce_w});
        out.push_back({bp + ".reduce.b", blocks[i].reduce_b});
    }
}

static Tensor positions_tensor(const PointCloud& cloud, const std::array<int, 3>& lattice) {
    if (cloud.points.empty()) throw std::invalid_argument("pointnet_encode: empty point cloud");
    const bool use_offsets = lattice[0] > 0;
    std::vector<double> vals;
    vals.reserve(cloud.points.size() * 3);
    for (const Vec3& p : cloud.points) {
        Vec3 q = use_offsets ? lattice_offset(p, lattice) : p;
        vals.push_back(q.x);
        vals.push_back(q.y);
        vals.push_back(q.z);
    }
    return Tensor::from({static_cast<int>(cloud.points.size()), 3}, std::move(vals));
}

Tensor pointnet_encode_over(const PointCloud& cloud, const std::vector<GridSpec>& grids,
                            const PointNetParams& params) {
    Tensor pos = positions_tensor(cloud, lattice_extents(grids));
    const int64_t n = pos.dim(0);

    // Cell membership per target grid. With no grids (the global baseline)
    // the local pool degenerates to an order-exact global max pool.
    std::vector<std::vector<int64_t>> cell_ids;
    std::vector<int64_t> counts;
    for (const GridSpec& spec : grids) {
        std::vector<int64_t> ids(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = cell_index(spec, cloud.points[static_cast<size_t>(i)]);
        cell_ids.push_back(std::move(ids));
        counts.push_back(cell_count(spec));
    }
    const std::vector<int64_t> all_zero(static_cast<size_t>(n), 0);

    Tensor h = op::relu(op::linear(pos, params.lift_w, params.lift_b));
    for (const auto& block : params.blocks) {
        Tensor hp = op::relu(op::linear(h, block.fc_w, block.fc_b));
        Tensor pooled;
        if (grids.empty()) {
            Tensor mx = op::reshape(op::max_over_rows(hp), {1, hp.dim(1)});
            pooled = op::gather_rows(mx, all_zero);
        } else {
            for (size_t gi = 0; gi < cell_ids.size(); ++gi) {
                Tensor cells = op::scatter_mean(cell_ids[gi], hp, counts[gi]);
                Tensor gathered = op::gather_rows(cells, cell_ids[gi]);
                pooled = pooled.defined() ? op::add(pooled, gathered) : gathered;
            }
        }
        h = op::relu(op::linear(op::concat(hp, pooled, 1), block.reduce_w, block.reduce_b));
    }
    return h;
}

Tensor pointnet_encode(const PointCloud& cloud, const EncoderConfig& cfg, const PointNetParams& params) {
    return pointnet_encode_over(cloud, grids_for_config(cfg), params);
}

// ---------------------------------------------------------------- voxels

void VoxelEncoderParams::init(int feature_dim, RngStream& rng) {
    w = Tensor::randn({feature_dim, 1, 3, 3, 3}, rng, std::sqrt(2.0 / 27.0), true);
    b = Tensor::zeros({feature_dim}, true);
}

void VoxelEncoderParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
}

Tensor voxel_encode(const VoxelGrid& grid, const EncoderConfig& cfg, const VoxelEncoderParams& params) {
    if (grid.resolution != cfg.volume_resolution)
        throw std::invalid_argument("voxel_encode: grid resolution " + std::to_string(grid.resolution) +
                                    " != configured " + std::to_string(cfg.volume_resolution));
    int r = grid.resolution;
    std::vector<double> vals(grid.occupancy.begin(), grid.occupancy.end());
    Tensor input = Tensor::from({1, r, r, r}, std::move(vals));
    return op::conv3d(input, params.w, params.b, 1, 1);
}

std::vector<Vec3> voxel_center_positions(int resolution) {
    std::vector<Vec3> pos;
    pos.reserve(static_cast<size_t>(resolution) * resolution * resolution);
    for (int iz = 0; iz < resolution; ++iz)
        for (int iy = 0; iy < resolution; ++iy)
            for (int ix = 0; ix < resolution; ++ix)
                pos.push_back({(ix + 0.5) / resolution, (iy + 0.5) / resolution, (iz + 0.5) / resolution});
    return pos;
}

// ---------------------------------------------------------------- projection

FeatureGrid project_and_pool(const Tensor& features, const std::vector<Vec3>& positions,
                             const GridSpec& spec) {
    if (features.ndim() != 2 || static_cast<size_t>(features.dim(0)) != positions.size())
        throw std::invalid_argument("project_and_pool: features " + shape_str(features.shape()) + " vs " +
                                    std::to_string(positions.size()) + " positions");
    const int64_t n = features.dim(0);
    std::vector<int64_t> ids(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = cell_index(spec, positions[static_cast<size_t>(i)]);
    Tensor cells = op::scatter_mean(ids, features, cell_count(spec));
    // Channels-first spatial layout: slowest axis last in `extents`.
    std::vector<int> spatial(spec.extents.rbegin(), spec.extents.rend());
    Tensor data = op::rows_to_channels_first(cells, spatial);
    return make_feature_grid(spec.layout, spec.extents, std::move(data));
}

Tensor global_encode(const PointCloud& cloud, const EncoderConfig& cfg, const PointNetParams& params) {
    Tensor per_point = pointnet_encode_over(cloud, {}, params);
    (void)cfg;
    return op::max_over_rows(per_point);
}

}  // namespace convocc
