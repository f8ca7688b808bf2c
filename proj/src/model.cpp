#include "convocc/model.hpp"

#include <json.hpp>

#include <memory>

namespace convocc {

namespace op = ops;
using nlohmann::json;

std::string model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["mode"] = encoder_mode_name(cfg.encoder.mode);
    j["plane_resolution"] = cfg.encoder.plane_resolution;
    j["volume_resolution"] = cfg.encoder.volume_resolution;
    j["feature_dim"] = cfg.encoder.feature_dim;
    j["point_net_blocks"] = cfg.encoder.point_net_blocks;
    j["hidden_dim"] = cfg.head.hidden_dim;
    j["resnet_blocks"] = cfg.head.resnet_blocks;
    j["nearest_interp"] = cfg.nearest_interp;
    j["unet2d_depth"] = cfg.unet2d_depth;
    j["unet3d_depth"] = cfg.unet3d_depth;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("model config: ") + e.what());
    }
    ModelConfig cfg;
    cfg.encoder.mode = encoder_mode_from_name(j.at("mode").get<std::string>());
    cfg.encoder.plane_resolution = j.at("plane_resolution").get<int>();
    cfg.encoder.volume_resolution = j.at("volume_resolution").get<int>();
    cfg.encoder.feature_dim = j.at("feature_dim").get<int>();
    cfg.encoder.point_net_blocks = j.at("point_net_blocks").get<int>();
    cfg.head.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.head.resnet_blocks = j.at("resnet_blocks").get<int>();
    cfg.head.feature_dim = cfg.encoder.feature_dim;
    cfg.nearest_interp = j.at("nearest_interp").get<bool>();
    cfg.unet2d_depth = j.at("unet2d_depth").get<int>();
    cfg.unet3d_depth = j.at("unet3d_depth").get<int>();
    return cfg;
}

static bool mode_uses_planes(EncoderMode m) {
    return m == EncoderMode::single_plane || m == EncoderMode::three_planes || m == EncoderMode::hybrid;
}
static bool mode_uses_volume(EncoderMode m) {
    return m == EncoderMode::volume || m == EncoderMode::hybrid;
}

void Model::init(uint64_t seed) {
    cfg.head.feature_dim = cfg.encoder.feature_dim;
    RngStream pn_rng(derive_seed(seed, 1));
    pointnet.init(cfg.encoder.feature_dim, cfg.encoder.point_net_blocks, pn_rng);
    RngStream vx_rng(derive_seed(seed, 2));
    voxel_encoder.init(cfg.encoder.feature_dim, vx_rng);
    has_unet2d = mode_uses_planes(cfg.encoder.mode);
    has_unet3d = mode_uses_volume(cfg.encoder.mode);
    if (has_unet2d) {
        UNetConfig uc;
        uc.dims = 2;
        uc.depth = cfg.unet2d_depth > 0 ? cfg.unet2d_depth : receptive_field_depth(cfg.encoder.plane_resolution);
        uc.in_channels = uc.base_channels = cfg.encoder.feature_dim;
        RngStream rng(derive_seed(seed, 3));
        unet2d.init(uc, rng);
    }
    if (has_unet3d) {
        UNetConfig uc;
        uc.dims = 3;
        uc.depth = cfg.unet3d_depth > 0 ? cfg.unet3d_depth : receptive_field_depth(cfg.encoder.volume_resolution);
        uc.in_channels = uc.base_channels = cfg.encoder.feature_dim;
        RngStream rng(derive_seed(seed, 4));
        unet3d.init(uc, rng);
    }
    RngStream hd_rng(derive_seed(seed, 5));
    head.init(cfg.head, hd_rng);
}

std::vector<NamedTensor> Model::parameters() {
    std::vector<NamedTensor> out;
    pointnet.collect("pointnet", out);
    voxel_encoder.collect("voxel_encoder", out);
    if (has_unet2d) unet2d.collect("unet2d", out);
    if (has_unet3d) unet3d.collect("unet3d", out);
    head.collect("head", out);
    return out;
}

std::vector<Tensor> Model::parameter_tensors() {
    std::vector<Tensor> out;
    for (auto& nt : parameters()) out.push_back(nt.tensor);
    return out;
}

void Model::zero_grads() {
    for (auto& t : parameter_tensors()) t.zero_grad();
}

Encoding Model::encode_over(const PointCloud& cloud, const std::vector<GridSpec>& grids) const {
    Encoding enc;
    Tensor feats = pointnet_encode_over(cloud, grids, pointnet);
    for (const GridSpec& spec : grids) {
        FeatureGrid fg = project_and_pool(feats, cloud.points, spec);
        enc.grids.push_back(is_plane(spec.layout) ? unet_forward(fg, unet2d) : unet_forward(fg, unet3d));
    }
    return enc;
}

Encoding Model::encode(const PointCloud& cloud) const {
    if (cfg.encoder.mode == EncoderMode::global_baseline) {
        Encoding enc;
        enc.global_code = op::reshape(global_encode(cloud, cfg.encoder, pointnet), {1, cfg.encoder.feature_dim});
        return enc;
    }
    return encode_over(cloud, grids_for_config(cfg.encoder));
}

Encoding Model::encode(const VoxelGrid& voxels) const {
    if (cfg.encoder.mode == EncoderMode::global_baseline)
        throw std::invalid_argument("encode: global baseline supports point-cloud input only");
    Encoding enc;
    Tensor feats = voxel_encode(voxels, cfg.encoder, voxel_encoder);
    const int r = voxels.resolution;
    if (mode_uses_volume(cfg.encoder.mode)) {
        FeatureGrid fg = make_feature_grid(GridLayout::volume, {r, r, r}, feats);
        enc.grids.push_back(unet_forward(fg, unet3d));
    }
    if (mode_uses_planes(cfg.encoder.mode)) {
        Tensor rows = op::channels_first_to_rows(feats);
        std::vector<Vec3> centers = voxel_center_positions(r);
        for (const GridSpec& spec : grids_for_config(cfg.encoder)) {
            if (!is_plane(spec.layout)) continue;
            FeatureGrid fg = project_and_pool(rows, centers, spec);
            enc.grids.push_back(unet_forward(fg, unet2d));
        }
    }
    return enc;
}

Tensor Model::query_logits(const Encoding& enc, const std::vector<Vec3>& p) const {
    Tensor psi;
    std::vector<Vec3> coords = p;
    if (enc.global_code.defined()) {
        std::vector<int64_t> idx(p.size(), 0);
        psi = op::gather_rows(enc.global_code, idx);
    } else {
        psi = query_feature(enc.grids, p, interp_mode());
        // The head sees in-cell offsets so that whole-cell translations of
        // (input, query) leave the prediction unchanged.
        std::vector<GridSpec> specs;
        for (const FeatureGrid& g : enc.grids) specs.push_back({g.layout, g.extents});
        std::array<int, 3> lattice = lattice_extents(specs);
        for (Vec3& q : coords) q = lattice_offset(q, lattice);
    }
    return occupancy_logits(coords, psi, head);
}

std::vector<double> Model::predict_probabilities(const Encoding& enc, const std::vector<Vec3>& p,
                                                 int chunk) const {
    std::vector<double> out;
    out.reserve(p.size());
    for (size_t begin = 0; begin < p.size(); begin += static_cast<size_t>(chunk)) {
        size_t end = std::min(p.size(), begin + static_cast<size_t>(chunk));
        std::vector<Vec3> part(p.begin() + static_cast<ptrdiff_t>(begin), p.begin() + static_cast<ptrdiff_t>(end));
        Tensor probs = op::sigmoid(query_logits(enc, part));
        out.insert(out.end(), probs.values().begin(), probs.values().end());
    }
    return out;
}

std::function<std::vector<double>(const std::vector<Vec3>&)> Model::field_evaluator(Encoding enc) const {
    auto held = std::make_shared<Encoding>(std::move(enc));
    const Model* self = this;
    return [self, held](const std::vector<Vec3>& p) { return self->predict_probabilities(*held, p); };
}

}  // namespace convocc
