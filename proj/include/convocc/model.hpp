#pragma once

#include <functional>
#include <string>
#include <vector>

#include "convocc/encoder.hpp"
#include "convocc/occ_head.hpp"
#include "convocc/unet.hpp"

namespace convocc {

struct ModelConfig {
    EncoderConfig encoder;
    OccHeadConfig head;
    bool nearest_interp = false;  // ablation: nearest-neighbor feature lookup
    int unet2d_depth = 0;         // 0 derives from plane resolution
    int unet3d_depth = 0;         // 0 derives from volume resolution
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Processed feature grids (or the global code for the baseline mode).
struct Encoding {
    std::vector<FeatureGrid> grids;
    Tensor global_code;  // {1, d} when the baseline mode is active
};

// Full pipeline: encoder -> U-Net(s) -> feature query -> occupancy head.
struct Model {
    ModelConfig cfg;
    PointNetParams pointnet;
    VoxelEncoderParams voxel_encoder;
    UNetParams unet2d, unet3d;
    bool has_unet2d = false, has_unet3d = false;
    OccHeadParams head;

    void init(uint64_t seed);

    // Stable construction-order parameter list (checkpoint order).
    std::vector<NamedTensor> parameters();
    std::vector<Tensor> parameter_tensors();
    void zero_grads();

    Encoding encode(const PointCloud& cloud) const;
    Encoding encode(const VoxelGrid& voxels) const;
    // Crop-local encoding over explicit (possibly rectangular) grids;
    // used by sliding-window reconstruction.
    Encoding encode_over(const PointCloud& cloud, const std::vector<GridSpec>& grids) const;

    Tensor query_logits(const Encoding& enc, const std::vector<Vec3>& p) const;
    std::vector<double> predict_probabilities(const Encoding& enc, const std::vector<Vec3>& p,
                                              int chunk = 8192) const;
    // Batch occupancy evaluator over a fixed encoding (no recording).
    std::function<std::vector<double>(const std::vector<Vec3>&)> field_evaluator(Encoding enc) const;

    ops::InterpMode interp_mode() const {
        return cfg.nearest_interp ? ops::InterpMode::nearest : ops::InterpMode::bilinear;
    }
};

}  // namespace convocc
