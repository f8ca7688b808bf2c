#pragma once

#include <string>
#include <vector>

#include "convocc/feature_grid.hpp"
#include "convocc/tensor.hpp"

namespace convocc {

struct UNetConfig {
    int dims = 2;
    int depth = 0;  // 0 derives the depth from receptive_field_depth(resolution)
    int in_channels = 32;
    int base_channels = 32;
    int max_channel_mult = 8;  // per-level growth x2, capped at mult * base
};

// Smallest depth whose analytic receptive field covers the grid:
// rf(1) = 4 (two 3-kernel convs through one down/up level), doubling per
// added level. Resolution must be a power of two >= 4.
int receptive_field_depth(int resolution);

// Half-width, in cells, of the true receptive field of one output cell,
// walked layer by layer through the down/up path. Sliding-window crops use
// this as the minimum overlap margin.
int unet_receptive_field_radius_cells(const UNetConfig& cfg);

int unet_level_channels(const UNetConfig& cfg, int level);

// Hourglass with two 3-convs per level, 2x average-pool downsampling,
// nearest-neighbor upsampling followed by a conv, skip connections by
// concatenation, ReLU activations, and a linear 1x1 output head mapping
// back to in_channels.
struct UNetParams {
    struct Conv {
        Tensor w, b;
    };
    struct EncLevel {
        Conv c1, c2;
    };
    struct DecLevel {
        Conv up, c1, c2;
    };
    UNetConfig cfg;
    std::vector<EncLevel> enc;
    EncLevel bottom;
    std::vector<DecLevel> dec;  // dec[l] consumes level l+1 output
    Conv head;                  // 1x1, linear

    void init(const UNetConfig& config, RngStream& rng);
    void collect(const std::string& prefix, std::vector<NamedTensor>& out);
    std::vector<Tensor> tensors();
};

// Shape-preserving; every spatial extent must be divisible by 2^depth.
Tensor unet_apply(const Tensor& input, const UNetParams& params);
FeatureGrid unet_forward(const FeatureGrid& grid, const UNetParams& params);

}  // namespace convocc
