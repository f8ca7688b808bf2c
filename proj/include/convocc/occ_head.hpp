#pragma once

#include <string>
#include <vector>

#include "convocc/feature_grid.hpp"
#include "convocc/geometry.hpp"
#include "convocc/nn_ops.hpp"

namespace convocc {

struct OccHeadConfig {
    int hidden_dim = 32;
    int resnet_blocks = 5;
    int feature_dim = 32;  // size of the injected psi vector
};

// Fully-connected ResNet head: lift p to hidden_dim, then blocks of
// h <- h + FC(act(FC(act(h + W_psi psi)))), final linear to one logit.
// The final layer is zero-initialized so the untrained model outputs
// probability 0.5 everywhere.
struct OccHeadParams {
    Tensor lift_w, lift_b;
    struct Block {
        Tensor psi_w;  // hidden x feature_dim, bias-free injection
        Tensor fc1_w, fc1_b;
        Tensor fc2_w, fc2_b;
    };
    std::vector<Block> blocks;
    Tensor final_w, final_b;

    void init(const OccHeadConfig& cfg, RngStream& rng);
    void collect(const std::string& prefix, std::vector<NamedTensor>& out);
};

// Feature query psi(p): plane grids sampled at the two in-plane
// coordinates, volume grids trilinearly; results summed across grids.
// Each grid's cells are sampled cell-centered: cell j of an E-cell axis
// sits at coordinate (j + 0.5) / E, so whole-cell translations of grid
// content translate psi exactly. Rejects an empty grid set.
Tensor query_feature(const std::vector<FeatureGrid>& grids, const std::vector<Vec3>& p,
                     ops::InterpMode interp);

// Logits {M,1} for M query points given per-point features psi {M,d}.
Tensor occupancy_logits(const std::vector<Vec3>& p, const Tensor& psi, const OccHeadParams& params);
// Probabilities in (0,1): sigmoid of the logits. Rejects non-finite psi.
Tensor occupancy_forward(const std::vector<Vec3>& p, const Tensor& psi, const OccHeadParams& params);

}  // namespace convocc
