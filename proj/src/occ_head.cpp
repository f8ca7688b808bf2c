#include "convocc/occ_head.hpp"

#include <cmath>

namespace convocc {

namespace op = ops;

void OccHeadParams::init(const OccHeadConfig& cfg, RngStream& rng) {
    if (cfg.hidden_dim < 1 || cfg.resnet_blocks < 1 || cfg.feature_dim < 1)
        throw std::invalid_argument("occ_head: bad config");
    auto he = [&](int out, int in) { return Tensor::randn({out, in}, rng, std::sqrt(2.0 / in), true); };
    lift_w = he(cfg.hidden_dim, 3);
    lift_b = Tensor::zeros({cfg.hidden_dim}, true);
    blocks.clear();
    for (int i = 0; i < cfg.resnet_blocks; ++i) {
        Block b;
        b.psi_w = he(cfg.hidden_dim, cfg.feature_dim);
        b.fc1_w = he(cfg.hidden_dim, cfg.hidden_dim);
        b.fc1_b = Tensor::zeros({cfg.hidden_dim}, true);
        b.fc2_w = he(cfg.hidden_dim, cfg.hidden_dim);
        b.fc2_b = Tensor::zeros({cfg.hidden_dim}, true);
        blocks.push_back(b);
    }
    final_w = Tensor::zeros({1, cfg.hidden_dim}, true);
    final_b = Tensor::zeros({1}, true);
}

void OccHeadParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".lift.w", lift_w});
    out.push_back({prefix + ".lift.b", lift_b});
    for (size_t i = 0; i < blocks.size(); ++i) {
        std::string bp = prefix + ".block" + std::to_string(i);
        out.push_back({bp + ".psi.w", blocks[i].psi_w});
        out.push_back({bp + ".fc1.w", blocks[i].fc1_w});
        out.push_back({bp + ".fc1.b", blocks[i].fc1_b});
        out.push_back({bp + ".fc2.w", blocks[i].fc2_w});
        out.push_back({bp + ".fc2.b", blocks[i].fc2_b});
    }
    out.push_back({prefix + ".final.w", final_w});
    out.push_back({prefix + ".final.b", final_b});
}

Tensor query_feature(const std::vector<FeatureGrid>& grids, const std::vector<Vec3>& p,
                     ops::InterpMode interp) {
    if (grids.empty()) throw std::invalid_argument("query_feature: empty grid set");
    const size_t m = p.size();
    Tensor psi;
    for (const FeatureGrid& grid : grids) {
        std::vector<double> coords;
        if (is_plane(grid.layout)) {
            coords.reserve(2 * m);
            const double eu = grid.extents[0], ev = grid.extents[1];
            for (const Vec3& q : p) {
                auto [u, v] = plane_uv(grid.layout, q);
                coords.push_back((u * eu - 0.5) / (eu - 1.0));
                coords.push_back((v * ev - 0.5) / (ev - 1.0));
            }
        } else {
            coords.reserve(3 * m);
            const double ex = grid.extents[0], ey = grid.extents[1], ez = grid.extents[2];
            for (const Vec3& q : p) {
                coords.push_back((q.x * ex - 0.5) / (ex - 1.0));
                coords.push_back((q.y * ey - 0.5) / (ey - 1.0));
                coords.push_back((q.z * ez - 0.5) / (ez - 1.0));
            }
        }
        op::InterpMode mode = interp;
        if (mode != op::InterpMode::nearest)
            mode = is_plane(grid.layout) ? op::InterpMode::bilinear : op::InterpMode::trilinear;
        Tensor sampled = op::grid_sample(grid, coords, mode);
        psi = psi.defined() ? op::add(psi, sampled) : sampled;
    }
    return psi;
}

Tensor occupancy_logits(const std::vector<Vec3>& p, const Tensor& psi, const OccHeadParams& params) {
    if (psi.ndim() != 2 || static_cast<size_t>(psi.dim(0)) != p.size())
        throw std::invalid_argument("occupancy_forward: psi " + shape_str(psi.shape()) + " vs " +
                                    std::to_string(p.size()) + " points");
    if (!psi.all_finite()) throw NumericalError("occupancy_forward: non-finite psi");
    std::vector<double> pv;
    pv.reserve(p.size() * 3);
    for (const Vec3& q : p) {
        pv.push_back(q.x);
        pv.push_back(q.y);
        pv.push_back(q.z);
    }
    Tensor pt = Tensor::from({static_cast<int>(p.size()), 3}, std::move(pv));
    Tensor h = op::linear(pt, params.lift_w, params.lift_b);
    Tensor psi_nob = Tensor::zeros({params.blocks[0].psi_w.dim(0)});
    for (const auto& block : params.blocks) {
        Tensor a = op::add(h, op::linear(psi, block.psi_w, psi_nob));
        a = op::linear(op::relu(a), block.fc1_w, block.fc1_b);
        a = op::linear(op::relu(a), block.fc2_w, block.fc2_b);
        h = op::add(h, a);
    }
    return op::linear(h, params.final_w, params.final_b);
}

Tensor occupancy_forward(const std::vector<Vec3>& p, const Tensor& psi, const OccHeadParams& params) {
    return op::sigmoid(occupancy_logits(p, psi, params));
}

}  // namespace convocc
