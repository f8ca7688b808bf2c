#include "convocc/sliding_window.hpp"

#include <cmath>
#include <memory>

#include "convocc/parallel.hpp"

namespace convocc {

namespace {

struct Crop {
    int lo[3], hi[3];  // cell range per axis
    Encoding enc;
};

int round_up(int v, int mult) { return ((v + mult - 1) / mult) * mult; }

}  // namespace

StitchedField build_sliding_window_field(const Model& model, const PointCloud& cloud,
                                         const SlidingWindowConfig& cfg) {
    if (model.cfg.encoder.mode != EncoderMode::volume)
        throw std::invalid_argument(
            "sliding_window: requires a volume-mode model (the fully-convolutional variant)");
    const int r = model.cfg.encoder.volume_resolution;
    const int align = 1 << model.unet3d.cfg.depth;
    for (int a = 0; a < 3; ++a) {
        int stride = cfg.stride_cells[static_cast<size_t>(a)];
        if (stride < 1 || r % stride != 0 || stride % align != 0)
            throw std::invalid_argument(
                "sliding_window: stride_cells must divide the volume resolution and be a multiple of the "
                "U-Net stride (" +
                std::to_string(align) + ")");
    }
    int margin = cfg.margin_cells >= 0 ? cfg.margin_cells
                                       : unet_receptive_field_radius_cells(model.unet3d.cfg) + 2;
    margin = round_up(margin, align);

    int crops_axis[3];
    for (int a = 0; a < 3; ++a) crops_axis[a] = r / cfg.stride_cells[static_cast<size_t>(a)];
    auto crops = std::make_shared<std::vector<Crop>>();
    crops->resize(static_cast<size_t>(crops_axis[0]) * crops_axis[1] * crops_axis[2]);

    parallel_for(static_cast<int64_t>(crops->size()), std::max(cfg.jobs, 1), [&](int64_t flat) {
        int cx = static_cast<int>(flat % crops_axis[0]);
        int cy = static_cast<int>((flat / crops_axis[0]) % crops_axis[1]);
        int cz = static_cast<int>(flat / (static_cast<int64_t>(crops_axis[0]) * crops_axis[1]));
        {
            {
                Crop& crop = (*crops)[static_cast<size_t>(flat)];
                int start[3] = {cx * cfg.stride_cells[0], cy * cfg.stride_cells[1],
                                cz * cfg.stride_cells[2]};
                for (int a = 0; a < 3; ++a) {
                    crop.lo[a] = std::max(0, start[a] - margin);
                    crop.hi[a] = std::min(r, start[a] + cfg.stride_cells[static_cast<size_t>(a)] + margin);
                }
                // Points whose cells fall inside the padded crop, mapped to
                // crop-local coordinates.
                PointCloud local;
                for (const Vec3& p : cloud.points) {
                    bool in = true;
                    Vec3 q;
                    for (int a = 0; a < 3; ++a) {
                        double cell = std::floor(std::clamp(p[a], 0.0, 1.0) * r);
                        cell = std::min(cell, static_cast<double>(r - 1));
                        if (cell < crop.lo[a] || cell >= crop.hi[a]) {
                            in = false;
                            break;
                        }
                        q[a] = (p[a] * r - crop.lo[a]) / (crop.hi[a] - crop.lo[a]);
                    }
                    if (in) local.points.push_back(q);
                }
                std::vector<int> extents{crop.hi[0] - crop.lo[0], crop.hi[1] - crop.lo[1],
                                         crop.hi[2] - crop.lo[2]};
                if (local.points.empty()) {
                    // Empty space: zero scattered features, but the
                    // convolutional stack still runs so biases match the
                    // whole-volume computation.
                    Tensor zero = Tensor::zeros(
                        {model.cfg.encoder.feature_dim, extents[2], extents[1], extents[0]});
                    FeatureGrid fg = make_feature_grid(GridLayout::volume, extents, std::move(zero));
                    crop.enc.grids.push_back(unet_forward(fg, model.unet3d));
                } else {
                    crop.enc = model.encode_over(local, {{GridLayout::volume, extents}});
                }
            }
        }
    });

    const Model* self = &model;
    std::array<int, 3> strides = cfg.stride_cells;
    std::array<int, 3> ncrops{crops_axis[0], crops_axis[1], crops_axis[2]};
    FieldEval eval = [self, crops, r, strides, ncrops](const std::vector<Vec3>& pts) {
        std::vector<double> out(pts.size(), 0.0);
        std::vector<std::vector<size_t>> buckets(crops->size());
        for (size_t i = 0; i < pts.size(); ++i) {
            int ci[3];
            for (int a = 0; a < 3; ++a) {
                double cell = std::floor(std::clamp(pts[i][a], 0.0, 1.0) * r);
                cell = std::min(cell, static_cast<double>(r - 1));
                ci[a] = std::min(static_cast<int>(cell) / strides[static_cast<size_t>(a)],
                                 ncrops[static_cast<size_t>(a)] - 1);
            }
            buckets[(static_cast<size_t>(ci[2]) * ncrops[1] + ci[1]) * ncrops[0] + ci[0]].push_back(i);
        }
        for (size_t b = 0; b < buckets.size(); ++b) {
            if (buckets[b].empty()) continue;
            const Crop& crop = (*crops)[b];
            std::vector<Vec3> local;
            local.reserve(buckets[b].size());
            for (size_t i : buckets[b]) {
                Vec3 q;
                for (int a = 0; a < 3; ++a)
                    q[a] = (pts[i][a] * r - crop.lo[a]) / (crop.hi[a] - crop.lo[a]);
                local.push_back(q);
            }
            std::vector<double> probs = self->predict_probabilities(crop.enc, local);
            for (size_t k = 0; k < buckets[b].size(); ++k) out[buckets[b][k]] = probs[k];
        }
        return out;
    };

    StitchedField field;
    field.eval = std::move(eval);
    field.crops_per_axis = std::max({ncrops[0], ncrops[1], ncrops[2]});
    field.margin_cells = margin;
    return field;
}

TriangleMesh sliding_window_reconstruct(const Model& model, const PointCloud& cloud,
                                        const SlidingWindowConfig& swcfg, const MiseConfig& misecfg) {
    StitchedField field = build_sliding_window_field(model, cloud, swcfg);
    return mise_extract(field.eval, misecfg);
}

}  // namespace convocc
