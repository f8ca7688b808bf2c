#pragma once

#include "convocc/mise.hpp"
#include "convocc/model.hpp"

namespace convocc {

// Overlapping-crop inference for the fully-convolutional volume model.
// Crops tile the unit cube with `stride_cells` interior cells per axis and
// extend `margin_cells` beyond the interior on every side (clamped at the
// cube), so crop size = stride + 2*margin. Interior queries are answered
// only by the crop that owns them. Crop starts and margins stay aligned to
// the U-Net's total stride so pooling partitions match the whole-volume
// run.
struct SlidingWindowConfig {
    std::array<int, 3> stride_cells{16, 16, 16};
    int margin_cells = -1;  // <0 derives from the U-Net receptive field
    int jobs = 1;           // crop encodings run in parallel

    void set_stride(int s) { stride_cells = {s, s, s}; }
};

struct StitchedField {
    FieldEval eval;
    int crops_per_axis = 0;
    int margin_cells = 0;
};

StitchedField build_sliding_window_field(const Model& model, const PointCloud& cloud,
                                         const SlidingWindowConfig& cfg);

TriangleMesh sliding_window_reconstruct(const Model& model, const PointCloud& cloud,
                                        const SlidingWindowConfig& swcfg, const MiseConfig& misecfg);

}  // namespace convocc
