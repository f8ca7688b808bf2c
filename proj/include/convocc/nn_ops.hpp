#pragma once

#include <cstdint>
#include <vector>

#include "convocc/feature_grid.hpp"
#include "convocc/tensor.hpp"

namespace convocc::ops {

// ---- elementwise ----
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);
// {N,d} -> {d}, columnwise max; ties resolve to the lowest row.
Tensor max_over_rows(const Tensor& x);

// ---- shape ----
Tensor concat(const Tensor& a, const Tensor& b, int axis);
// {d, spatial...} -> {prod(spatial), d}
Tensor channels_first_to_rows(const Tensor& x);
// {prod(spatial), d} -> {d, spatial...}
Tensor rows_to_channels_first(const Tensor& x, const std::vector<int>& spatial);
// Same element count, new shape.
Tensor reshape(const Tensor& x, Shape shape);

// ---- dense / conv ----
// x {N,in}, w {out,in}, b {out} -> {N,out}
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// x {Cin,H,W}, w {Cout,Cin,kh,kw}, b {Cout}; odd kernels only.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0);
// x {Cin,D,H,W}, w {Cout,Cin,kd,kh,kw}, b {Cout}
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0);
// dims in {2,3}; dispatches to conv2d/conv3d.
Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, int dims, int stride, int pad);

// ---- pooling / resampling (factor must divide the spatial extents) ----
Tensor avg_pool(const Tensor& x, int dims, int factor);
Tensor max_pool(const Tensor& x, int dims, int factor);
Tensor upsample_nearest(const Tensor& x, int dims, int factor);
Tensor upsample_linear(const Tensor& x, int dims, int factor);

// ---- scatter / gather ----
// out[c] = mean of feature rows with index c; untouched cells are zero.
Tensor scatter_mean(const std::vector<int64_t>& indices, const Tensor& features, int64_t cell_count);
// out[i] = src[indices[i]]
Tensor gather_rows(const Tensor& src, const std::vector<int64_t>& indices);

// ---- interpolation ----
enum class InterpMode { nearest, bilinear, trilinear };
const char* interp_mode_name(InterpMode mode);

// coords: flattened M x 2 (planes) or M x 3 (volume), each component in
// [0,1] (clamped otherwise); node i sits at i/(E-1). Returns {M,d};
// differentiable w.r.t. grid values. Bilinear on a volume or trilinear on
// a plane is rejected.
Tensor grid_sample(const FeatureGrid& grid, const std::vector<double>& coords, InterpMode mode);

// ---- loss ----
// Numerically stable mean BCE from logits. Labels must be 0/1.
Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<uint8_t>& labels);

// ---- generic primitive surface ----
enum class PrimOp {
    linear, conv, relu, sigmoid, add, concat,
    avg_pool, max_pool, upsample_nearest, upsample_linear
};
const char* prim_op_name(PrimOp op);

struct PrimAttrs {
    int dims = 2;    // conv/pool/upsample dimensionality
    int stride = 1;  // conv
    int pad = 0;     // conv
    int factor = 2;  // pool/upsample
    int axis = 0;    // concat
};

// Validates finiteness of every input, then dispatches to the typed op.
Tensor eval_primitive(PrimOp op, const std::vector<Tensor>& inputs, const PrimAttrs& attrs = {});

}  // namespace convocc::ops
