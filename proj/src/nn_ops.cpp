#include "convocc/nn_ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace convocc {

const char* grid_layout_name(GridLayout layout) {
    switch (layout) {
        case GridLayout::plane_xy: return "plane_xy";
        case GridLayout::plane_xz: return "plane_xz";
        case GridLayout::plane_yz: return "plane_yz";
        case GridLayout::volume: return "volume";
    }
    return "?";
}

bool is_plane(GridLayout layout) { return layout != GridLayout::volume; }

FeatureGrid make_feature_grid(GridLayout layout, const std::vector<int>& extents, Tensor data) {
    FeatureGrid g;
    g.layout = layout;
    g.extents = extents;
    size_t want = is_plane(layout) ? 2 : 3;
    if (extents.size() != want)
        throw std::invalid_argument(std::string("feature_grid: ") + grid_layout_name(layout) +
                                    " needs " + std::to_string(want) + " extents");
    if (is_plane(layout)) {
        if (data.ndim() != 3 || data.dim(1) != extents[1] || data.dim(2) != extents[0])
            throw std::invalid_argument("feature_grid: plane data shape " + shape_str(data.shape()) +
                                        " does not match extents");
    } else {
        if (data.ndim() != 4 || data.dim(1) != extents[2] || data.dim(2) != extents[1] ||
            data.dim(3) != extents[0])
            throw std::invalid_argument("feature_grid: volume data shape " + shape_str(data.shape()) +
                                        " does not match extents");
    }
    g.data = std::move(data);
    return g;
}

std::pair<double, double> plane_uv(GridLayout layout, const Vec3& p) {
    switch (layout) {
        case GridLayout::plane_xy: return {p.x, p.y};
        case GridLayout::plane_xz: return {p.x, p.z};
        case GridLayout::plane_yz: return {p.y, p.z};
        default: throw std::invalid_argument("plane_uv: not a plane layout");
    }
}

namespace ops {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using MapRow = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using MapConstRow = Eigen::Map<const RowMat>;

const char* interp_mode_name(InterpMode mode) {
    switch (mode) {
        case InterpMode::nearest: return "nearest";
        case InterpMode::bilinear: return "bilinear";
        case InterpMode::trilinear: return "trilinear";
    }
    return "?";
}

const char* prim_op_name(PrimOp op) {
    switch (op) {
        case PrimOp::linear: return "linear";
        case PrimOp::conv: return "conv";
        case PrimOp::relu: return "relu";
        case PrimOp::sigmoid: return "sigmoid";
        case PrimOp::add: return "add";
        case PrimOp::concat: return "concat";
        case PrimOp::avg_pool: return "avg_pool";
        case PrimOp::max_pool: return "max_pool";
        case PrimOp::upsample_nearest: return "upsample_nearest";
        case PrimOp::upsample_linear: return "upsample_linear";
    }
    return "?";
}

// ---------------------------------------------------------------- elementwise

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* xv = x.data();
    double* ov = out.data();
    int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            const double* xv = x.data();
            for (size_t i = 0; i < gx.size(); ++i)
                if (xv[i] > 0.0) gx[i] += (*go)[i];
        });
    }
    return out;
}

static double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* xv = x.data();
    double* ov = out.data();
    for (int64_t i = 0; i < x.size(); ++i) ov[i] = stable_sigmoid(xv[i]);
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            const double* s = out.data();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[i] * s[i] * (1.0 - s[i]);
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    for (int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] + bv[i];
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([a, b, out](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& ga = t.grad_buffer(a);
            auto& gb = t.grad_buffer(b);
            for (size_t i = 0; i < ga.size(); ++i) {
                ga[i] += (*go)[i];
                gb[i] += (*go)[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([a, b, out](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& ga = t.grad_buffer(a);
            auto& gb = t.grad_buffer(b);
            for (size_t i = 0; i < ga.size(); ++i) {
                ga[i] += (*go)[i] * b.data()[i];
                gb[i] += (*go)[i] * a.data()[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double s) {
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * s;
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out, s](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[i] * s;
        });
    }
    return out;
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
    Tensor out = Tensor::scalar(s);
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[0];
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor max_over_rows(const Tensor& x) {
    if (x.ndim() != 2) throw std::invalid_argument("max_over_rows: need {N,d}, got " + shape_str(x.shape()));
    int n = x.dim(0), d = x.dim(1);
    Tensor out = Tensor::zeros({d});
    std::vector<int> argmax(static_cast<size_t>(d), 0);
    for (int c = 0; c < d; ++c) out.data()[c] = x.data()[c];
    for (int r = 1; r < n; ++r)
        for (int c = 0; c < d; ++c) {
            double v = x.data()[static_cast<int64_t>(r) * d + c];
            if (v > out.data()[c]) {
                out.data()[c] = v;
                argmax[static_cast<size_t>(c)] = r;
            }
        }
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out, argmax, d](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            for (int c = 0; c < d; ++c)
                gx[static_cast<size_t>(argmax[static_cast<size_t>(c)]) * d + c] += (*go)[static_cast<size_t>(c)];
        });
    }
    return out;
}

// ---------------------------------------------------------------- shape

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    if (a.ndim() != b.ndim())
        throw std::invalid_argument("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    if (axis < 0 || axis >= a.ndim()) throw std::invalid_argument("concat: bad axis " + std::to_string(axis));
    for (int i = 0; i < a.ndim(); ++i)
        if (i != axis && a.dim(i) != b.dim(i))
            throw std::invalid_argument("concat: shape mismatch " + shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()) + " on axis " + std::to_string(i));
    Shape os = a.shape();
    os[static_cast<size_t>(axis)] += b.dim(axis);
    Tensor out = Tensor::zeros(os);

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.ndim(); ++i) inner *= a.dim(i);
    int64_t la = a.dim(axis) * inner, lb = b.dim(axis) * inner;
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * (la + lb), a.data() + o * la, sizeof(double) * static_cast<size_t>(la));
        std::memcpy(out.data() + o * (la + lb) + la, b.data() + o * lb, sizeof(double) * static_cast<size_t>(lb));
    }
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([a, b, out, outer, la, lb](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& ga = t.grad_buffer(a);
            auto& gb = t.grad_buffer(b);
            for (int64_t o = 0; o < outer; ++o) {
                const double* g = go->data() + o * (la + lb);
                for (int64_t i = 0; i < la; ++i) ga[static_cast<size_t>(o * la + i)] += g[i];
                for (int64_t i = 0; i < lb; ++i) gb[static_cast<size_t>(o * lb + i)] += g[la + i];
            }
        });
    }
    return out;
}

Tensor channels_first_to_rows(const Tensor& x) {
    if (x.ndim() < 2) throw std::invalid_argument("channels_first_to_rows: need channels-first tensor");
    int d = x.dim(0);
    int64_t s = x.size() / d;
    Tensor out = Tensor::zeros({static_cast<int>(s), d});
    for (int c = 0; c < d; ++c)
        for (int64_t i = 0; i < s; ++i) out.data()[i * d + c] = x.data()[c * s + i];
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out, d, s](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            for (int c = 0; c < d; ++c)
                for (int64_t i = 0; i < s; ++i) gx[static_cast<size_t>(c * s + i)] += (*go)[static_cast<size_t>(i * d + c)];
        });
    }
    return out;
}

Tensor rows_to_channels_first(const Tensor& x, const std::vector<int>& spatial) {
    if (x.ndim() != 2) throw std::invalid_argument("rows_to_channels_first: need {S,d}, got " + shape_str(x.shape()));
    int64_t s = 1;
    for (int e : spatial) s *= e;
    if (s != x.dim(0))
        throw std::invalid_argument("rows_to_channels_first: spatial volume " + std::to_string(s) +
                                    " != rows " + std::to_string(x.dim(0)));
    int d = x.dim(1);
    Shape os{d};
    for (int e : spatial) os.push_back(e);
    Tensor out = Tensor::zeros(os);
    for (int c = 0; c < d; ++c)
        for (int64_t i = 0; i < s; ++i) out.data()[c * s + i] = x.data()[i * d + c];
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out, d, s](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            for (int c = 0; c < d; ++c)
                for (int64_t i = 0; i < s; ++i)
                    gx[static_cast<size_t>(i * d + c)] += (*go)[static_cast<size_t>(c * s + i)];
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                                    " changes element count");
    Tensor out = Tensor::from_aligned(std::move(shape), x.values());
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------- linear

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1)
        throw std::invalid_argument("linear: need x{N,in} w{out,in} b{out}, got x" + shape_str(x.shape()) +
                                    " w" + shape_str(w.shape()) + " b" + shape_str(b.shape()));
    int n = x.dim(0), in = x.dim(1), outd = w.dim(0);
    if (w.dim(1) != in || b.dim(0) != outd)
        throw std::invalid_argument("linear: dim mismatch x" + shape_str(x.shape()) + " w" +
                                    shape_str(w.shape()) + " b" + shape_str(b.shape()));
    Tensor out = Tensor::zeros({n, outd});
    {
        MapConstRow xm(x.data(), n, in), wm(w.data(), outd, in);
        Eigen::Map<RowMat> om(out.data(), n, outd);
        om.noalias() = xm * wm.transpose();
        om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), outd);
    }
    if (should_record({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, w, b, out, n, in, outd](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            MapConstRow gom(go->data(), n, outd);
            MapConstRow xm(x.data(), n, in), wm(w.data(), outd, in);
            {
                auto& gx = t.grad_buffer(x);
                Eigen::Map<RowMat> gxm(gx.data(), n, in);
                gxm.noalias() += gom * wm;
            }
            {
                auto& gw = t.grad_buffer(w);
                Eigen::Map<RowMat> gwm(gw.data(), outd, in);
                gwm.noalias() += gom.transpose() * xm;
            }
            {
                auto& gb = t.grad_buffer(b);
                Eigen::Map<Eigen::RowVectorXd> gbm(gb.data(), outd);
                gbm.noalias() += gom.colwise().sum();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- conv

namespace {

struct ConvGeom {
    int dims;
    int cin, cout;
    int in[3];   // spatial, slowest first (D,H,W); D=1 for 2D
    int k[3];    // kernel extents, k[0]=1 for 2D
    int out[3];
    int stride, pad;
    int64_t kvol() const { return static_cast<int64_t>(cin) * k[0] * k[1] * k[2]; }
    int64_t out_positions() const { return static_cast<int64_t>(out[0]) * out[1] * out[2]; }
};

ConvGeom conv_geometry(const char* name, const Tensor& x, const Tensor& w, const Tensor& b, int dims,
                       int stride, int pad) {
    ConvGeom g{};
    g.dims = dims;
    g.stride = stride;
    g.pad = pad;
    if (stride < 1) throw std::invalid_argument(std::string(name) + ": stride must be >= 1");
    if (pad < 0) throw std::invalid_argument(std::string(name) + ": pad must be >= 0");
    if (x.ndim() != dims + 1 || w.ndim() != dims + 2 || b.ndim() != 1)
        throw std::invalid_argument(std::string(name) + ": bad ranks x" + shape_str(x.shape()) + " w" +
                                    shape_str(w.shape()) + " b" + shape_str(b.shape()));
    g.cin = x.dim(0);
    g.cout = w.dim(0);
    if (w.dim(1) != g.cin)
        throw std::invalid_argument(std::string(name) + ": input channels " + std::to_string(g.cin) +
                                    " != kernel channels " + std::to_string(w.dim(1)));
    if (b.dim(0) != g.cout)
        throw std::invalid_argument(std::string(name) + ": bias size " + std::to_string(b.dim(0)) +
                                    " != output channels " + std::to_string(g.cout));
    g.in[0] = g.k[0] = g.out[0] = 1;
    for (int a = 0; a < dims; ++a) {
        g.in[3 - dims + a] = x.dim(1 + a);
        g.k[3 - dims + a] = w.dim(2 + a);
    }
    for (int a = 3 - dims; a < 3; ++a) {
        if (g.k[a] % 2 == 0)
            throw std::invalid_argument(std::string(name) + ": kernel extent " + std::to_string(g.k[a]) +
                                        " must be odd");
        int span = g.in[a] + 2 * pad;
        int o = (span - g.k[a]) / stride + 1;
        if (o < 1)
            throw std::invalid_argument(std::string(name) + ": kernel " + std::to_string(g.k[a]) +
                                        " larger than padded input " + std::to_string(span));
        g.out[a] = o;
    }
    return g;
}

// The unfolded (im2col) matrix is built row-major, one row per kernel
// tap (ci, kz, ky, kx), so rows fill with contiguous memcpy spans. Chunks
// cover whole output rows (2D) or slices (3D).
struct ConvChunker {
    int64_t outer_count;   // output rows (2D) or slices (3D)
    int64_t cols_per_outer;
    int64_t outers_per_chunk;
};

ConvChunker conv_chunker(const ConvGeom& g) {
    ConvChunker c{};
    if (g.dims == 2) {
        c.outer_count = g.out[1];
        c.cols_per_outer = g.out[2];
    } else {
        c.outer_count = g.out[0];
        c.cols_per_outer = static_cast<int64_t>(g.out[1]) * g.out[2];
    }
    int64_t budget = 6000000 / std::max<int64_t>(g.kvol(), 1);  // ~48 MB of doubles
    c.outers_per_chunk = std::clamp<int64_t>(budget / std::max<int64_t>(c.cols_per_outer, 1), 1,
                                             c.outer_count);
    return c;
}

// Fills rows [all K] x columns for outer range [o0, o1) of the unfolded
// matrix (row-major, leading dimension = chunk width).
void unfold_rows(const ConvGeom& g, const double* x, int64_t o0, int64_t o1, double* col,
                 int64_t chunk_cols) {
    const int64_t in_hw = static_cast<int64_t>(g.in[1]) * g.in[2];
    const int64_t in_dhw = in_hw * g.in[0];
    const int pz = g.dims == 3 ? g.pad : 0;
    const int oy_count = g.dims == 2 ? 1 : g.out[1];
    int64_t r = 0;
    for (int ci = 0; ci < g.cin; ++ci) {
        const double* xc = x + ci * in_dhw;
        for (int kz = 0; kz < g.k[0]; ++kz)
            for (int ky = 0; ky < g.k[1]; ++ky)
                for (int kx = 0; kx < g.k[2]; ++kx, ++r) {
                    double* row = col + r * chunk_cols;
                    for (int64_t outer = o0; outer < o1; ++outer) {
                        // 2D: outer = oy; 3D: outer = oz with an inner oy loop.
                        int oz = g.dims == 2 ? 0 : static_cast<int>(outer);
                        int iz = oz * g.stride + kz - pz;
                        bool z_ok = iz >= 0 && iz < g.in[0];
                        for (int oy_i = 0; oy_i < oy_count; ++oy_i) {
                            int oy = g.dims == 2 ? static_cast<int>(outer) : oy_i;
                            double* dst = row + (outer - o0) * g.out[2] * (g.dims == 2 ? 1 : g.out[1]) +
                                          (g.dims == 2 ? 0 : static_cast<int64_t>(oy_i) * g.out[2]);
                            int iy = oy * g.stride + ky - g.pad;
                            if (!z_ok || iy < 0 || iy >= g.in[1]) {
                                std::fill(dst, dst + g.out[2], 0.0);
                                continue;
                            }
                            const double* src_row = xc + static_cast<int64_t>(iz) * in_hw +
                                                    static_cast<int64_t>(iy) * g.in[2];
                            if (g.stride == 1) {
                                int sx0 = kx - g.pad;  // source x at ox = 0
                                int begin = std::max(0, -sx0);
                                int end = std::min(g.out[2], g.in[2] - sx0);
                                if (end < begin) end = begin;
                                std::fill(dst, dst + begin, 0.0);
                                if (end > begin)
                                    std::memcpy(dst + begin, src_row + begin + sx0,
                                                sizeof(double) * static_cast<size_t>(end - begin));
                                std::fill(dst + end, dst + g.out[2], 0.0);
                            } else {
                                for (int ox = 0; ox < g.out[2]; ++ox) {
                                    int ix = ox * g.stride + kx - g.pad;
                                    dst[ox] = (ix >= 0 && ix < g.in[2]) ? src_row[ix] : 0.0;
                                }
                            }
                        }
                    }
                }
    }
}

// Transpose of unfold_rows: scatter-adds the unfolded gradient back into gx.
void fold_rows_add(const ConvGeom& g, const double* col, int64_t o0, int64_t o1, double* gx,
                   int64_t chunk_cols) {
    const int64_t in_hw = static_cast<int64_t>(g.in[1]) * g.in[2];
    const int64_t in_dhw = in_hw * g.in[0];
    const int pz = g.dims == 3 ? g.pad : 0;
    const int oy_count = g.dims == 2 ? 1 : g.out[1];
    int64_t r = 0;
    for (int ci = 0; ci < g.cin; ++ci) {
        double* xc = gx + ci * in_dhw;
        for (int kz = 0; kz < g.k[0]; ++kz)
            for (int ky = 0; ky < g.k[1]; ++ky)
                for (int kx = 0; kx < g.k[2]; ++kx, ++r) {
                    const double* row = col + r * chunk_cols;
                    for (int64_t outer = o0; outer < o1; ++outer) {
                        int oz = g.dims == 2 ? 0 : static_cast<int>(outer);
                        int iz = oz * g.stride + kz - pz;
                        bool z_ok = iz >= 0 && iz < g.in[0];
                        for (int oy_i = 0; oy_i < oy_count; ++oy_i) {
                            int oy = g.dims == 2 ? static_cast<int>(outer) : oy_i;
                            const double* src = row + (outer - o0) * g.out[2] * (g.dims == 2 ? 1 : g.out[1]) +
                                                (g.dims == 2 ? 0 : static_cast<int64_t>(oy_i) * g.out[2]);
                            int iy = oy * g.stride + ky - g.pad;
                            if (!z_ok || iy < 0 || iy >= g.in[1]) continue;
                            double* dst_row = xc + static_cast<int64_t>(iz) * in_hw +
                                              static_cast<int64_t>(iy) * g.in[2];
                            if (g.stride == 1) {
                                int sx0 = kx - g.pad;
                                int begin = std::max(0, -sx0);
                                int end = std::min(g.out[2], g.in[2] - sx0);
                                for (int ox = begin; ox < end; ++ox) dst_row[ox + sx0] += src[ox];
                            } else {
                                for (int ox = 0; ox < g.out[2]; ++ox) {
                                    int ix = ox * g.stride + kx - g.pad;
                                    if (ix >= 0 && ix < g.in[2]) dst_row[ix] += src[ox];
                                }
                            }
                        }
                    }
                }
    }
}

// Unfold buffers are reused across calls; convolutions never nest.
DVec& conv_scratch(int which, int64_t need) {
    static thread_local DVec bufs[2];
    DVec& v = bufs[which];
    if (static_cast<int64_t>(v.size()) < need) v.resize(static_cast<size_t>(need));
    return v;
}

Tensor conv_impl(const char* name, const Tensor& x, const Tensor& w, const Tensor& b, int dims, int stride,
                 int pad) {
    ConvGeom g = conv_geometry(name, x, w, b, dims, stride, pad);
    Shape os;
    os.push_back(g.cout);
    for (int a = 3 - dims; a < 3; ++a) os.push_back(g.out[a]);
    Tensor out = Tensor::zeros(os);

    const int64_t K = g.kvol();
    const int64_t P = g.out_positions();
    ConvChunker ch = conv_chunker(g);
    const int64_t chunk_cols = ch.outers_per_chunk * ch.cols_per_outer;
    double* col = conv_scratch(0, K * chunk_cols).data();
    MapConstRow wm(w.data(), g.cout, K);
    for (int64_t o0 = 0; o0 < ch.outer_count; o0 += ch.outers_per_chunk) {
        int64_t o1 = std::min(ch.outer_count, o0 + ch.outers_per_chunk);
        int64_t ncols = (o1 - o0) * ch.cols_per_outer;
        unfold_rows(g, x.data(), o0, o1, col, chunk_cols);
        Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> colm(col, K, ncols,
                                                               Eigen::OuterStride<>(chunk_cols));
        MapRow om(out.data() + o0 * ch.cols_per_outer, g.cout, ncols, Eigen::OuterStride<>(P));
        om.noalias() = wm * colm;
    }
    for (int co = 0; co < g.cout; ++co) {
        double* oc = out.data() + co * P;
        double bias = b.data()[co];
        for (int64_t i = 0; i < P; ++i) oc[i] += bias;
    }

    if (should_record({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, w, b, out, g](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            const int64_t K = g.kvol();
            const int64_t P = g.out_positions();
            ConvChunker ch = conv_chunker(g);
            const int64_t chunk_cols = ch.outers_per_chunk * ch.cols_per_outer;
            auto& gx = t.grad_buffer(x);
            auto& gw = t.grad_buffer(w);
            auto& gb = t.grad_buffer(b);
            MapConstRow wm(w.data(), g.cout, K);
            Eigen::Map<RowMat> gwm(gw.data(), g.cout, K);
            double* col = conv_scratch(0, K * chunk_cols).data();
            double* gcol = conv_scratch(1, K * chunk_cols).data();
            for (int64_t o0 = 0; o0 < ch.outer_count; o0 += ch.outers_per_chunk) {
                int64_t o1 = std::min(ch.outer_count, o0 + ch.outers_per_chunk);
                int64_t ncols = (o1 - o0) * ch.cols_per_outer;
                unfold_rows(g, x.data(), o0, o1, col, chunk_cols);
                Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> colm(col, K, ncols,
                                                                       Eigen::OuterStride<>(chunk_cols));
                Eigen::Map<RowMat, 0, Eigen::OuterStride<>> gcolm(gcol, K, ncols,
                                                                  Eigen::OuterStride<>(chunk_cols));
                Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> gom(go->data() + o0 * ch.cols_per_outer,
                                                                      g.cout, ncols,
                                                                      Eigen::OuterStride<>(P));
                gwm.noalias() += gom * colm.transpose();
                gcolm.noalias() = wm.transpose() * gom;
                fold_rows_add(g, gcol, o0, o1, gx.data(), chunk_cols);
            }
            for (int co = 0; co < g.cout; ++co) {
                const double* gc = go->data() + co * P;
                double s = 0.0;
                for (int64_t i = 0; i < P; ++i) s += gc[i];
                gb[static_cast<size_t>(co)] += s;
            }
        });
    }
    return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    return conv_impl("conv2d", x, w, b, 2, stride, pad);
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    return conv_impl("conv3d", x, w, b, 3, stride, pad);
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, int dims, int stride, int pad) {
    if (dims == 2) return conv2d(x, w, b, stride, pad);
    if (dims == 3) return conv3d(x, w, b, stride, pad);
    throw std::invalid_argument("conv: dims must be 2 or 3, got " + std::to_string(dims));
}

// ---------------------------------------------------------------- pool / resample

namespace {

struct SpatialGeom {
    int c;
    int s[3];  // slowest first; s[0]=1 for 2D
};

SpatialGeom spatial_geometry(const char* name, const Tensor& x, int dims) {
    if (dims != 2 && dims != 3)
        throw std::invalid_argument(std::string(name) + ": dims must be 2 or 3");
    if (x.ndim() != dims + 1)
        throw std::invalid_argument(std::string(name) + ": expected rank " + std::to_string(dims + 1) +
                                    " channels-first tensor, got " + shape_str(x.shape()));
    SpatialGeom g{};
    g.c = x.dim(0);
    g.s[0] = 1;
    for (int a = 0; a < dims; ++a) g.s[3 - dims + a] = x.dim(1 + a);
    return g;
}

void check_divisible(const char* name, const SpatialGeom& g, int dims, int factor) {
    if (factor < 1) throw std::invalid_argument(std::string(name) + ": factor must be >= 1");
    for (int a = 3 - dims; a < 3; ++a)
        if (g.s[a] % factor != 0)
            throw std::invalid_argument(std::string(name) + ": factor " + std::to_string(factor) +
                                        " does not divide extent " + std::to_string(g.s[a]));
}

Shape pooled_shape(const SpatialGeom& g, int dims, int factor) {
    Shape os{g.c};
    for (int a = 3 - dims; a < 3; ++a) os.push_back(g.s[a] / factor);
    return os;
}

}  // namespace

Tensor avg_pool(const Tensor& x, int dims, int factor) {
    SpatialGeom g = spatial_geometry("avg_pool", x, dims);
    check_divisible("avg_pool", g, dims, factor);
    int fz = dims == 3 ? factor : 1;
    int oz = g.s[0] / fz, oy = g.s[1] / factor, ox = g.s[2] / factor;
    Tensor out = Tensor::zeros(pooled_shape(g, dims, factor));
    double inv = 1.0 / (static_cast<double>(fz) * factor * factor);
    const int64_t in_hw = static_cast<int64_t>(g.s[1]) * g.s[2];
    const int64_t out_n = static_cast<int64_t>(oz) * oy * ox;
    for (int c = 0; c < g.c; ++c) {
        const double* xc = x.data() + c * in_hw * g.s[0];
        double* oc = out.data() + c * out_n;
        for (int z = 0; z < oz; ++z)
            for (int y = 0; y < oy; ++y)
                for (int xo = 0; xo < ox; ++xo) {
                    double s = 0.0;
                    for (int dz = 0; dz < fz; ++dz)
                        for (int dy = 0; dy < factor; ++dy) {
                            const double* row = xc + (z * fz + dz) * in_hw +
                                                static_cast<int64_t>(y * factor + dy) * g.s[2] +
                                                static_cast<int64_t>(xo) * factor;
                            for (int dx = 0; dx < factor; ++dx) s += row[dx];
                        }
                    oc[(static_cast<int64_t>(z) * oy + y) * ox + xo] = s * inv;
                }
    }
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out, g, factor, fz, oz, oy, ox, inv](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            const int64_t in_hw = static_cast<int64_t>(g.s[1]) * g.s[2];
            const int64_t out_n = static_cast<int64_t>(oz) * oy * ox;
            for (int c = 0; c < g.c; ++c) {
                double* gxc = gx.data() + c * in_hw * g.s[0];
                const double* gc = go->data() + c * out_n;
                for (int z = 0; z < oz; ++z)
                    for (int y = 0; y < oy; ++y)
                        for (int xo = 0; xo < ox; ++xo) {
                            double gv = gc[(static_cast<int64_t>(z) * oy + y) * ox + xo] * inv;
                            for (int dz = 0; dz < fz; ++dz)
                                for (int dy = 0; dy < factor; ++dy) {
                                    double* row = gxc + (z * fz + dz) * in_hw +
                                                  static_cast<int64_t>(y * factor + dy) * g.s[2] +
                                                  static_cast<int64_t>(xo) * factor;
                                    for (int dx = 0; dx < factor; ++dx) row[dx] += gv;
                                }
                        }
            }
        });
    }
    return out;
}

Tensor max_pool(const Tensor& x, int dims, int factor) {
    SpatialGeom g = spatial_geometry("max_pool", x, dims);
    check_divisible("max_pool", g, dims, factor);
    int fz = dims == 3 ? factor : 1;
    int oz = g.s[0] / fz, oy = g.s[1] / factor, ox = g.s[2] / factor;
    Tensor out = Tensor::zeros(pooled_shape(g, dims, factor));
    std::vector<int64_t> argmax(static_cast<size_t>(out.size()), 0);
    const int64_t in_hw = static_cast<int64_t>(g.s[1]) * g.s[2];
    const int64_t out_n = static_cast<int64_t>(oz) * oy * ox;
    for (int c = 0; c < g.c; ++c) {
        const double* xc = x.data() + c * in_hw * g.s[0];
        for (int z = 0; z < oz; ++z)
            for (int y = 0; y < oy; ++y)
                for (int xo = 0; xo < ox; ++xo) {
                    double best = -std::numeric_limits<double>::infinity();
                    int64_t best_i = 0;
                    for (int dz = 0; dz < fz; ++dz)
                        for (int dy = 0; dy < factor; ++dy)
                            for (int dx = 0; dx < factor; ++dx) {
                                int64_t idx = (z * fz + dz) * in_hw +
                                              static_cast<int64_t>(y * factor + dy) * g.s[2] + xo * factor + dx;
                                if (xc[idx] > best) {
                                    best = xc[idx];
                                    best_i = idx;
                                }
                            }
                    int64_t o = c * out_n + (static_cast<int64_t>(z) * oy + y) * ox + xo;
                    out.data()[o] = best;
                    argmax[static_cast<size_t>(o)] = c * in_hw * g.s[0] + best_i;
                }
    }
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out, argmax](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            for (size_t i = 0; i < argmax.size(); ++i) gx[static_cast<size_t>(argmax[i])] += (*go)[i];
        });
    }
    return out;
}

Tensor upsample_nearest(const Tensor& x, int dims, int factor) {
    SpatialGeom g = spatial_geometry("upsample_nearest", x, dims);
    if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
    int fz = dims == 3 ? factor : 1;
    int oz = g.s[0] * fz, oy = g.s[1] * factor, ox = g.s[2] * factor;
    Shape os{g.c};
    for (int a = 3 - dims; a < 3; ++a) os.push_back(g.s[a] * factor);
    Tensor out = Tensor::zeros(os);
    const int64_t in_n = static_cast<int64_t>(g.s[0]) * g.s[1] * g.s[2];
    const int64_t out_n = static_cast<int64_t>(oz) * oy * ox;
    for (int c = 0; c < g.c; ++c) {
        const double* xc = x.data() + c * in_n;
        double* oc = out.data() + c * out_n;
        for (int z = 0; z < oz; ++z)
            for (int y = 0; y < oy; ++y) {
                const double* row = xc + (static_cast<int64_t>(z / fz) * g.s[1] + y / factor) * g.s[2];
                double* orow = oc + (static_cast<int64_t>(z) * oy + y) * ox;
                for (int xo = 0; xo < ox; ++xo) orow[xo] = row[xo / factor];
            }
    }
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out, g, factor, fz, oz, oy, ox](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            const int64_t in_n = static_cast<int64_t>(g.s[0]) * g.s[1] * g.s[2];
            const int64_t out_n = static_cast<int64_t>(oz) * oy * ox;
            for (int c = 0; c < g.c; ++c) {
                double* gxc = gx.data() + c * in_n;
                const double* gc = go->data() + c * out_n;
                for (int z = 0; z < oz; ++z)
                    for (int y = 0; y < oy; ++y) {
                        double* row = gxc + (static_cast<int64_t>(z / fz) * g.s[1] + y / factor) * g.s[2];
                        const double* grow = gc + (static_cast<int64_t>(z) * oy + y) * ox;
                        for (int xo = 0; xo < ox; ++xo) row[xo / factor] += grow[xo];
                    }
            }
        });
    }
    return out;
}

namespace {

// Per output index along one axis: source pair (i0,i1) and weight of i1.
struct LinearAxis {
    std::vector<int> i0, i1;
    std::vector<double> t;
};

LinearAxis linear_axis(int in, int factor) {
    LinearAxis a;
    int out = in * factor;
    a.i0.resize(static_cast<size_t>(out));
    a.i1.resize(static_cast<size_t>(out));
    a.t.resize(static_cast<size_t>(out));
    for (int j = 0; j < out; ++j) {
        double s = (j + 0.5) / factor - 0.5;
        if (s <= 0.0) {
            a.i0[static_cast<size_t>(j)] = a.i1[static_cast<size_t>(j)] = 0;
            a.t[static_cast<size_t>(j)] = 0.0;
        } else if (s >= in - 1) {
            a.i0[static_cast<size_t>(j)] = a.i1[static_cast<size_t>(j)] = in - 1;
            a.t[static_cast<size_t>(j)] = 0.0;
        } else {
            int i = static_cast<int>(std::floor(s));
            a.i0[static_cast<size_t>(j)] = i;
            a.i1[static_cast<size_t>(j)] = i + 1;
            a.t[static_cast<size_t>(j)] = s - i;
        }
    }
    return a;
}

}  // namespace

Tensor upsample_linear(const Tensor& x, int dims, int factor) {
    SpatialGeom g = spatial_geometry("upsample_linear", x, dims);
    if (factor < 1) throw std::invalid_argument("upsample_linear: factor must be >= 1");
    int fz = dims == 3 ? factor : 1;
    int oz = g.s[0] * fz, oy = g.s[1] * factor, ox = g.s[2] * factor;
    Shape os{g.c};
    for (int a = 3 - dims; a < 3; ++a) os.push_back(g.s[a] * factor);
    Tensor out = Tensor::zeros(os);
    LinearAxis az = dims == 3 ? linear_axis(g.s[0], factor) : LinearAxis{{0}, {0}, {0.0}};
    LinearAxis ay = linear_axis(g.s[1], factor), ax = linear_axis(g.s[2], factor);
    const int64_t in_hw = static_cast<int64_t>(g.s[1]) * g.s[2];
    const int64_t in_n = in_hw * g.s[0];
    const int64_t out_n = static_cast<int64_t>(oz) * oy * ox;
    for (int c = 0; c < g.c; ++c) {
        const double* xc = x.data() + c * in_n;
        double* oc = out.data() + c * out_n;
        for (int z = 0; z < oz; ++z) {
            double tz = az.t[static_cast<size_t>(z)];
            const double* z0 = xc + static_cast<int64_t>(az.i0[static_cast<size_t>(z)]) * in_hw;
            const double* z1 = xc + static_cast<int64_t>(az.i1[static_cast<size_t>(z)]) * in_hw;
            for (int y = 0; y < oy; ++y) {
                double ty = ay.t[static_cast<size_t>(y)];
                int y0 = ay.i0[static_cast<size_t>(y)], y1 = ay.i1[static_cast<size_t>(y)];
                double* orow = oc + (static_cast<int64_t>(z) * oy + y) * ox;
                for (int xo = 0; xo < ox; ++xo) {
                    double tx = ax.t[static_cast<size_t>(xo)];
                    int x0 = ax.i0[static_cast<size_t>(xo)], x1 = ax.i1[static_cast<size_t>(xo)];
                    auto bil = [&](const double* plane) {
                        double v00 = plane[static_cast<int64_t>(y0) * g.s[2] + x0];
                        double v01 = plane[static_cast<int64_t>(y0) * g.s[2] + x1];
                        double v10 = plane[static_cast<int64_t>(y1) * g.s[2] + x0];
                        double v11 = plane[static_cast<int64_t>(y1) * g.s[2] + x1];
                        return (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
                    };
                    orow[xo] = (1 - tz) * bil(z0) + tz * bil(z1);
                }
            }
        }
    }
    if (should_record({&x})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([x, out, g, az, ay, ax, oz, oy, ox](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gx = t.grad_buffer(x);
            const int64_t in_hw = static_cast<int64_t>(g.s[1]) * g.s[2];
            const int64_t in_n = in_hw * g.s[0];
            const int64_t out_n = static_cast<int64_t>(oz) * oy * ox;
            for (int c = 0; c < g.c; ++c) {
                double* gxc = gx.data() + c * in_n;
                const double* gc = go->data() + c * out_n;
                for (int z = 0; z < oz; ++z) {
                    double tz = az.t[static_cast<size_t>(z)];
                    double* z0 = gxc + static_cast<int64_t>(az.i0[static_cast<size_t>(z)]) * in_hw;
                    double* z1 = gxc + static_cast<int64_t>(az.i1[static_cast<size_t>(z)]) * in_hw;
                    for (int y = 0; y < oy; ++y) {
                        double ty = ay.t[static_cast<size_t>(y)];
                        int y0 = ay.i0[static_cast<size_t>(y)], y1 = ay.i1[static_cast<size_t>(y)];
                        const double* grow = gc + (static_cast<int64_t>(z) * oy + y) * ox;
                        for (int xo = 0; xo < ox; ++xo) {
                            double tx = ax.t[static_cast<size_t>(xo)];
                            int x0 = ax.i0[static_cast<size_t>(xo)], x1 = ax.i1[static_cast<size_t>(xo)];
                            double gv = grow[xo];
                            auto spread = [&](double* plane, double wz) {
                                plane[static_cast<int64_t>(y0) * g.s[2] + x0] += wz * (1 - ty) * (1 - tx) * gv;
                                plane[static_cast<int64_t>(y0) * g.s[2] + x1] += wz * (1 - ty) * tx * gv;
                                plane[static_cast<int64_t>(y1) * g.s[2] + x0] += wz * ty * (1 - tx) * gv;
                                plane[static_cast<int64_t>(y1) * g.s[2] + x1] += wz * ty * tx * gv;
                            };
                            spread(z0, 1 - tz);
                            if (tz != 0.0) spread(z1, tz);
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- scatter / gather

Tensor scatter_mean(const std::vector<int64_t>& indices, const Tensor& features, int64_t cell_count) {
    if (features.ndim() != 2)
        throw std::invalid_argument("scatter_mean: features must be {N,d}, got " + shape_str(features.shape()));
    int64_t n = features.dim(0);
    int d = features.dim(1);
    if (static_cast<int64_t>(indices.size()) != n)
        throw std::invalid_argument("scatter_mean: " + std::to_string(indices.size()) + " indices for " +
                                    std::to_string(n) + " rows");
    for (int64_t i = 0; i < n; ++i)
        if (indices[static_cast<size_t>(i)] < 0 || indices[static_cast<size_t>(i)] >= cell_count)
            throw std::invalid_argument("scatter_mean: index " + std::to_string(indices[static_cast<size_t>(i)]) +
                                        " out of range [0," + std::to_string(cell_count) + ")");
    Tensor out = Tensor::zeros({static_cast<int>(cell_count), d});
    std::vector<int64_t> counts(static_cast<size_t>(cell_count), 0);
    for (int64_t i = 0; i < n; ++i) counts[static_cast<size_t>(indices[static_cast<size_t>(i)])]++;
    // Bucket rows by cell, then accumulate each cell column in sorted value
    // order so the result is exactly invariant to input permutation.
    std::vector<int64_t> starts(static_cast<size_t>(cell_count) + 1, 0);
    for (int64_t c = 0; c < cell_count; ++c) starts[static_cast<size_t>(c) + 1] = starts[static_cast<size_t>(c)] + counts[static_cast<size_t>(c)];
    std::vector<int64_t> members(static_cast<size_t>(n));
    {
        std::vector<int64_t> cursor(starts.begin(), starts.end() - 1);
        for (int64_t i = 0; i < n; ++i)
            members[static_cast<size_t>(cursor[static_cast<size_t>(indices[static_cast<size_t>(i)])]++)] = i;
    }
    std::vector<double> scratch;
    for (int64_t c = 0; c < cell_count; ++c) {
        int64_t cnt = counts[static_cast<size_t>(c)];
        if (cnt == 0) continue;
        double inv = 1.0 / static_cast<double>(cnt);
        double* dst = out.data() + c * d;
        if (cnt == 1) {
            const double* src = features.data() + members[static_cast<size_t>(starts[static_cast<size_t>(c)])] * d;
            for (int k = 0; k < d; ++k) dst[k] = src[k];
            continue;
        }
        scratch.resize(static_cast<size_t>(cnt));
        for (int k = 0; k < d; ++k) {
            for (int64_t j = 0; j < cnt; ++j)
                scratch[static_cast<size_t>(j)] = features.data()[members[static_cast<size_t>(starts[static_cast<size_t>(c)] + j)] * d + k];
            std::sort(scratch.begin(), scratch.end());
            double s = 0.0;
            for (double v : scratch) s += v;
            dst[k] = s * inv;
        }
    }
    if (should_record({&features})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([features, out, indices, counts, n, d](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gf = t.grad_buffer(features);
            for (int64_t i = 0; i < n; ++i) {
                int64_t c = indices[static_cast<size_t>(i)];
                double inv = 1.0 / static_cast<double>(counts[static_cast<size_t>(c)]);
                const double* src = go->data() + c * d;
                double* dst = gf.data() + i * d;
                for (int k = 0; k < d; ++k) dst[k] += src[k] * inv;
            }
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& src, const std::vector<int64_t>& indices) {
    if (src.ndim() != 2)
        throw std::invalid_argument("gather_rows: source must be {C,d}, got " + shape_str(src.shape()));
    int64_t c = src.dim(0);
    int d = src.dim(1);
    int64_t n = static_cast<int64_t>(indices.size());
    for (int64_t i = 0; i < n; ++i)
        if (indices[static_cast<size_t>(i)] < 0 || indices[static_cast<size_t>(i)] >= c)
            throw std::invalid_argument("gather_rows: index " + std::to_string(indices[static_cast<size_t>(i)]) +
                                        " out of range [0," + std::to_string(c) + ")");
    Tensor out = Tensor::zeros({static_cast<int>(n), d});
    for (int64_t i = 0; i < n; ++i)
        std::memcpy(out.data() + i * d, src.data() + indices[static_cast<size_t>(i)] * d,
                    sizeof(double) * static_cast<size_t>(d));
    if (should_record({&src})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([src, out, indices, n, d](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gs = t.grad_buffer(src);
            for (int64_t i = 0; i < n; ++i) {
                double* dst = gs.data() + indices[static_cast<size_t>(i)] * d;
                const double* g = go->data() + i * d;
                for (int k = 0; k < d; ++k) dst[k] += g[k];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- grid_sample

namespace {

struct AxisSample {
    int i0, i1;
    double t;  // weight of i1
};

AxisSample sample_axis_linear(double u, int extent) {
    double x = std::clamp(u, 0.0, 1.0) * (extent - 1);
    int i0 = std::min(static_cast<int>(std::floor(x)), extent - 2);
    if (i0 < 0) i0 = 0;
    return {i0, i0 + 1, x - i0};
}

int sample_axis_nearest(double u, int extent) {
    double x = std::clamp(u, 0.0, 1.0) * (extent - 1);
    int i0 = static_cast<int>(std::floor(x));
    double t = x - i0;
    int i = t > 0.5 ? i0 + 1 : i0;  // ties resolve to the lower index
    return std::clamp(i, 0, extent - 1);
}

}  // namespace

Tensor grid_sample(const FeatureGrid& grid, const std::vector<double>& coords, InterpMode mode) {
    const bool plane = is_plane(grid.layout);
    const int cdim = plane ? 2 : 3;
    if (plane && mode == InterpMode::trilinear)
        throw std::invalid_argument("grid_sample: trilinear mode on a plane grid");
    if (!plane && mode == InterpMode::bilinear)
        throw std::invalid_argument("grid_sample: bilinear mode on a volume grid");
    if (coords.size() % static_cast<size_t>(cdim) != 0)
        throw std::invalid_argument("grid_sample: coords length " + std::to_string(coords.size()) +
                                    " not divisible by " + std::to_string(cdim));
    const bool linear = mode != InterpMode::nearest;
    for (size_t a = 0; a < grid.extents.size(); ++a)
        if (linear && grid.extents[a] < 2)
            throw std::invalid_argument("grid_sample: linear modes need extent >= 2, got " +
                                        std::to_string(grid.extents[a]));
    const int64_t m = static_cast<int64_t>(coords.size()) / cdim;
    const int d = grid.channels();
    const Tensor& data = grid.data;
    Tensor out = Tensor::zeros({static_cast<int>(m), d});

    const int eu = grid.extents[0];
    const int ev = grid.extents[1];
    const int ew = plane ? 1 : grid.extents[2];
    const int64_t plane_n = static_cast<int64_t>(eu) * ev;
    const int64_t chan_n = plane_n * ew;

    // Corner offsets and weights per query, reused by the backward pass.
    // Coordinates are copied so the closure outlives the caller's buffer.
    auto coords_held = std::make_shared<std::vector<double>>(coords);
    auto corners_of = [=](int64_t q, int64_t* offs, double* wts) -> int {
        const double* uc = coords_held->data() + q * cdim;
        if (mode == InterpMode::nearest) {
            int iu = sample_axis_nearest(uc[0], eu);
            int iv = sample_axis_nearest(uc[1], ev);
            int iw = plane ? 0 : sample_axis_nearest(uc[2], ew);
            offs[0] = static_cast<int64_t>(iw) * plane_n + static_cast<int64_t>(iv) * eu + iu;
            wts[0] = 1.0;
            return 1;
        }
        AxisSample au = sample_axis_linear(uc[0], eu);
        AxisSample av = sample_axis_linear(uc[1], ev);
        AxisSample aw = plane ? AxisSample{0, 0, 0.0} : sample_axis_linear(uc[2], ew);
        int nc = 0;
        int wlim = plane ? 1 : 2;
        for (int cw = 0; cw < wlim; ++cw)
            for (int cv = 0; cv < 2; ++cv)
                for (int cu = 0; cu < 2; ++cu) {
                    int iu = cu ? au.i1 : au.i0;
                    int iv = cv ? av.i1 : av.i0;
                    int iw = cw ? aw.i1 : aw.i0;
                    double w = (cu ? au.t : 1 - au.t) * (cv ? av.t : 1 - av.t);
                    if (!plane) w *= cw ? aw.t : 1 - aw.t;
                    offs[nc] = static_cast<int64_t>(iw) * plane_n + static_cast<int64_t>(iv) * eu + iu;
                    wts[nc] = w;
                    ++nc;
                }
        return nc;
    };

    // Forward values use nested lerps so that interpolating a constant grid
    // returns the constant exactly (partition of unity holds bitwise).
    for (int64_t q = 0; q < m; ++q) {
        const double* uc = coords.data() + q * cdim;
        double* dst = out.data() + q * d;
        if (mode == InterpMode::nearest) {
            int iu = sample_axis_nearest(uc[0], eu);
            int iv = sample_axis_nearest(uc[1], ev);
            int iw = plane ? 0 : sample_axis_nearest(uc[2], ew);
            const double* src = data.data() + static_cast<int64_t>(iw) * plane_n +
                                static_cast<int64_t>(iv) * eu + iu;
            for (int c = 0; c < d; ++c) dst[c] = src[static_cast<int64_t>(c) * chan_n];
            continue;
        }
        AxisSample au = sample_axis_linear(uc[0], eu);
        AxisSample av = sample_axis_linear(uc[1], ev);
        AxisSample aw = plane ? AxisSample{0, 0, 0.0} : sample_axis_linear(uc[2], ew);
        for (int c = 0; c < d; ++c) {
            const double* chan = data.data() + static_cast<int64_t>(c) * chan_n;
            auto bilerp = [&](int iw) {
                const double* s = chan + static_cast<int64_t>(iw) * plane_n;
                double r0a = s[static_cast<int64_t>(av.i0) * eu + au.i0];
                double r0b = s[static_cast<int64_t>(av.i0) * eu + au.i1];
                double r1a = s[static_cast<int64_t>(av.i1) * eu + au.i0];
                double r1b = s[static_cast<int64_t>(av.i1) * eu + au.i1];
                double a0 = r0a + au.t * (r0b - r0a);
                double a1 = r1a + au.t * (r1b - r1a);
                return a0 + av.t * (a1 - a0);
            };
            if (plane) {
                dst[c] = bilerp(0);
            } else {
                double b0 = bilerp(aw.i0);
                double b1 = bilerp(aw.i1);
                dst[c] = b0 + aw.t * (b1 - b0);
            }
        }
    }

    if (should_record({&data})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([data, out, corners_of, m, d, chan_n](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gd = t.grad_buffer(data);
            for (int64_t q = 0; q < m; ++q) {
                int64_t offs[8];
                double wts[8];
                int nc = corners_of(q, offs, wts);
                const double* g = go->data() + q * d;
                for (int k = 0; k < nc; ++k) {
                    double w = wts[k];
                    double* dst = gd.data() + offs[k];
                    for (int c = 0; c < d; ++c) dst[static_cast<int64_t>(c) * chan_n] += w * g[c];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- loss

Tensor bce_with_logits_mean(const Tensor& logits, const std::vector<uint8_t>& labels) {
    if (static_cast<size_t>(logits.size()) != labels.size())
        throw std::invalid_argument("bce: " + std::to_string(logits.size()) + " logits vs " +
                                    std::to_string(labels.size()) + " labels");
    for (uint8_t l : labels)
        if (l > 1) throw std::invalid_argument("bce: label " + std::to_string(int(l)) + " not in {0,1}");
    const int64_t m = logits.size();
    double acc = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        double z = logits.data()[i];
        double y = labels[static_cast<size_t>(i)];
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(m));
    if (should_record({&logits})) {
        out.set_requires_grad(true);
        Tape* tape = Tape::current();
        tape->mark_produced(out);
        tape->record([logits, out, labels, m](Tape& t) {
            const auto* go = t.find_grad(out);
            if (!go) return;
            auto& gl = t.grad_buffer(logits);
            double g = (*go)[0] / static_cast<double>(m);
            for (int64_t i = 0; i < m; ++i)
                gl[static_cast<size_t>(i)] += g * (stable_sigmoid(logits.data()[i]) - labels[static_cast<size_t>(i)]);
        });
    }
    return out;
}

// ---------------------------------------------------------------- dispatcher

Tensor eval_primitive(PrimOp op, const std::vector<Tensor>& inputs, const PrimAttrs& attrs) {
    auto need = [&](size_t n) {
        if (inputs.size() != n)
            throw std::invalid_argument(std::string(prim_op_name(op)) + ": expected " + std::to_string(n) +
                                        " inputs, got " + std::to_string(inputs.size()));
    };
    for (size_t i = 0; i < inputs.size(); ++i)
        if (!inputs[i].all_finite())
            throw std::invalid_argument(std::string(prim_op_name(op)) + ": non-finite values in input " +
                                        std::to_string(i));
    switch (op) {
        case PrimOp::linear: need(3); return linear(inputs[0], inputs[1], inputs[2]);
        case PrimOp::conv: need(3); return conv_forward(inputs[0], inputs[1], inputs[2], attrs.dims, attrs.stride, attrs.pad);
        case PrimOp::relu: need(1); return relu(inputs[0]);
        case PrimOp::sigmoid: need(1); return sigmoid(inputs[0]);
        case PrimOp::add: need(2); return add(inputs[0], inputs[1]);
        case PrimOp::concat: need(2); return concat(inputs[0], inputs[1], attrs.axis);
        case PrimOp::avg_pool: need(1); return avg_pool(inputs[0], attrs.dims, attrs.factor);
        case PrimOp::max_pool: need(1); return max_pool(inputs[0], attrs.dims, attrs.factor);
        case PrimOp::upsample_nearest: need(1); return upsample_nearest(inputs[0], attrs.dims, attrs.factor);
        case PrimOp::upsample_linear: need(1); return upsample_linear(inputs[0], attrs.dims, attrs.factor);
    }
    throw std::invalid_argument("eval_primitive: unknown op");
}

}  // namespace ops
}  // namespace convocc
