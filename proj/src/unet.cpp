#include "convocc/unet.hpp"

#include "convocc/nn_ops.hpp"

#include <cmath>

namespace convocc {

namespace op = ops;

int receptive_field_depth(int resolution) {
    if (resolution < 4 || (resolution & (resolution - 1)) != 0)
        throw std::invalid_argument("receptive_field_depth: resolution " + std::to_string(resolution) +
                                    " must be a power of two >= 4");
    int depth = 1;
    int rf = 4;
    while (rf < resolution) {
        rf *= 2;
        depth += 1;
    }
    return depth;
}

int unet_receptive_field_radius_cells(const UNetConfig& cfg) {
    int jump = 1;
    int rf = 1;
    for (int l = 0; l < cfg.depth; ++l) {
        rf += 4 * jump;  // two 3-convs
        rf += jump;      // 2x pool
        jump *= 2;
    }
    rf += 4 * jump;  // bottom convs
    for (int l = cfg.depth - 1; l >= 0; --l) {
        jump /= 2;
        rf += 2 * jump;  // conv after upsampling
        rf += 4 * jump;  // two convs after the skip concat
    }
    return (rf + 1) / 2;
}

int unet_level_channels(const UNetConfig& cfg, int level) {
    int64_t ch = cfg.base_channels;
    for (int i = 0; i < level; ++i) ch *= 2;
    int64_t cap = static_cast<int64_t>(cfg.base_channels) * cfg.max_channel_mult;
    return static_cast<int>(std::min(ch, cap));
}

static UNetParams::Conv make_conv(int cout, int cin, int k, int dims, RngStream& rng) {
    Shape shape{cout, cin};
    for (int i = 0; i < dims; ++i) shape.push_back(k);
    double fan_in = cin * std::pow(k, dims);
    UNetParams::Conv c;
    c.w = Tensor::randn(shape, rng, std::sqrt(2.0 / fan_in), true);
    c.b = Tensor::zeros({cout}, true);
    return c;
}

void UNetParams::init(const UNetConfig& config, RngStream& rng) {
    cfg = config;
    if (cfg.depth < 1) throw std::invalid_argument("unet: depth must be >= 1");
    if (cfg.dims != 2 && cfg.dims != 3) throw std::invalid_argument("unet: dims must be 2 or 3");
    enc.clear();
    dec.clear();
    int prev = cfg.in_channels;
    for (int l = 0; l < cfg.depth; ++l) {
        int ch = unet_level_channels(cfg, l);
        EncLevel level;
        level.c1 = make_conv(ch, prev, 3, cfg.dims, rng);
        level.c2 = make_conv(ch, ch, 3, cfg.dims, rng);
        enc.push_back(level);
        prev = ch;
    }
    int bch = unet_level_channels(cfg, cfg.depth);
    bottom.c1 = make_conv(bch, prev, 3, cfg.dims, rng);
    bottom.c2 = make_conv(bch, bch, 3, cfg.dims, rng);
    dec.resize(static_cast<size_t>(cfg.depth));
    for (int l = cfg.depth - 1; l >= 0; --l) {
        int ch = unet_level_channels(cfg, l);
        int above = unet_level_channels(cfg, l + 1);
        DecLevel level;
        level.up = make_conv(ch, above, 3, cfg.dims, rng);
        level.c1 = make_conv(ch, 2 * ch, 3, cfg.dims, rng);
        level.c2 = make_conv(ch, ch, 3, cfg.dims, rng);
        dec[static_cast<size_t>(l)] = level;
    }
    head = make_conv(cfg.in_channels, unet_level_channels(cfg, 0), 1, cfg.dims, rng);
}

void UNetParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) {
    auto put = [&](const std::string& name, Conv& c) {
        out.push_back({name + ".w", c.w});
        out.push_back({name + ".b", c.b});
    };
    for (size_t l = 0; l < enc.size(); ++l) {
        put(prefix + ".enc" + std::to_string(l) + ".c1", enc[l].c1);
        put(prefix + ".enc" + std::to_string(l) + ".c2", enc[l].c2);
    }
    put(prefix + ".bottom.c1", bottom.c1);
    put(prefix + ".bottom.c2", bottom.c2);
    for (size_t l = 0; l < dec.size(); ++l) {
        put(prefix + ".dec" + std::to_string(l) + ".up", dec[l].up);
        put(prefix + ".dec" + std::to_string(l) + ".c1", dec[l].c1);
        put(prefix + ".dec" + std::to_string(l) + ".c2", dec[l].c2);
    }
    put(prefix + ".head", head);
}

std::vector<Tensor> UNetParams::tensors() {
    std::vector<NamedTensor> named;
    collect("unet", named);
    std::vector<Tensor> out;
    for (auto& nt : named) out.push_back(nt.tensor);
    return out;
}

Tensor unet_apply(const Tensor& input, const UNetParams& params) {
    const UNetConfig& cfg = params.cfg;
    if (input.ndim() != cfg.dims + 1 || input.dim(0) != cfg.in_channels)
        throw std::invalid_argument("unet: input " + shape_str(input.shape()) + " does not match config (" +
                                    std::to_string(cfg.in_channels) + " channels, " + std::to_string(cfg.dims) +
                                    "d)");
    int div = 1 << cfg.depth;
    for (int a = 1; a <= cfg.dims; ++a)
        if (input.dim(a) % div != 0)
            throw std::invalid_argument("unet: extent " + std::to_string(input.dim(a)) +
                                        " not divisible by 2^depth = " + std::to_string(div));

    std::vector<Tensor> skips;
    Tensor h = input;
    for (int l = 0; l < cfg.depth; ++l) {
        h = op::relu(op::conv_forward(h, params.enc[static_cast<size_t>(l)].c1.w,
                                      params.enc[static_cast<size_t>(l)].c1.b, cfg.dims, 1, 1));
        h = op::relu(op::conv_forward(h, params.enc[static_cast<size_t>(l)].c2.w,
                                      params.enc[static_cast<size_t>(l)].c2.b, cfg.dims, 1, 1));
        skips.push_back(h);
        h = op::avg_pool(h, cfg.dims, 2);
    }
    h = op::relu(op::conv_forward(h, params.bottom.c1.w, params.bottom.c1.b, cfg.dims, 1, 1));
    h = op::relu(op::conv_forward(h, params.bottom.c2.w, params.bottom.c2.b, cfg.dims, 1, 1));
    for (int l = cfg.depth - 1; l >= 0; --l) {
        const auto& level = params.dec[static_cast<size_t>(l)];
        h = op::upsample_nearest(h, cfg.dims, 2);
        h = op::relu(op::conv_forward(h, level.up.w, level.up.b, cfg.dims, 1, 1));
        h = op::concat(h, skips[static_cast<size_t>(l)], 0);
        h = op::relu(op::conv_forward(h, level.c1.w, level.c1.b, cfg.dims, 1, 1));
        h = op::relu(op::conv_forward(h, level.c2.w, level.c2.b, cfg.dims, 1, 1));
    }
    return op::conv_forward(h, params.head.w, params.head.b, cfg.dims, 1, 0);
}

FeatureGrid unet_forward(const FeatureGrid& grid, const UNetParams& params) {
    if ((params.cfg.dims == 2) != is_plane(grid.layout))
        throw std::invalid_argument("unet: layout/dims mismatch");
    return make_feature_grid(grid.layout, grid.extents, unet_apply(grid.data, params));
}

}  // namespace convocc
