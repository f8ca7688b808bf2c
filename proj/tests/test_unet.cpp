#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <convocc/nn_ops.hpp>
#include <convocc/unet.hpp>

#include "oracles.hpp"

using namespace convocc;
namespace op = convocc::ops;

TEST_CASE("receptive_field_depth follows the rf recurrence") {
    // Frozen values computed from the oracle recurrence.
    CHECK(receptive_field_depth(32) == 4);
    CHECK(receptive_field_depth(64) == 5);
    CHECK(receptive_field_depth(4) == 1);
    CHECK(receptive_field_depth(128) == 6);

    // Smallest-depth property against the oracle, for all supported sizes.
    for (int res : {4, 8, 16, 32, 64, 128, 256}) {
        int d = receptive_field_depth(res);
        CHECK(oracle::receptive_field_of_depth(d) >= res);
        if (d > 1) CHECK(oracle::receptive_field_of_depth(d - 1) < res);
    }
    CHECK_THROWS_AS(receptive_field_depth(48), std::invalid_argument);
    CHECK_THROWS_AS(receptive_field_depth(2), std::invalid_argument);
}

static UNetParams make_unet(int dims, int depth, int channels, uint64_t seed) {
    UNetConfig cfg;
    cfg.dims = dims;
    cfg.depth = depth;
    cfg.in_channels = cfg.base_channels = channels;
    UNetParams params;
    RngStream rng(seed);
    params.init(cfg, rng);
    return params;
}

TEST_CASE("zero input with zero-initialized final layer gives zero output") {
    UNetParams params = make_unet(2, 2, 4, 1);
    for (auto& v : params.head.w.values()) v = 0.0;
    for (auto& v : params.head.b.values()) v = 0.0;
    Tensor zero = Tensor::zeros({4, 16, 16});
    Tensor out = unet_apply(zero, params);
    REQUIRE(out.shape() == zero.shape());
    for (int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.0);
}

TEST_CASE("shape preservation at 32, 64, 128") {
    for (int res : {32, 64, 128}) {
        int depth = receptive_field_depth(res);
        UNetParams params = make_unet(2, depth, 4, 7);
        Tensor in = Tensor::randn({4, res, res}, *[] { static RngStream r(3); return &r; }(), 1.0);
        Tensor out = unet_apply(in, params);
        CHECK(out.shape() == Shape{4, res, res});
    }
    // 3D shape preservation.
    UNetParams p3 = make_unet(3, 2, 4, 8);
    RngStream rng(4);
    Tensor in = Tensor::randn({4, 8, 8, 8}, rng, 1.0);
    CHECK(unet_apply(in, p3).shape() == Shape{4, 8, 8, 8});
}

TEST_CASE("indivisible extents rejected") {
    UNetParams params = make_unet(2, 3, 4, 9);
    Tensor in = Tensor::zeros({4, 20, 16});  // 20 % 8 != 0
    CHECK_THROWS_AS(unet_apply(in, params), std::invalid_argument);
}

TEST_CASE("single occupied cell reaches the whole plane at full-receptive-field depth") {
    const int res = 64;
    const int depth = receptive_field_depth(res);  // 5
    UNetConfig cfg;
    cfg.dims = 2;
    cfg.depth = depth;
    cfg.in_channels = cfg.base_channels = 4;
    UNetParams params;
    RngStream rng(11);
    params.init(cfg, rng);
    // All-ones kernels, zero biases: support spreads monotonically.
    auto fill_ones = [](UNetParams::Conv& c) {
        for (auto& v : c.w.values()) v = 1.0;
        for (auto& v : c.b.values()) v = 0.0;
    };
    for (auto& level : params.enc) {
        fill_ones(level.c1);
        fill_ones(level.c2);
    }
    fill_ones(params.bottom.c1);
    fill_ones(params.bottom.c2);
    for (auto& level : params.dec) {
        fill_ones(level.up);
        fill_ones(level.c1);
        fill_ones(level.c2);
    }
    fill_ones(params.head);

    Tensor in = Tensor::zeros({4, res, res});
    in.data()[(res / 2) * res + res / 2] = 1.0;
    Tensor out = unet_apply(in, params);
    int64_t nonzero = 0;
    for (int64_t i = 0; i < out.size(); ++i)
        if (out.data()[i] != 0.0) ++nonzero;
    CHECK(nonzero == out.size());  // response covers every cell
}

TEST_CASE("shared weights: the same plane content in any slot gives identical output") {
    UNetParams params = make_unet(2, 2, 6, 13);
    RngStream rng(14);
    Tensor content = Tensor::randn({6, 16, 16}, rng, 1.0);
    FeatureGrid xy = make_feature_grid(GridLayout::plane_xy, {16, 16}, content);
    FeatureGrid xz = make_feature_grid(GridLayout::plane_xz, {16, 16}, content);
    FeatureGrid yz = make_feature_grid(GridLayout::plane_yz, {16, 16}, content);
    Tensor a = unet_forward(xy, params).data;
    Tensor b = unet_forward(xz, params).data;
    Tensor c = unet_forward(yz, params).data;
    for (int64_t i = 0; i < a.size(); ++i) {
        CHECK(a.data()[i] == b.data()[i]);
        CHECK(a.data()[i] == c.data()[i]);
    }
}

TEST_CASE("every parameter receives a nonzero gradient at initialization") {
    for (int dims : {2, 3}) {
        UNetParams params = make_unet(dims, 2, 4, 15 + dims);
        RngStream rng(16);
        Tensor in = dims == 2 ? Tensor::randn({4, 8, 8}, rng, 1.0) : Tensor::randn({4, 8, 8, 8}, rng, 1.0);
        Tensor weights = Tensor::randn(in.shape(), rng, 1.0);
        Tape tape;
        {
            TapeScope scope(tape);
            Tensor out = unet_apply(in, params);
            tape.backward(op::sum(op::mul(out, weights)));
        }
        for (Tensor& t : params.tensors()) {
            bool any = false;
            for (double g : t.grad())
                if (g != 0.0) {
                    any = true;
                    break;
                }
            CHECK(any);
        }
    }
}

TEST_CASE("channel schedule doubles per level and caps at 8x") {
    UNetConfig cfg;
    cfg.base_channels = 32;
    cfg.max_channel_mult = 8;
    CHECK(unet_level_channels(cfg, 0) == 32);
    CHECK(unet_level_channels(cfg, 1) == 64);
    CHECK(unet_level_channels(cfg, 3) == 256);
    CHECK(unet_level_channels(cfg, 4) == 256);
    CHECK(unet_level_channels(cfg, 6) == 256);
}

TEST_CASE("receptive-field radius walk is monotone in depth") {
    UNetConfig cfg;
    cfg.dims = 2;
    int prev = 0;
    for (int depth = 1; depth <= 5; ++depth) {
        cfg.depth = depth;
        int r = unet_receptive_field_radius_cells(cfg);
        CHECK(r > prev);
        prev = r;
    }
    cfg.depth = 1;
    CHECK(unet_receptive_field_radius_cells(cfg) == 10);
}
