#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "reportgen/data.hpp"
#include "reportgen/encoder.hpp"
#include "reportgen/gradcheck.hpp"
#include "reportgen/ops.hpp"

using namespace reportgen;

namespace {

Tensor random_image(std::uint64_t seed, std::size_t h = 64, std::size_t w = 64) {
    Rng rng(seed);
    Tensor img(Shape{1, h, w});
    for (double& v : img.values()) v = rng.uniform();
    return img;
}

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.scales = {1.0, 0.5};
    cfg.channels = 4;
    cfg.blocks_per_scale = 2;
    cfg.bifpn_depth = 1;
    cfg.pool_grid = 2;
    return cfg;
}

}  // namespace

TEST_CASE("resize_image contract") {
    Tensor img = random_image(3, 8, 8);
    SECTION("factor one returns the image untouched") {
        Tensor same = resize_image(img, 1.0);
        for (std::size_t i = 0; i < img.size(); ++i) CHECK(same[i] == img[i]);
    }
    SECTION("constant images stay constant") {
        Tensor flat(Shape{1, 10, 10}, std::vector<double>(100, 0.42));
        for (double factor : {0.9, 0.5, 0.3}) {
            Tensor r = resize_image(flat, factor);
            CHECK(r.shape()[1] == static_cast<std::size_t>(std::ceil(10 * factor - 1e-12)));
            for (double v : r.values()) CHECK(v == Catch::Approx(0.42).margin(1e-12));
        }
    }
    SECTION("out-of-range factors are config errors") {
        CHECK_THROWS_AS(resize_image(img, 0.0), ConfigError);
        CHECK_THROWS_AS(resize_image(img, 1.5), ConfigError);
    }
}

TEST_CASE("extract_features shape and zero behavior") {
    Rng rng(5);
    ModelParams registry;
    EncoderConfig cfg;
    cfg.channels = 16;
    auto params = build_encoder_params(cfg, 64, rng, registry);

    SECTION("64x64 input with two stride-2 blocks lands at [16,16,16]") {
        Tensor features = extract_features(random_image(1), params.extract);
        CHECK(features.shape() == Shape{16, 16, 16});
    }
    SECTION("zero image with zero bias gives a zero map") {
        Tensor zeros(Shape{1, 32, 32});
        Tensor features = extract_features(zeros, params.extract);
        for (double v : features.values()) CHECK(v == 0.0);
    }
    SECTION("center-tap kernels reduce to swish of the strided input") {
        ModelParams probe_registry;
        EncoderConfig one_block;
        one_block.channels = 3;
        one_block.blocks_per_scale = 1;
        auto probe = build_encoder_params(one_block, 8, rng, probe_registry);
        for (double& v : probe.extract[0].weight.values()) v = 0.0;
        for (std::size_t co = 0; co < 3; ++co)
            probe.extract[0].weight[(co * 1 * 3 + 1) * 3 + 1] = 1.0;  // delta at kernel center
        Tensor img = random_image(9, 6, 6);
        Tensor features = extract_features(img, probe.extract);
        REQUIRE(features.shape() == Shape{3, 3, 3});
        for (std::size_t co = 0; co < 3; ++co)
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j) {
                    const double x = img[(2 * i) * 6 + (2 * j)];
                    const double expected = x / (1.0 + std::exp(-x));
                    CHECK(features[(co * 3 + i) * 3 + j] ==
                          Catch::Approx(expected).margin(1e-12));
                }
    }
}

TEST_CASE("fusion nodes form exact convex combinations") {
    Rng rng(11);
    Tensor x(Shape{1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor y(Shape{1, 2, 2}, {5.0, 6.0, 7.0, 8.0});

    auto make_node = [](std::vector<double> weights) {
        FusionNodeParams node;
        for (double w : weights) node.raw_weights.push_back(Tensor(Shape{1}, {w}));
        return node;
    };

    SECTION("equal weights over identical inputs reproduce the input") {
        FusionProbe probe;
        Tensor fused = detail::fuse_inputs({x, x}, make_node({1.0, 1.0}), 1e-4, &probe);
        for (std::size_t i = 0; i < 4; ++i) CHECK(fused[i] == x[i]);
        CHECK(probe.node_coefficients[0] == std::vector<double>{0.5, 0.5});
    }
    SECTION("a negative raw weight contributes nothing") {
        Tensor fused = detail::fuse_inputs({x, y}, make_node({1.0, -5.0}), 1e-4, nullptr);
        for (std::size_t i = 0; i < 4; ++i) CHECK(fused[i] == x[i]);
    }
    SECTION("hand-set weights match scalar arithmetic") {
        Tensor fused = detail::fuse_inputs({x, y}, make_node({2.0, 6.0}), 1e-4, nullptr);
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(fused[i] == Catch::Approx(0.25 * x[i] + 0.75 * y[i]).margin(1e-12));
    }
    SECTION("coefficients are nonnegative and sum to one across random draws") {
        for (int trial = 0; trial < 200; ++trial) {
            const int arity = 2 + trial % 2;
            std::vector<double> raw;
            for (int i = 0; i < arity; ++i) raw.push_back(rng.normal());
            FusionProbe probe;
            std::vector<Tensor> inputs(static_cast<std::size_t>(arity), x);
            detail::fuse_inputs(inputs, make_node(raw), 1e-4, &probe);
            double sum = 0.0;
            for (double c : probe.node_coefficients[0]) {
                CHECK(c >= 0.0);
                sum += c;
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("bifpn_fuse wiring") {
    Rng rng(13);
    ModelParams registry;
    EncoderConfig cfg = small_config();
    auto params = build_encoder_params(cfg, 16, rng, registry);

    FeaturePyramid pyramid;
    pyramid.levels.push_back(random_image(21, 8, 8));
    pyramid.levels.push_back(random_image(22, 4, 4));
    pyramid.levels[0] = reshape(concat({pyramid.levels[0], pyramid.levels[0],
                                        pyramid.levels[0], pyramid.levels[0]}, 0),
                                Shape{4, 8, 8});
    pyramid.levels[1] = reshape(concat({pyramid.levels[1], pyramid.levels[1],
                                        pyramid.levels[1], pyramid.levels[1]}, 0),
                                Shape{4, 4, 4});

    SECTION("shapes are preserved per level") {
        FeaturePyramid fused = bifpn_fuse(pyramid, params.passes, 1, cfg.fusion_eps);
        REQUIRE(fused.levels.size() == 2);
        CHECK(fused.levels[0].shape() == Shape{4, 8, 8});
        CHECK(fused.levels[1].shape() == Shape{4, 4, 4});
        CHECK_FALSE(fused.fusion_bypassed);
    }
    SECTION("a single level passes through with the warning flag") {
        FeaturePyramid single;
        single.levels.push_back(pyramid.levels[0]);
        FeaturePyramid out = bifpn_fuse(single, params.passes, 1, cfg.fusion_eps);
        CHECK(out.fusion_bypassed);
        for (std::size_t i = 0; i < out.levels[0].size(); ++i)
            CHECK(out.levels[0][i] == single.levels[0][i]);
    }
}

TEST_CASE("image attention gating") {
    SECTION("zero projection weights leave features untouched") {
        Rng rng(17);
        ModelParams registry;
        EncoderConfig cfg = small_config();
        auto params = build_encoder_params(cfg, 16, rng, registry);
        for (auto& gate : params.attention)
            for (double& v : gate.weight.values()) v = 0.0;
        FeaturePyramid pyramid;
        pyramid.levels.push_back(random_image(31, 4, 4));
        pyramid.levels.push_back(random_image(32, 2, 2));
        auto widen = [](const Tensor& t, std::size_t c) {
            std::vector<Tensor> copies(c, t);
            return reshape(concat(copies, 0), Shape{c, t.shape()[1], t.shape()[2]});
        };
        pyramid.levels[0] = widen(pyramid.levels[0], 4);
        pyramid.levels[1] = widen(pyramid.levels[1], 4);
        FeaturePyramid gated = image_attention(pyramid, params.attention);
        for (std::size_t l = 0; l < 2; ++l)
            for (std::size_t i = 0; i < pyramid.levels[l].size(); ++i)
                CHECK(gated.levels[l][i] == pyramid.levels[l][i]);
    }
    SECTION("a single spatial position scores exactly one") {
        LevelAttentionParams gate;
        gate.weight = Tensor(Shape{1, 1, 1, 1}, {0.37});
        FeaturePyramid pyramid;
        pyramid.levels.push_back(Tensor(Shape{1, 1, 1}, {2.5}));
        FeaturePyramid out = image_attention(pyramid, {gate});
        CHECK(out.levels[0][0] == 2.5);  // softmax singleton = 1, gate = 1 * 1
    }
    SECTION("two-position map matches hand computation") {
        LevelAttentionParams gate;
        gate.weight = Tensor(Shape{1, 1, 1, 1}, {1.0});
        FeaturePyramid pyramid;
        pyramid.levels.push_back(Tensor(Shape{1, 1, 2}, {1.0, 2.0}));
        FeaturePyramid out = image_attention(pyramid, {gate});
        const double s0 = 1.0 / (1.0 + std::exp(1.0));  // softmax of scores [1, 2]
        const double s1 = std::exp(1.0) / (1.0 + std::exp(1.0));
        CHECK(out.levels[0][0] == Catch::Approx(2.0 * s0 * 1.0).margin(1e-12));
        CHECK(out.levels[0][1] == Catch::Approx(2.0 * s1 * 2.0).margin(1e-12));
    }
}

TEST_CASE("encode satisfies the shape contract") {
    Rng rng(23);
    ModelParams registry;
    EncoderConfig cfg;  // defaults: scales 3, pool 4
    auto params = build_encoder_params(cfg, 64, rng, registry);
    Tensor memory = encode(random_image(41), cfg, params);
    CHECK(memory.shape() == Shape{48, 64});
    CHECK(cfg.memory_positions() == 48);
}

TEST_CASE("encode of a zero image with zero biases is zero memory") {
    Rng rng(29);
    ModelParams registry;
    EncoderConfig cfg = small_config();
    auto params = build_encoder_params(cfg, 16, rng, registry);  // biases start at zero
    Tensor memory = encode(Tensor(Shape{1, 32, 32}), cfg, params);
    for (double v : memory.values()) CHECK(v == 0.0);
}

TEST_CASE("encode is deterministic under fixed parameters") {
    Rng rng(31);
    ModelParams registry;
    EncoderConfig cfg = small_config();
    auto params = build_encoder_params(cfg, 16, rng, registry);
    Tensor img = random_image(55, 32, 32);
    Tensor a = encode(img, cfg, params);
    Tensor b = encode(img, cfg, params);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("encode rejects undersized images with the minimum stated") {
    Rng rng(37);
    ModelParams registry;
    EncoderConfig cfg;  // needs >= ((4-1)*4+1)/0.25 = 52 pixels
    auto params = build_encoder_params(cfg, 32, rng, registry);
    try {
        encode(random_image(1, 16, 16), cfg, params);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("minimum") != std::string::npos);
    }
}

TEST_CASE("moving the anomaly patch moves the memory") {
    Rng rng(43);
    ModelParams registry;
    EncoderConfig cfg = small_config();
    auto params = build_encoder_params(cfg, 16, rng, registry);
    Tensor left(Shape{1, 32, 32});
    Tensor right(Shape{1, 32, 32});
    for (std::size_t r = 10; r < 16; ++r)
        for (std::size_t c = 4; c < 10; ++c) {
            left[r * 32 + c] = 0.9;
            right[r * 32 + (c + 16)] = 0.9;
        }
    Tensor ml = encode(left, cfg, params);
    Tensor mr = encode(right, cfg, params);
    double diff = 0.0;
    for (std::size_t i = 0; i < ml.size(); ++i)
        diff += (ml[i] - mr[i]) * (ml[i] - mr[i]);
    CHECK(std::sqrt(diff) > 0.0);
}

TEST_CASE("gradient reaches every encoder parameter") {
    Rng rng(47);
    ModelParams registry;
    EncoderConfig cfg = small_config();
    auto params = build_encoder_params(cfg, 16, rng, registry);
    Tensor img = random_image(61, 32, 32);
    registry.zero_grad();
    {
        Tape tape;
        Tensor memory = encode(img, cfg, params);
        Tensor loss = mean_all(mul(memory, memory));
        tape.backward(loss);
    }
    for (const auto& [name, t] : registry.entries()) {
        double max_abs = 0.0;
        for (double g : t.grad()) max_abs = std::max(max_abs, std::abs(g));
        CAPTURE(name);
        CHECK(max_abs > 0.0);
    }
}

TEST_CASE("baseline encoder shape and parameter count") {
    Rng rng(53);
    EncoderConfig cfg;
    cfg.channels = 8;

    ModelParams pyramid_registry;
    auto pyramid = build_encoder_params(cfg, 64, rng, pyramid_registry);

    ModelParams baseline_registry;
    auto baseline = build_baseline_params(cfg, 64, rng, baseline_registry);

    Tensor memory = baseline_encode(random_image(71), cfg, baseline);
    CHECK(memory.shape() == Shape{16, 64});

    Tensor zero_memory = baseline_encode(Tensor(Shape{1, 64, 64}), cfg, baseline);
    for (double v : zero_memory.values()) CHECK(v == 0.0);

    CHECK(baseline_registry.total_size() < pyramid_registry.total_size());
}

TEST_CASE("micro encoder passes a full gradient check") {
    Rng rng(59);
    ModelParams registry;
    EncoderConfig cfg;
    cfg.scales = {1.0, 0.5};
    cfg.channels = 2;
    cfg.blocks_per_scale = 1;
    cfg.bifpn_depth = 1;
    cfg.pool_grid = 2;
    auto params = build_encoder_params(cfg, 4, rng, registry);
    Tensor img = random_image(67, 8, 8);
    auto loss_fn = [&]() {
        Tensor memory = encode(img, cfg, params);
        return mean_all(mul(memory, memory));
    };
    auto report = grad_check(loss_fn, registry, 1e-5);
    CAPTURE(report.worst_group);
    CHECK(report.max_rel_error < 1e-4);
}
