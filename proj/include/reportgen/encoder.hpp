#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "reportgen/errors.hpp"
#include "reportgen/ops.hpp"
#include "reportgen/params.hpp"

// Multi-scale encoder: per-scale resize + shared stride-2 conv/Swish feature
// extraction, lateral 1x1 projections, repeated bidirectional fusion passes
// with relu-positive normalized node weights, per-level spatial attention
// gating, then pooling + linear projection into the decoder memory sequence.

namespace reportgen {

struct EncoderConfig {
    std::vector<double> scales{1.0, 0.5, 0.25};  // strictly decreasing, in (0,1]
    std::size_t channels = 8;
    std::size_t blocks_per_scale = 2;  // stride-2 conv blocks in the extractor
    std::size_t bifpn_depth = 3;
    double fusion_eps = 1e-4;
    std::size_t pool_grid = 4;  // 0 = no pooling

    void validate() const {
        if (scales.empty()) throw ConfigError("encoder: scales must be non-empty");
        for (std::size_t i = 0; i < scales.size(); ++i) {
            if (scales[i] <= 0.0 || scales[i] > 1.0)
                throw ConfigError("encoder: scale factors must lie in (0,1]");
            if (i > 0 && scales[i] >= scales[i - 1])
                throw ConfigError("encoder: scales must be strictly decreasing");
        }
        if (channels == 0) throw ConfigError("encoder: channels must be positive");
        if (blocks_per_scale == 0) throw ConfigError("encoder: blocks_per_scale must be positive");
        if (bifpn_depth < 1) throw ConfigError("encoder: bifpn_depth must be at least 1");
        if (fusion_eps <= 0.0) throw ConfigError("encoder: fusion_eps must be positive");
    }

    std::size_t memory_positions() const {
        return scales.size() * pool_grid * pool_grid;
    }
};

struct FeaturePyramid {
    std::vector<Tensor> levels;  // finest to coarsest, each [C, H_s, W_s]
    bool fusion_bypassed = false;
};

/// Captures the normalized fusion coefficients of every node evaluation.
struct FusionProbe {
    std::vector<std::vector<double>> node_coefficients;
};

struct ConvBlockParams {
    Tensor weight;
    Tensor bias;
};

struct FusionNodeParams {
    std::vector<Tensor> raw_weights;  // one scalar per fused input
    ConvBlockParams conv;
};

struct BifpnPassParams {
    std::vector<FusionNodeParams> top_down;   // index i produces level i, i in [0, L-2]
    std::vector<FusionNodeParams> bottom_up;  // index i-1 produces level i, i in [1, L-1]
};

// Projection bias omitted: softmax over positions is shift-invariant, so a
// bias would never receive gradient.
struct LevelAttentionParams {
    Tensor weight;  // [1, C, 1, 1]
};

struct EncoderParams {
    std::vector<ConvBlockParams> extract;  // shared across scales
    std::vector<ConvBlockParams> lateral;  // per level, 1x1
    std::vector<BifpnPassParams> passes;
    std::vector<LevelAttentionParams> attention;
    Tensor proj_weight;  // [C, d_model]
    Tensor proj_bias;    // [d_model]
};

struct BaselineEncoderParams {
    std::vector<ConvBlockParams> extract;
    Tensor proj_weight;
    Tensor proj_bias;
};

// ---------------------------------------------------------------------------
// Parameter construction
// ---------------------------------------------------------------------------

namespace detail {

inline ConvBlockParams make_conv_block(const std::string& name, std::size_t out_ch,
                                       std::size_t in_ch, std::size_t k, Rng& rng,
                                       ModelParams& registry) {
    ConvBlockParams block;
    block.weight = registry.add(name + ".weight", xavier_init({out_ch, in_ch, k, k}, rng));
    block.bias = registry.add(name + ".bias", Tensor(Shape{out_ch}));
    return block;
}

}  // namespace detail

inline EncoderParams build_encoder_params(const EncoderConfig& cfg, std::size_t d_model, Rng& rng,
                                          ModelParams& registry,
                                          const std::string& prefix = "encoder") {
    cfg.validate();
    EncoderParams params;
    const std::size_t levels = cfg.scales.size();
    for (std::size_t b = 0; b < cfg.blocks_per_scale; ++b)
        params.extract.push_back(detail::make_conv_block(
            prefix + ".extract.block" + std::to_string(b), cfg.channels,
            b == 0 ? 1 : cfg.channels, 3, rng, registry));
    for (std::size_t l = 0; l < levels; ++l)
        params.lateral.push_back(detail::make_conv_block(
            prefix + ".lateral.l" + std::to_string(l), cfg.channels, cfg.channels, 1, rng,
            registry));
    for (std::size_t pass = 0; pass < cfg.bifpn_depth && levels >= 2; ++pass) {
        BifpnPassParams pass_params;
        const std::string pass_name = prefix + ".bifpn.pass" + std::to_string(pass);
        for (std::size_t i = 0; i + 1 < levels; ++i) {  // top-down nodes, 2 inputs
            FusionNodeParams node;
            const std::string node_name = pass_name + ".td" + std::to_string(i);
            for (int w = 0; w < 2; ++w)
                node.raw_weights.push_back(registry.add(
                    node_name + ".w" + std::to_string(w), Tensor(Shape{1}, {1.0})));
            node.conv = detail::make_conv_block(node_name + ".conv", cfg.channels, cfg.channels,
                                                3, rng, registry);
            pass_params.top_down.push_back(std::move(node));
        }
        for (std::size_t i = 1; i < levels; ++i) {  // bottom-up nodes
            FusionNodeParams node;
            const std::string node_name = pass_name + ".bu" + std::to_string(i);
            const int inputs = i + 1 < levels ? 3 : 2;
            for (int w = 0; w < inputs; ++w)
                node.raw_weights.push_back(registry.add(
                    node_name + ".w" + std::to_string(w), Tensor(Shape{1}, {1.0})));
            node.conv = detail::make_conv_block(node_name + ".conv", cfg.channels, cfg.channels,
                                                3, rng, registry);
            pass_params.bottom_up.push_back(std::move(node));
        }
        params.passes.push_back(std::move(pass_params));
    }
    for (std::size_t l = 0; l < levels; ++l) {
        LevelAttentionParams attn;
        const std::string name = prefix + ".attn.l" + std::to_string(l);
        attn.weight = registry.add(name + ".weight", xavier_init({1, cfg.channels, 1, 1}, rng));
        params.attention.push_back(std::move(attn));
    }
    params.proj_weight =
        registry.add(prefix + ".proj.weight", xavier_init({cfg.channels, d_model}, rng));
    params.proj_bias = registry.add(prefix + ".proj.bias", Tensor(Shape{d_model}));
    return params;
}

inline BaselineEncoderParams build_baseline_params(const EncoderConfig& cfg, std::size_t d_model,
                                                   Rng& rng, ModelParams& registry,
                                                   const std::string& prefix = "encoder") {
    BaselineEncoderParams params;
    for (std::size_t b = 0; b < cfg.blocks_per_scale; ++b)
        params.extract.push_back(detail::make_conv_block(
            prefix + ".extract.block" + std::to_string(b), cfg.channels,
            b == 0 ? 1 : cfg.channels, 3, rng, registry));
    params.proj_weight =
        registry.add(prefix + ".proj.weight", xavier_init({cfg.channels, d_model}, rng));
    params.proj_bias = registry.add(prefix + ".proj.bias", Tensor(Shape{d_model}));
    return params;
}

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

/// Bilinear resize by a factor in (0, 1]; output extents round up.
inline Tensor resize_image(const Tensor& image, double factor) {
    if (factor <= 0.0 || factor > 1.0)
        throw ConfigError("resize: factor must lie in (0,1], got " + std::to_string(factor));
    if (image.shape().size() != 3)
        throw DimensionError("resize: expects [C,H,W], got " + shape_to_string(image.shape()));
    const auto target = [factor](std::size_t extent) {
        return static_cast<std::size_t>(
            std::ceil(static_cast<double>(extent) * factor - 1e-12));
    };
    const std::size_t out_h = target(image.shape()[1]);
    const std::size_t out_w = target(image.shape()[2]);
    if (out_h == image.shape()[1] && out_w == image.shape()[2]) return image;
    return bilinear_resize(image, out_h, out_w);
}

/// Stack of stride-2 conv + Swish blocks, shared across scales.
inline Tensor extract_features(const Tensor& image, const std::vector<ConvBlockParams>& blocks) {
    Tensor features = image;
    for (const auto& block : blocks)
        features = swish(conv2d(features, block.weight, block.bias, 2, 1));
    return features;
}

namespace detail {

/// Normalized nonnegative fusion of equal-shape inputs: coefficients
/// relu(w_i) / sum_j relu(w_j), summing to 1 exactly. A degenerate weight
/// sum below eps falls back to uniform coefficients.
inline Tensor fuse_inputs(const std::vector<Tensor>& inputs, const FusionNodeParams& node,
                          double eps, FusionProbe* probe) {
    if (inputs.size() != node.raw_weights.size())
        throw DimensionError("fusion node: " + std::to_string(inputs.size()) + " inputs vs " +
                             std::to_string(node.raw_weights.size()) + " weights");
    std::vector<Tensor> positive;
    for (const auto& raw : node.raw_weights) positive.push_back(relu(raw));
    Tensor total = positive[0];
    for (std::size_t i = 1; i < positive.size(); ++i) total = add(total, positive[i]);

    std::vector<Tensor> coefficients;
    if (total.item() < eps) {
        const double uniform = 1.0 / static_cast<double>(inputs.size());
        for (std::size_t i = 0; i < inputs.size(); ++i)
            coefficients.push_back(Tensor::scalar(uniform));
    } else {
        for (auto& p : positive) coefficients.push_back(div(p, total));
    }
    if (probe) {
        std::vector<double> values;
        for (const auto& c : coefficients) values.push_back(c.item());
        probe->node_coefficients.push_back(std::move(values));
    }
    Tensor fused = mul_scalar(inputs[0], coefficients[0]);
    for (std::size_t i = 1; i < inputs.size(); ++i)
        fused = add(fused, mul_scalar(inputs[i], coefficients[i]));
    return fused;
}

inline Tensor node_conv(const Tensor& fused, const ConvBlockParams& conv) {
    return swish(conv2d(fused, conv.weight, conv.bias, 1, 1));
}

inline Tensor resample_to(const Tensor& x, std::size_t h, std::size_t w) {
    if (x.shape()[1] == h && x.shape()[2] == w) return x;
    if (x.shape()[1] <= h)  // upsample
        return bilinear_resize(x, h, w);
    return adaptive_avg_pool(x, h, w);  // downsample
}

}  // namespace detail

/// `depth` repetitions of a top-down then bottom-up fusion pass. A single
/// level passes through untouched with the bypass flag set.
inline FeaturePyramid bifpn_fuse(const FeaturePyramid& pyramid,
                                 const std::vector<BifpnPassParams>& passes, std::size_t depth,
                                 double eps, FusionProbe* probe = nullptr) {
    if (pyramid.levels.empty()) throw DimensionError("bifpn_fuse: empty pyramid");
    if (pyramid.levels.size() == 1) {
        FeaturePyramid bypass = pyramid;
        bypass.fusion_bypassed = true;
        return bypass;
    }
    if (passes.size() < depth)
        throw ContractError("bifpn_fuse: " + std::to_string(depth) + " passes requested but " +
                            std::to_string(passes.size()) + " parameterized");
    const std::size_t level_count = pyramid.levels.size();
    std::vector<Tensor> current = pyramid.levels;
    for (std::size_t pass = 0; pass < depth; ++pass) {
        const BifpnPassParams& pp = passes[pass];
        std::vector<Tensor> top_down(level_count);
        top_down[level_count - 1] = current[level_count - 1];
        for (std::size_t idx = level_count - 1; idx-- > 0;) {
            const std::size_t h = current[idx].shape()[1], w = current[idx].shape()[2];
            Tensor up = detail::resample_to(top_down[idx + 1], h, w);
            Tensor fused = detail::fuse_inputs({current[idx], up}, pp.top_down[idx], eps, probe);
            top_down[idx] = detail::node_conv(fused, pp.top_down[idx].conv);
        }
        std::vector<Tensor> next(level_count);
        next[0] = top_down[0];
        for (std::size_t idx = 1; idx < level_count; ++idx) {
            const std::size_t h = current[idx].shape()[1], w = current[idx].shape()[2];
            Tensor down = detail::resample_to(next[idx - 1], h, w);
            const FusionNodeParams& node = pp.bottom_up[idx - 1];
            Tensor fused =
                idx + 1 < level_count
                    ? detail::fuse_inputs({current[idx], top_down[idx], down}, node, eps, probe)
                    : detail::fuse_inputs({current[idx], down}, node, eps, probe);
            next[idx] = detail::node_conv(fused, node.conv);
        }
        current = std::move(next);
    }
    FeaturePyramid out;
    out.levels = std::move(current);
    return out;
}

/// Residual spatial gating: a learned 1x1 projection scored by softmax over
/// positions, scaled by the position count so uniform scores gate by exactly
/// one (identity).
inline FeaturePyramid image_attention(const FeaturePyramid& pyramid,
                                      const std::vector<LevelAttentionParams>& attention) {
    if (pyramid.levels.size() != attention.size())
        throw DimensionError("image_attention: " + std::to_string(pyramid.levels.size()) +
                             " levels vs " + std::to_string(attention.size()) + " gates");
    FeaturePyramid out;
    out.fusion_bypassed = pyramid.fusion_bypassed;
    for (std::size_t l = 0; l < pyramid.levels.size(); ++l) {
        const Tensor& level = pyramid.levels[l];
        const std::size_t c = level.shape()[0], h = level.shape()[1], w = level.shape()[2];
        Tensor scores = conv2d(level, attention[l].weight, Tensor(Shape{1}), 1, 0);
        Tensor gate = scale(softmax(reshape(scores, Shape{h * w}), 0),
                            static_cast<double>(h * w));
        Tensor gated = mul_rowwise(reshape(level, Shape{c, h * w}), gate);
        out.levels.push_back(reshape(gated, Shape{c, h, w}));
    }
    return out;
}

namespace detail {

inline void check_min_size(const EncoderConfig& cfg, const Tensor& image) {
    if (image.shape().size() != 3 || image.shape()[0] != 1)
        throw DimensionError("encode: expects [1,H,W], got " + shape_to_string(image.shape()));
    const std::size_t grid = cfg.pool_grid == 0 ? 1 : cfg.pool_grid;
    // after the extractor each scale holds ceil(ceil(H*s) / 2^blocks) pixels
    const double shrink = std::pow(2.0, static_cast<double>(cfg.blocks_per_scale));
    const double smallest_scale = cfg.scales.back();
    const std::size_t min_extent = static_cast<std::size_t>(
        std::ceil((static_cast<double>(grid - 1) * shrink + 1.0) / smallest_scale));
    if (image.shape()[1] < min_extent || image.shape()[2] < min_extent)
        throw ConfigError("encode: image " + shape_to_string(image.shape()) +
                          " below the minimum extent " + std::to_string(min_extent) +
                          " required by this configuration");
}

inline Tensor project_levels(const std::vector<Tensor>& levels, std::size_t pool_grid,
                             const Tensor& proj_weight, const Tensor& proj_bias) {
    std::vector<Tensor> flattened;
    for (const Tensor& level : levels) {
        Tensor pooled = pool_grid == 0
                            ? level
                            : adaptive_avg_pool(level, pool_grid, pool_grid);
        const std::size_t c = pooled.shape()[0];
        const std::size_t positions = pooled.shape()[1] * pooled.shape()[2];
        flattened.push_back(transpose(reshape(pooled, Shape{c, positions})));
    }
    Tensor memory_input = flattened.size() == 1 ? flattened[0] : concat(flattened, 0);
    return add_rowwise(matmul(memory_input, proj_weight), proj_bias);
}

}  // namespace detail

/// Full pyramid encoder: resize -> extract -> fuse -> attention -> pool ->
/// project. Returns the memory sequence [N_mem, d_model].
inline Tensor encode(const Tensor& image, const EncoderConfig& cfg, const EncoderParams& params,
                     FusionProbe* probe = nullptr) {
    cfg.validate();
    detail::check_min_size(cfg, image);
    FeaturePyramid pyramid;
    for (double factor : cfg.scales) {
        Tensor resized = resize_image(image, factor);
        Tensor features = extract_features(resized, params.extract);
        pyramid.levels.push_back(features);
    }
    for (std::size_t l = 0; l < pyramid.levels.size(); ++l)
        pyramid.levels[l] = conv2d(pyramid.levels[l], params.lateral[l].weight,
                                   params.lateral[l].bias, 1, 0);
    FeaturePyramid fused =
        bifpn_fuse(pyramid, params.passes, cfg.bifpn_depth, cfg.fusion_eps, probe);
    FeaturePyramid attended = image_attention(fused, params.attention);
    return detail::project_levels(attended.levels, cfg.pool_grid, params.proj_weight,
                                  params.proj_bias);
}

/// Single-scale comparison encoder: no fusion, no attention, same contract.
inline Tensor baseline_encode(const Tensor& image, const EncoderConfig& cfg,
                              const BaselineEncoderParams& params) {
    detail::check_min_size(cfg, image);
    Tensor features = extract_features(image, params.extract);
    return detail::project_levels({features}, cfg.pool_grid, params.proj_weight,
                                  params.proj_bias);
}

}  // namespace reportgen
