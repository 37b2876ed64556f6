#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "reportgen/errors.hpp"
#include "reportgen/ops.hpp"
#include "reportgen/params.hpp"
#include "reportgen/tokenizer.hpp"

// Transformer decoder: scaled token embeddings + sinusoidal positions,
// then per layer masked multi-head self-attention, cross-attention over the
// encoder memory, and a position-wise feed-forward block, each sub-layer
// wrapped as LayerNorm(x + Dropout(SubLayer(x))) (post-norm). A final linear
// head produces vocabulary logits.

namespace reportgen {

struct DecoderConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 6;    // paper recipe
    std::size_t n_heads = 8;     // paper recipe
    std::size_t d_ff = 0;        // 0 = 4 * d_model
    std::size_t max_len = 512;   // paper recipe
    std::size_t vocab_size = 0;  // filled from the vocabulary at build time
    double dropout = 0.3;        // paper recipe
    double layer_norm_eps = 1e-5;

    std::size_t ff_dim() const { return d_ff == 0 ? 4 * d_model : d_ff; }

    void validate() const {
        if (d_model == 0 || n_layers == 0 || n_heads == 0 || max_len < 2)
            throw ConfigError("decoder: d_model, n_layers, n_heads and max_len must be positive");
        if (d_model % 2 != 0)
            throw ConfigError("decoder: d_model must be even for positional encoding");
        if (d_model % n_heads != 0)
            throw ConfigError("decoder: d_model " + std::to_string(d_model) +
                              " not divisible by n_heads " + std::to_string(n_heads));
        if (vocab_size == 0) throw ConfigError("decoder: vocab_size not set");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("decoder: dropout must lie in [0, 1)");
    }
};

/// Forward-pass mode: training enables dropout and requires an RNG.
struct RunMode {
    bool training = false;
    Rng* rng = nullptr;
    double dropout = 0.0;

    static RunMode eval() { return {}; }
    static RunMode train(Rng& rng, double dropout) { return {true, &rng, dropout}; }
};

/// Captured attention weights: one record per (layer, head) evaluation,
/// query rows by key columns.
struct AttentionProbe {
    struct Record {
        std::size_t rows = 0;
        std::size_t cols = 0;
        bool causal = false;
        std::vector<double> weights;
    };
    std::vector<Record> records;
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct HeadParams {
    Tensor wq, wk, wv;  // [d_model, d_head]
};

struct MultiHeadParams {
    std::vector<HeadParams> heads;
    Tensor wz;  // [d_model, d_model]
};

struct LayerNormParams {
    Tensor gain, bias;  // [d_model]
};

struct DecoderLayerParams {
    MultiHeadParams self_attn;
    MultiHeadParams cross_attn;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    LayerNormParams ln_self, ln_cross, ln_ffn;
};

struct DecoderParams {
    Tensor embedding;   // [vocab, d_model]
    Tensor positional;  // [max_len, d_model], fixed (not trained)
    std::vector<DecoderLayerParams> layers;
    Tensor out_weight;  // [d_model, vocab]
    Tensor out_bias;    // [vocab]
};

// ---------------------------------------------------------------------------
// Positional encoding
// ---------------------------------------------------------------------------

/// PE[p, 2j] = sin(p / 10000^(2j/d_model)), PE[p, 2j+1] = cos(same argument).
inline Tensor positional_encoding(std::size_t max_len, std::size_t d_model) {
    if (d_model % 2 != 0)
        throw ConfigError("positional_encoding: d_model must be even, got " +
                          std::to_string(d_model));
    Tensor pe(Shape{max_len, d_model});
    for (std::size_t p = 0; p < max_len; ++p)
        for (std::size_t j = 0; 2 * j < d_model; ++j) {
            const double exponent =
                static_cast<double>(2 * j) / static_cast<double>(d_model);
            const double argument =
                static_cast<double>(p) / std::pow(10000.0, exponent);
            pe[p * d_model + 2 * j] = std::sin(argument);
            pe[p * d_model + 2 * j + 1] = std::cos(argument);
        }
    return pe;
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> causal_mask(std::size_t t) {
    std::vector<double> mask(t * t, 0.0);
    for (std::size_t q = 0; q < t; ++q)
        for (std::size_t k = q + 1; k < t; ++k)
            mask[q * t + k] = -std::numeric_limits<double>::infinity();
    return mask;
}

}  // namespace detail

/// Scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V. `mask`, when
/// present, is an additive [Tq, Tk] buffer (-inf forbids a key).
inline Tensor attention(const Tensor& query, const Tensor& key, const Tensor& value,
                        const std::vector<double>* mask = nullptr,
                        AttentionProbe* probe = nullptr) {
    if (query.shape().size() != 2 || key.shape().size() != 2 || value.shape().size() != 2)
        throw DimensionError("attention: operands must be 2-D");
    if (query.shape()[1] != key.shape()[1])
        throw DimensionError("attention: query/key width mismatch " +
                             shape_to_string(query.shape()) + " vs " +
                             shape_to_string(key.shape()));
    if (key.shape()[0] != value.shape()[0])
        throw DimensionError("attention: key/value length mismatch " +
                             shape_to_string(key.shape()) + " vs " +
                             shape_to_string(value.shape()));
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(key.shape()[1]));
    Tensor scores = scale(matmul(query, transpose(key)), inv_sqrt_dk);
    if (mask != nullptr) scores = add_buffer(scores, *mask);
    Tensor weights = softmax(scores, 1);
    if (probe != nullptr) {
        AttentionProbe::Record record;
        record.rows = weights.shape()[0];
        record.cols = weights.shape()[1];
        record.causal = mask != nullptr;
        record.weights.assign(weights.values().begin(), weights.values().end());
        probe->records.push_back(std::move(record));
    }
    return matmul(weights, value);
}

/// Per-head projections, parallel attention, concatenation, output projection.
inline Tensor multi_head(const Tensor& query_in, const Tensor& key_in, const Tensor& value_in,
                         const MultiHeadParams& params, const std::vector<double>* mask = nullptr,
                         AttentionProbe* probe = nullptr) {
    if (params.heads.empty()) throw ConfigError("multi_head: no heads");
    std::vector<Tensor> outputs;
    for (const HeadParams& head : params.heads) {
        Tensor q = matmul(query_in, head.wq);
        Tensor k = matmul(key_in, head.wk);
        Tensor v = matmul(value_in, head.wv);
        outputs.push_back(attention(q, k, v, mask, probe));
    }
    Tensor joined = outputs.size() == 1 ? outputs[0] : concat(outputs, 1);
    return matmul(joined, params.wz);
}

/// Position-wise feed-forward: relu(z V1 + c1) V2 + c2.
inline Tensor ffn(const Tensor& z, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                  const Tensor& b2) {
    return add_rowwise(matmul(relu(add_rowwise(matmul(z, w1), b1)), w2), b2);
}

// ---------------------------------------------------------------------------
// Decoder stack
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor maybe_dropout(const Tensor& x, const RunMode& mode) {
    if (!mode.training || mode.dropout == 0.0) return x;
    if (mode.rng == nullptr) throw ContractError("training mode requires an RNG for dropout");
    return dropout(x, mode.dropout, *mode.rng, true);
}

}  // namespace detail

/// One decoder layer: masked self-attention, cross-attention over the
/// memory, FFN; each as LayerNorm(input + Dropout(SubLayer(input))).
inline Tensor decoder_layer(const Tensor& x, const Tensor& memory, const DecoderConfig& cfg,
                            const DecoderLayerParams& params, const RunMode& mode,
                            AttentionProbe* probe = nullptr) {
    const std::size_t t = x.shape()[0];
    if (t > cfg.max_len)
        throw DimensionError("decoder_layer: sequence length " + std::to_string(t) +
                             " exceeds max_len " + std::to_string(cfg.max_len));
    const auto mask = detail::causal_mask(t);
    const auto wrap = [&](const Tensor& input, const Tensor& sub, const LayerNormParams& ln) {
        return layer_norm(add(input, detail::maybe_dropout(sub, mode)), ln.gain, ln.bias,
                          cfg.layer_norm_eps);
    };
    Tensor after_self = wrap(x, multi_head(x, x, x, params.self_attn, &mask, probe), params.ln_self);
    Tensor after_cross = wrap(
        after_self, multi_head(after_self, memory, memory, params.cross_attn, nullptr, probe),
        params.ln_cross);
    return wrap(after_cross,
                ffn(after_cross, params.ffn_w1, params.ffn_b1, params.ffn_w2, params.ffn_b2),
                params.ln_ffn);
}

inline DecoderParams build_decoder_params(const DecoderConfig& cfg, Rng& rng,
                                          ModelParams& registry,
                                          const std::string& prefix = "decoder") {
    cfg.validate();
    DecoderParams params;
    params.embedding =
        registry.add(prefix + ".embedding", xavier_init({cfg.vocab_size, cfg.d_model}, rng));
    params.positional = positional_encoding(cfg.max_len, cfg.d_model);
    const std::size_t d_head = cfg.d_model / cfg.n_heads;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string layer_name = prefix + ".layer" + std::to_string(l);
        DecoderLayerParams layer;
        auto build_mha = [&](const std::string& name) {
            MultiHeadParams mha;
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                const std::string head_name = name + ".head" + std::to_string(h);
                HeadParams head;
                head.wq = registry.add(head_name + ".wq", xavier_init({cfg.d_model, d_head}, rng));
                head.wk = registry.add(head_name + ".wk", xavier_init({cfg.d_model, d_head}, rng));
                head.wv = registry.add(head_name + ".wv", xavier_init({cfg.d_model, d_head}, rng));
                mha.heads.push_back(std::move(head));
            }
            mha.wz = registry.add(name + ".wz", xavier_init({cfg.d_model, cfg.d_model}, rng));
            return mha;
        };
        layer.self_attn = build_mha(layer_name + ".self");
        layer.cross_attn = build_mha(layer_name + ".cross");
        layer.ffn_w1 =
            registry.add(layer_name + ".ffn.w1", xavier_init({cfg.d_model, cfg.ff_dim()}, rng));
        layer.ffn_b1 = registry.add(layer_name + ".ffn.b1", Tensor(Shape{cfg.ff_dim()}));
        layer.ffn_w2 =
            registry.add(layer_name + ".ffn.w2", xavier_init({cfg.ff_dim(), cfg.d_model}, rng));
        layer.ffn_b2 = registry.add(layer_name + ".ffn.b2", Tensor(Shape{cfg.d_model}));
        auto build_ln = [&](const std::string& name) {
            LayerNormParams ln;
            ln.gain = registry.add(name + ".gain",
                                   Tensor(Shape{cfg.d_model}, std::vector<double>(cfg.d_model, 1.0)));
            ln.bias = registry.add(name + ".bias", Tensor(Shape{cfg.d_model}));
            return ln;
        };
        layer.ln_self = build_ln(layer_name + ".ln_self");
        layer.ln_cross = build_ln(layer_name + ".ln_cross");
        layer.ln_ffn = build_ln(layer_name + ".ln_ffn");
        params.layers.push_back(std::move(layer));
    }
    params.out_weight =
        registry.add(prefix + ".out.weight", xavier_init({cfg.d_model, cfg.vocab_size}, rng));
    params.out_bias = registry.add(prefix + ".out.bias", Tensor(Shape{cfg.vocab_size}));
    return params;
}

/// Token ids -> next-token logits [T, vocab]. Consumers apply softmax.
inline Tensor decode_logits(const std::vector<int>& tokens, const Tensor& memory,
                            const DecoderConfig& cfg, const DecoderParams& params,
                            const RunMode& mode, AttentionProbe* probe = nullptr) {
    if (tokens.empty() || tokens.front() != Vocabulary::kCls)
        throw ContractError("decode_logits: token sequence must begin with CLS");
    if (tokens.size() > cfg.max_len)
        throw DimensionError("decode_logits: sequence length " + std::to_string(tokens.size()) +
                             " exceeds max_len " + std::to_string(cfg.max_len));
    const std::size_t t = tokens.size();
    Tensor x = scale(embedding_lookup(params.embedding, tokens),
                     std::sqrt(static_cast<double>(cfg.d_model)));
    std::vector<double> pe_rows(params.positional.values().begin(),
                                params.positional.values().begin() + t * cfg.d_model);
    x = detail::maybe_dropout(add_buffer(x, pe_rows), mode);
    for (const DecoderLayerParams& layer : params.layers)
        x = decoder_layer(x, memory, cfg, layer, mode, probe);
    return add_rowwise(matmul(x, params.out_weight), params.out_bias);
}

// ---------------------------------------------------------------------------
// Auxiliary multi-label probe (sigmoid head over pooled memory)
// ---------------------------------------------------------------------------

struct FindingProbeParams {
    Tensor weight;  // [d_model, n_labels]
    Tensor bias;    // [n_labels]
};

inline FindingProbeParams build_finding_probe(std::size_t d_model, std::size_t n_labels,
                                              Rng& rng) {
    FindingProbeParams params;
    params.weight = xavier_init({d_model, n_labels}, rng);
    params.bias = Tensor(Shape{n_labels});
    return params;
}

/// Optional per-finding sigmoid probabilities from mean-pooled memory; an
/// evaluation-harness probe, not part of the generation path.
inline Tensor finding_probabilities(const Tensor& memory, const FindingProbeParams& params) {
    const std::size_t n = memory.shape()[0], d = memory.shape()[1];
    Tensor pooled(Shape{1, d});
    for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += memory[i * d + j];
        pooled[j] = acc / static_cast<double>(n);
    }
    return sigmoid(add_rowwise(matmul(pooled, params.weight), params.bias));
}

}  // namespace reportgen
