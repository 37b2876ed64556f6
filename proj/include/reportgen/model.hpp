#pragma once

#include <string>

#include "reportgen/decoder.hpp"
#include "reportgen/encoder.hpp"
#include "reportgen/params.hpp"
#include "reportgen/rng.hpp"

namespace reportgen {

enum class EncoderKind { AcBifpn, Baseline };

inline std::string encoder_kind_name(EncoderKind kind) {
    return kind == EncoderKind::AcBifpn ? "ac-bifpn" : "baseline";
}

inline EncoderKind encoder_kind_from_name(const std::string& name) {
    if (name == "ac-bifpn") return EncoderKind::AcBifpn;
    if (name == "baseline") return EncoderKind::Baseline;
    throw ConfigError("unknown encoder kind: " + name);
}

/// Encoder + decoder with one shared parameter registry (checkpoint order).
struct ReportModel {
    EncoderConfig encoder_cfg;
    DecoderConfig decoder_cfg;
    EncoderKind kind = EncoderKind::AcBifpn;
    ModelParams registry;
    EncoderParams encoder;
    BaselineEncoderParams baseline;
    DecoderParams decoder;

    static ReportModel build(const EncoderConfig& encoder_cfg, const DecoderConfig& decoder_cfg,
                             EncoderKind kind, std::uint64_t seed) {
        ReportModel model;
        model.encoder_cfg = encoder_cfg;
        model.decoder_cfg = decoder_cfg;
        model.kind = kind;
        Rng rng(seed);
        if (kind == EncoderKind::AcBifpn)
            model.encoder = build_encoder_params(encoder_cfg, decoder_cfg.d_model, rng,
                                                 model.registry);
        else
            model.baseline = build_baseline_params(encoder_cfg, decoder_cfg.d_model, rng,
                                                   model.registry);
        model.decoder = build_decoder_params(decoder_cfg, rng, model.registry);
        return model;
    }

    Tensor encode_image(const Tensor& image, FusionProbe* probe = nullptr) const {
        return kind == EncoderKind::AcBifpn
                   ? encode(image, encoder_cfg, encoder, probe)
                   : baseline_encode(image, encoder_cfg, baseline);
    }

    Tensor logits(const std::vector<int>& tokens, const Tensor& memory, const RunMode& mode,
                  AttentionProbe* probe = nullptr) const {
        return decode_logits(tokens, memory, decoder_cfg, decoder, mode, probe);
    }
};

}  // namespace reportgen
