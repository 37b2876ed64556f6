#pragma once

#include <cstdlib>
#include <fstream>
#include <string>

#include <json.hpp>

#include "reportgen/decoder.hpp"
#include "reportgen/encoder.hpp"
#include "reportgen/errors.hpp"
#include "reportgen/model.hpp"
#include "reportgen/training.hpp"

// Run configuration: a single JSON document with sections mirroring the
// training-recipe hyperparameter table in snake_case. A named profile
// supplies the defaults; explicit fields override it.

namespace reportgen {

struct GenerationConfig {
    std::size_t beam = 3;
    double alpha = 0.6;
    std::size_t max_len = 48;
};

struct RunConfig {
    std::string profile = "default";
    EncoderKind encoder_kind = EncoderKind::AcBifpn;
    EncoderConfig encoder;
    DecoderConfig decoder;
    TrainConfig train;
    GenerationConfig generation;
    std::string data_dir;  // optional defaults for the CLI's --data / --out
    std::string out_dir;
};

/// Desk-scale defaults: small model, paper training recipe (lr 0.001,
/// batch 16, dropout 0.3, clipping 1.0, plateau scheduler, Xavier).
inline RunConfig default_profile() {
    RunConfig cfg;
    cfg.profile = "default";
    cfg.encoder.scales = {1.0, 0.5, 0.25};
    cfg.encoder.channels = 12;
    cfg.encoder.blocks_per_scale = 2;
    cfg.encoder.bifpn_depth = 3;
    cfg.encoder.pool_grid = 4;
    cfg.decoder.d_model = 64;
    cfg.decoder.n_layers = 2;
    cfg.decoder.n_heads = 4;
    cfg.decoder.d_ff = 256;
    cfg.decoder.max_len = 48;
    cfg.decoder.dropout = 0.3;
    cfg.train.learning_rate = 0.001;
    cfg.train.batch_size = 16;
    cfg.train.epochs = 50;
    cfg.train.dropout = 0.3;
    cfg.train.clip_norm = 1.0;
    cfg.generation.max_len = 48;
    return cfg;
}

/// The published full-scale recipe: batch 8, lr 1e-4, dropout 0.5, six
/// decoder layers with eight heads and 512-token sequences. Provided for
/// fidelity; not runnable at desk scale in reasonable time.
inline RunConfig rsna_paper_profile() {
    RunConfig cfg;
    cfg.profile = "rsna-paper";
    cfg.encoder.scales = {1.0, 0.5, 0.25};
    cfg.encoder.channels = 64;
    cfg.encoder.blocks_per_scale = 2;
    cfg.encoder.bifpn_depth = 3;
    cfg.encoder.pool_grid = 4;
    cfg.decoder.d_model = 512;
    cfg.decoder.n_layers = 6;
    cfg.decoder.n_heads = 8;
    cfg.decoder.d_ff = 2048;
    cfg.decoder.max_len = 512;
    cfg.decoder.dropout = 0.5;
    cfg.train.learning_rate = 0.0001;
    cfg.train.batch_size = 8;
    cfg.train.epochs = 50;
    cfg.train.dropout = 0.5;
    cfg.train.clip_norm = 1.0;
    cfg.generation.max_len = 128;
    return cfg;
}

inline RunConfig profile_by_name(const std::string& name) {
    if (name == "default") return default_profile();
    if (name == "rsna-paper") return rsna_paper_profile();
    throw ConfigError("unknown profile: " + name + " (expected 'default' or 'rsna-paper')");
}

namespace detail {

inline void check_fixed_method(const nlohmann::json& section, const char* key,
                               const std::string& expected) {
    if (section.contains(key)) {
        const std::string got = section.at(key).get<std::string>();
        if (got != expected)
            throw ConfigError(std::string(key) + " '" + got + "' not supported (only '" +
                              expected + "')");
    }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig cfg = profile_by_name(j.value("profile", std::string("default")));
    try {
        if (j.contains("model")) {
            const auto& model = j.at("model");
            if (model.contains("encoder")) {
                const auto& enc = model.at("encoder");
                cfg.encoder_kind =
                    encoder_kind_from_name(enc.value("type", encoder_kind_name(cfg.encoder_kind)));
                cfg.encoder.scales = enc.value("scales", cfg.encoder.scales);
                cfg.encoder.channels = enc.value("channels", cfg.encoder.channels);
                cfg.encoder.blocks_per_scale =
                    enc.value("blocks_per_scale", cfg.encoder.blocks_per_scale);
                cfg.encoder.bifpn_depth = enc.value("ac_bifpn_depth", cfg.encoder.bifpn_depth);
                cfg.encoder.fusion_eps = enc.value("fusion_eps", cfg.encoder.fusion_eps);
                cfg.encoder.pool_grid = enc.value("pool_grid", cfg.encoder.pool_grid);
            }
            if (model.contains("decoder")) {
                const auto& dec = model.at("decoder");
                cfg.decoder.d_model = dec.value("d_model", cfg.decoder.d_model);
                cfg.decoder.n_layers = dec.value("transformer_layers", cfg.decoder.n_layers);
                cfg.decoder.n_heads = dec.value("attention_heads", cfg.decoder.n_heads);
                cfg.decoder.d_ff = dec.value("d_ff", cfg.decoder.d_ff);
                cfg.decoder.max_len = dec.value("sequence_length", cfg.decoder.max_len);
                cfg.decoder.dropout = dec.value("dropout_rate", cfg.decoder.dropout);
            }
        }
        if (j.contains("train")) {
            const auto& train = j.at("train");
            detail::check_fixed_method(train, "optimizer", "adam");
            detail::check_fixed_method(train, "loss_function", "cross_entropy");
            detail::check_fixed_method(train, "learning_rate_scheduler", "reduce_lr_on_plateau");
            detail::check_fixed_method(train, "weight_initialization", "xavier");
            cfg.train.learning_rate = train.value("learning_rate", cfg.train.learning_rate);
            cfg.train.batch_size = train.value("batch_size", cfg.train.batch_size);
            cfg.train.epochs = train.value("epochs", cfg.train.epochs);
            cfg.train.dropout = train.value("dropout_rate", cfg.train.dropout);
            cfg.train.clip_norm = train.value("gradient_clipping", cfg.train.clip_norm);
            cfg.train.scheduler_factor =
                train.value("scheduler_factor", cfg.train.scheduler_factor);
            cfg.train.scheduler_patience =
                train.value("scheduler_patience", cfg.train.scheduler_patience);
            cfg.train.min_lr = train.value("min_lr", cfg.train.min_lr);
            cfg.train.early_stop_patience =
                train.value("early_stop_patience", cfg.train.early_stop_patience);
            cfg.train.seed = train.value("seed", cfg.train.seed);
            cfg.train.stop_train_loss = train.value("stop_train_loss", cfg.train.stop_train_loss);
        }
        if (j.contains("generation")) {
            const auto& gen = j.at("generation");
            cfg.generation.beam = gen.value("beam", cfg.generation.beam);
            cfg.generation.alpha = gen.value("alpha", cfg.generation.alpha);
            cfg.generation.max_len = gen.value("max_len", cfg.generation.max_len);
        }
        if (j.contains("paths")) {
            const auto& paths = j.at("paths");
            cfg.data_dir = paths.value("data", cfg.data_dir);
            cfg.out_dir = paths.value("out", cfg.out_dir);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    // one dropout rate drives both the recipe and the decoder's layers;
    // an explicit train-section value wins
    const bool train_dropout_set = j.contains("train") && j.at("train").contains("dropout_rate");
    if (train_dropout_set)
        cfg.decoder.dropout = cfg.train.dropout;
    else
        cfg.train.dropout = cfg.decoder.dropout;
    if (const char* env_seed = std::getenv("REPORTGEN_SEED")) {
        try {
            cfg.train.seed = std::stoull(env_seed);
        } catch (const std::exception&) {
            throw ConfigError("REPORTGEN_SEED is not an integer: " + std::string(env_seed));
        }
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return parse_run_config(nlohmann::json::object());
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config JSON in " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["profile"] = cfg.profile;
    j["model"]["encoder"] = {
        {"type", encoder_kind_name(cfg.encoder_kind)},
        {"scales", cfg.encoder.scales},
        {"channels", cfg.encoder.channels},
        {"blocks_per_scale", cfg.encoder.blocks_per_scale},
        {"ac_bifpn_depth", cfg.encoder.bifpn_depth},
        {"fusion_eps", cfg.encoder.fusion_eps},
        {"pool_grid", cfg.encoder.pool_grid},
    };
    j["model"]["decoder"] = {
        {"d_model", cfg.decoder.d_model},
        {"transformer_layers", cfg.decoder.n_layers},
        {"attention_heads", cfg.decoder.n_heads},
        {"d_ff", cfg.decoder.d_ff},
        {"sequence_length", cfg.decoder.max_len},
        {"dropout_rate", cfg.decoder.dropout},
    };
    j["train"] = {
        {"learning_rate", cfg.train.learning_rate},
        {"batch_size", cfg.train.batch_size},
        {"epochs", cfg.train.epochs},
        {"dropout_rate", cfg.train.dropout},
        {"gradient_clipping", cfg.train.clip_norm},
        {"scheduler_factor", cfg.train.scheduler_factor},
        {"scheduler_patience", cfg.train.scheduler_patience},
        {"min_lr", cfg.train.min_lr},
        {"early_stop_patience", cfg.train.early_stop_patience},
        {"seed", cfg.train.seed},
        {"stop_train_loss", cfg.train.stop_train_loss},
        {"optimizer", "adam"},
        {"loss_function", "cross_entropy"},
        {"learning_rate_scheduler", "reduce_lr_on_plateau"},
        {"weight_initialization", "xavier"},
    };
    j["generation"] = {
        {"beam", cfg.generation.beam},
        {"alpha", cfg.generation.alpha},
        {"max_len", cfg.generation.max_len},
    };
    if (!cfg.data_dir.empty() || !cfg.out_dir.empty())
        j["paths"] = {{"data", cfg.data_dir}, {"out", cfg.out_dir}};
    return j;
}

}  // namespace reportgen
