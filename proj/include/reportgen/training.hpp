#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "reportgen/data.hpp"
#include "reportgen/model.hpp"
#include "reportgen/ops.hpp"
#include "reportgen/tokenizer.hpp"

// Joint optimization recipe: teacher-forced cross-entropy over shuffled
// mini-batches, Adam with global-norm gradient clipping, ReduceLROnPlateau
// on validation loss, early stopping, best-checkpoint retention.

namespace reportgen {

struct TrainConfig {
    double learning_rate = 0.001;  // paper recipe
    std::size_t batch_size = 16;   // paper recipe
    std::size_t epochs = 50;       // paper recipe
    double dropout = 0.3;          // paper recipe
    double clip_norm = 1.0;        // paper recipe
    double scheduler_factor = 0.5;
    std::size_t scheduler_patience = 3;
    double min_lr = 1e-6;
    std::size_t early_stop_patience = 10;
    std::uint64_t seed = 20250801;
    double stop_train_loss = 0.0;  // 0 disables the train-loss stop

    void validate() const {
        if (learning_rate < 0.0 || batch_size == 0 || epochs == 0)
            throw ConfigError("train: learning_rate, batch_size and epochs must be positive");
        if (scheduler_factor <= 0.0 || scheduler_factor >= 1.0)
            throw ConfigError("train: scheduler_factor must lie in (0,1)");
        if (clip_norm <= 0.0) throw ConfigError("train: clip_norm must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("train: dropout must lie in [0,1)");
    }
};

// ---------------------------------------------------------------------------
// Optimizer pieces
// ---------------------------------------------------------------------------

/// Scales all gradients so their global L2 norm does not exceed max_norm.
/// Returns the pre-clip norm. Direction is preserved exactly.
inline double clip_gradients(ModelParams& params, double max_norm) {
    double sq_sum = 0.0;
    for (auto& [name, t] : params.entries())
        for (double g : t.grad()) sq_sum += g * g;
    const double norm = std::sqrt(sq_sum);
    if (norm > max_norm) {
        const double scale_by = max_norm / norm;
        for (auto& [name, t] : params.entries())
            for (double& g : t.grad_mutable()) g *= scale_by;
    }
    return norm;
}

/// Standard bias-corrected Adam. Aborts with the offending parameter's name
/// when a non-finite gradient appears.
class AdamOptimizer {
public:
    explicit AdamOptimizer(const ModelParams& params, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& [name, t] : params.entries()) {
            m_.emplace_back(t.size(), 0.0);
            v_.emplace_back(t.size(), 0.0);
        }
    }

    std::size_t step_count() const { return step_; }

    void step(ModelParams& params, double lr) {
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (std::size_t p = 0; p < params.entries().size(); ++p) {
            auto& [name, t] = params.entries()[p];
            auto grad = t.grad();
            if (grad.empty()) continue;
            for (std::size_t i = 0; i < t.size(); ++i) {
                const double g = grad[i];
                if (!std::isfinite(g))
                    throw NumericError("non-finite gradient in parameter '" + name + "'");
                m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g;
                v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g * g;
                const double m_hat = m_[p][i] / bc1;
                const double v_hat = v_[p][i] / bc2;
                t[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
            }
        }
    }

private:
    double beta1_, beta2_, eps_;
    std::size_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// ReduceLROnPlateau: after `patience` consecutive epochs without relative
/// improvement (threshold 1e-4), multiply the rate by `factor`, never below
/// min_lr.
class PlateauScheduler {
public:
    PlateauScheduler(double lr, double factor, std::size_t patience, double min_lr)
        : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr) {}

    double learning_rate() const { return lr_; }

    double observe(double val_loss) {
        if (val_loss < best_ * (1.0 - kRelThreshold)) {
            best_ = val_loss;
            stale_ = 0;
        } else if (++stale_ > patience_) {
            lr_ = std::max(lr_ * factor_, min_lr_);
            stale_ = 0;
        }
        return lr_;
    }

private:
    static constexpr double kRelThreshold = 1e-4;
    double lr_, factor_;
    std::size_t patience_;
    double min_lr_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t stale_ = 0;
};

// ---------------------------------------------------------------------------
// Loss helpers
// ---------------------------------------------------------------------------

/// Teacher-forcing view of an encoded report: inputs are tokens[0..T-2],
/// targets tokens[1..T-1].
struct TeacherForcedPair {
    std::vector<int> inputs;
    std::vector<int> targets;
    std::vector<bool> mask;
};

inline TeacherForcedPair teacher_forced(const std::vector<int>& tokens) {
    if (tokens.size() < 2) throw DataError("teacher_forced: sequence too short");
    TeacherForcedPair pair;
    pair.inputs.assign(tokens.begin(), tokens.end() - 1);
    pair.targets.assign(tokens.begin() + 1, tokens.end());
    pair.mask.assign(pair.targets.size(), true);
    for (std::size_t i = 0; i < pair.targets.size(); ++i)
        if (pair.targets[i] == Vocabulary::kPad) pair.mask[i] = false;
    return pair;
}

inline Tensor sample_loss(const ReportModel& model, const SyntheticCase& item,
                          const std::vector<int>& tokens, const RunMode& mode) {
    Tensor memory = model.encode_image(item.image);
    const TeacherForcedPair pair = teacher_forced(tokens);
    Tensor logits = model.logits(pair.inputs, memory, mode);
    return cross_entropy(logits, pair.targets, pair.mask);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0;  // 1-indexed
    double train_loss = 0.0;
    double val_loss = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    bool stopped_early = false;
};

inline double evaluate_loss(const ReportModel& model,
                            const std::vector<SyntheticCase>& cases,
                            const std::vector<std::vector<int>>& tokens) {
    double total = 0.0;
    for (std::size_t i = 0; i < cases.size(); ++i)
        total += sample_loss(model, cases[i], tokens[i], RunMode::eval()).item();
    return total / static_cast<double>(cases.size());
}

using EpochCallback = std::function<void(const EpochStats&)>;

/// Runs the full recipe and leaves the best-validation parameters in the
/// model. History carries one record per completed epoch.
inline TrainResult train(ReportModel& model, const Vocabulary& vocab,
                         const std::vector<SyntheticCase>& train_cases,
                         const std::vector<SyntheticCase>& val_cases, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (train_cases.empty()) throw DataError("train: empty training split");
    if (val_cases.empty()) throw DataError("train: empty validation split");

    auto encode_all = [&](const std::vector<SyntheticCase>& cases) {
        std::vector<std::vector<int>> out;
        for (const auto& item : cases)
            out.push_back(encode(item.report, vocab, model.decoder_cfg.max_len));
        return out;
    };
    const auto train_tokens = encode_all(train_cases);
    const auto val_tokens = encode_all(val_cases);

    AdamOptimizer adam(model.registry);
    PlateauScheduler scheduler(cfg.learning_rate, cfg.scheduler_factor, cfg.scheduler_patience,
                               cfg.min_lr);
    Rng dropout_rng(splitmix64(cfg.seed ^ 0x9e3779b97f4a7c15ULL));

    TrainResult result;
    std::vector<std::vector<double>> best_values;
    std::size_t epochs_since_best = 0;
    double lr = cfg.learning_rate;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(train_cases.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng order_rng(splitmix64(cfg.seed + epoch));
        order_rng.shuffle(order);

        double train_loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            model.registry.zero_grad();
            double batch_value = 0.0;
            {
                Tape tape;
                Tensor batch_loss;
                bool first = true;
                RunMode mode = RunMode::train(dropout_rng, cfg.dropout);
                for (std::size_t b = start; b < end; ++b) {
                    Tensor item_loss =
                        sample_loss(model, train_cases[order[b]], train_tokens[order[b]], mode);
                    batch_loss = first ? item_loss : add(batch_loss, item_loss);
                    first = false;
                }
                batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
                batch_value = batch_loss.item();
                tape.backward(batch_loss);
            }
            clip_gradients(model.registry, cfg.clip_norm);
            adam.step(model.registry, lr);
            train_loss_sum += batch_value * static_cast<double>(end - start);
        }
        const double train_loss = train_loss_sum / static_cast<double>(train_cases.size());
        const double val_loss = evaluate_loss(model, val_cases, val_tokens);

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = train_loss;
        stats.val_loss = val_loss;
        stats.learning_rate = lr;
        result.history.push_back(stats);
        if (on_epoch) on_epoch(stats);

        if (val_loss < result.best_val_loss * (1.0 - 1e-4)) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            epochs_since_best = 0;
            best_values.clear();
            for (const auto& [name, t] : model.registry.entries())
                best_values.emplace_back(t.values().begin(), t.values().end());
        } else {
            ++epochs_since_best;
        }
        lr = scheduler.observe(val_loss);

        if (cfg.stop_train_loss > 0.0 && train_loss < cfg.stop_train_loss) break;
        if (epochs_since_best >= cfg.early_stop_patience) {
            result.stopped_early = true;
            break;
        }
    }
    if (!best_values.empty()) {
        for (std::size_t p = 0; p < model.registry.entries().size(); ++p) {
            auto& [name, t] = model.registry.entries()[p];
            std::copy(best_values[p].begin(), best_values[p].end(), t.values().begin());
        }
    }
    return result;
}

}  // namespace reportgen
