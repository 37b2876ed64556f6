#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "reportgen/decoder.hpp"
#include "reportgen/errors.hpp"
#include "reportgen/tokenizer.hpp"

// Autoregressive report generation. Sequences start at CLS and stop at SEP
// or the length cap; CLS and PAD are never emitted (their logits are masked).
// Scores are cumulative log-probabilities of the emitted tokens, including
// the terminating SEP.

namespace reportgen {

struct GenerationResult {
    std::vector<int> tokens;  // content tokens only (specials stripped)
    double score = 0.0;
    bool finished = false;  // ended on SEP rather than the length cap
};

namespace detail {

/// Log-softmax of the final logits row with CLS/PAD masked out.
inline std::vector<double> next_token_log_probs(const std::vector<int>& prefix,
                                                const Tensor& memory, const DecoderConfig& cfg,
                                                const DecoderParams& params) {
    Tensor logits = decode_logits(prefix, memory, cfg, params, RunMode::eval());
    const std::size_t vocab = logits.shape()[1];
    const std::size_t last = logits.shape()[0] - 1;
    std::vector<double> row(vocab);
    for (std::size_t v = 0; v < vocab; ++v) row[v] = logits[last * vocab + v];
    row[Vocabulary::kCls] = -std::numeric_limits<double>::infinity();
    row[Vocabulary::kPad] = -std::numeric_limits<double>::infinity();
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : row)
        if (std::isfinite(v)) denom += std::exp(v - mx);
    const double log_denom = std::log(denom) + mx;
    for (double& v : row) v -= log_denom;  // -inf entries stay -inf
    return row;
}

inline std::vector<int> strip_specials(const std::vector<int>& prefix) {
    std::vector<int> content;
    for (int id : prefix)
        if (id != Vocabulary::kCls && id != Vocabulary::kSep && id != Vocabulary::kPad)
            content.push_back(id);
    return content;
}

inline double length_penalty(std::size_t emitted, double alpha) {
    return std::pow((5.0 + static_cast<double>(emitted)) / 6.0, alpha);
}

}  // namespace detail

/// Argmax decoding with lowest-id tie-breaking. The token sequence
/// (including CLS) never exceeds min(max_len, cfg.max_len).
inline GenerationResult greedy_decode(const Tensor& memory, const DecoderConfig& cfg,
                                      const DecoderParams& params, std::size_t max_len) {
    const std::size_t cap = std::min(max_len, cfg.max_len);
    std::vector<int> prefix{Vocabulary::kCls};
    GenerationResult result;
    while (prefix.size() < cap) {
        const auto log_probs = detail::next_token_log_probs(prefix, memory, cfg, params);
        int best = -1;
        for (std::size_t v = 0; v < log_probs.size(); ++v)
            if (best < 0 || log_probs[v] > log_probs[static_cast<std::size_t>(best)])
                best = static_cast<int>(v);
        result.score += log_probs[static_cast<std::size_t>(best)];
        if (best == Vocabulary::kSep) {
            result.finished = true;
            break;
        }
        prefix.push_back(best);
    }
    result.tokens = detail::strip_specials(prefix);
    return result;
}

/// Breadth-limited best-first search. Each step extends every unfinished
/// hypothesis with its top-B tokens and keeps the global top B by
/// score / ((5+len)/6)^alpha; hypotheses emitting SEP freeze into the
/// finished pool. Returns the best finished hypothesis, or the best
/// unfinished one when nothing terminated.
inline GenerationResult beam_search(const Tensor& memory, const DecoderConfig& cfg,
                                    const DecoderParams& params, std::size_t beam_width,
                                    std::size_t max_len, double alpha) {
    if (beam_width < 1) throw ConfigError("beam_search: beam width must be at least 1");
    const std::size_t cap = std::min(max_len, cfg.max_len);

    struct Hypothesis {
        std::vector<int> prefix;
        double score = 0.0;
        bool finished = false;
        std::size_t emitted = 0;

        double normalized(double alpha) const {
            return score / detail::length_penalty(std::max<std::size_t>(emitted, 1), alpha);
        }
    };
    const auto better = [alpha](const Hypothesis& a, const Hypothesis& b) {
        const double na = a.normalized(alpha), nb = b.normalized(alpha);
        if (na != nb) return na > nb;
        return a.prefix < b.prefix;  // deterministic tie-break
    };

    std::vector<Hypothesis> active{{{Vocabulary::kCls}, 0.0, false, 0}};
    std::vector<Hypothesis> finished;
    while (!active.empty()) {
        std::vector<Hypothesis> candidates;
        for (const Hypothesis& hyp : active) {
            if (hyp.prefix.size() >= cap) {
                finished.push_back(hyp);  // length cap: freeze as-is, unfinished
                continue;
            }
            const auto log_probs =
                detail::next_token_log_probs(hyp.prefix, memory, cfg, params);
            std::vector<int> order;
            for (std::size_t v = 0; v < log_probs.size(); ++v)
                if (std::isfinite(log_probs[v])) order.push_back(static_cast<int>(v));
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (log_probs[static_cast<std::size_t>(a)] !=
                    log_probs[static_cast<std::size_t>(b)])
                    return log_probs[static_cast<std::size_t>(a)] >
                           log_probs[static_cast<std::size_t>(b)];
                return a < b;
            });
            const std::size_t take = std::min<std::size_t>(beam_width, order.size());
            for (std::size_t r = 0; r < take; ++r) {
                Hypothesis next = hyp;
                next.score += log_probs[static_cast<std::size_t>(order[r])];
                next.emitted += 1;
                if (order[r] == Vocabulary::kSep)
                    next.finished = true;
                else
                    next.prefix.push_back(order[r]);
                candidates.push_back(std::move(next));
            }
        }
        std::sort(candidates.begin(), candidates.end(), better);
        if (candidates.size() > beam_width) candidates.resize(beam_width);
        active.clear();
        for (Hypothesis& hyp : candidates) {
            if (hyp.finished)
                finished.push_back(std::move(hyp));
            else
                active.push_back(std::move(hyp));
        }
    }
    if (finished.empty()) throw ContractError("beam_search: no hypothesis produced");
    // Global best over SEP-terminated and cap-frozen hypotheses; with
    // alpha = 0 this is the plain log-probability argmax.
    const Hypothesis* chosen = &finished.front();
    for (const Hypothesis& hyp : finished)
        if (better(hyp, *chosen)) chosen = &hyp;
    GenerationResult result;
    result.tokens = detail::strip_specials(chosen->prefix);
    result.score = chosen->score;
    result.finished = chosen->finished;
    return result;
}

}  // namespace reportgen
