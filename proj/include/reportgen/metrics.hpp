#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "reportgen/errors.hpp"
#include "reportgen/tokenizer.hpp"

namespace reportgen {

// ---------------------------------------------------------------------------
// Finding labels and extraction
// ---------------------------------------------------------------------------

enum class FindingLabel {
    Epidural,
    Subdural,
    Subarachnoid,
    Intraparenchymal,
    Intraventricular,
    Normal,
};

inline constexpr std::array<FindingLabel, 6> kAllFindingLabels{
    FindingLabel::Epidural,         FindingLabel::Subdural,         FindingLabel::Subarachnoid,
    FindingLabel::Intraparenchymal, FindingLabel::Intraventricular, FindingLabel::Normal,
};

inline const std::string& finding_label_name(FindingLabel label) {
    static const std::array<std::string, 6> names{
        "epidural", "subdural", "subarachnoid", "intraparenchymal", "intraventricular", "normal"};
    return names[static_cast<std::size_t>(label)];
}

inline FindingLabel finding_label_from_name(const std::string& name) {
    for (FindingLabel label : kAllFindingLabels)
        if (finding_label_name(label) == name) return label;
    throw DataError("unknown finding label: " + name);
}

/// Rule-based finding extraction over the synthetic report vocabulary.
/// Hemorrhage-type keywords are suppressed when a negation cue ("no",
/// "without") occurs within the four preceding tokens of the same sentence.
/// An empty hemorrhage set plus an explicit normal phrase yields {normal}.
inline std::set<FindingLabel> extract_findings(const std::string& report) {
    const std::vector<std::string> tokens = tokenize(report);
    std::set<FindingLabel> findings;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        FindingLabel label;
        if (tokens[i] == "epidural")
            label = FindingLabel::Epidural;
        else if (tokens[i] == "subdural")
            label = FindingLabel::Subdural;
        else if (tokens[i] == "subarachnoid")
            label = FindingLabel::Subarachnoid;
        else if (tokens[i] == "intraparenchymal")
            label = FindingLabel::Intraparenchymal;
        else if (tokens[i] == "intraventricular")
            label = FindingLabel::Intraventricular;
        else
            continue;
        bool negated = false;
        for (std::size_t back = 1; back <= 4 && back <= i; ++back) {
            const std::string& prev = tokens[i - back];
            if (prev == ".") break;  // negation does not cross sentences
            if (prev == "no" || prev == "without") {
                negated = true;
                break;
            }
        }
        if (!negated) findings.insert(label);
    }
    if (findings.empty()) {
        const std::string lowered = [&] {
            std::string joined;
            for (const auto& t : tokens) {
                if (!joined.empty()) joined.push_back(' ');
                joined += t;
            }
            return joined;
        }();
        const bool normal_phrase =
            lowered.find("no evidence of intracranial hemorrhage") != std::string::npos ||
            lowered.find("no acute intracranial abnormality") != std::string::npos ||
            std::find(tokens.begin(), tokens.end(), "normal") != tokens.end();
        if (normal_phrase) findings.insert(FindingLabel::Normal);
    }
    return findings;
}

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

struct PrfScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
    std::size_t support = 0;
};

namespace detail {
inline PrfScores prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    PrfScores s;
    s.true_positives = tp;
    s.false_positives = fp;
    s.false_negatives = fn;
    s.support = tp + fn;
    s.precision = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    s.recall = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    s.f1 = (s.precision + s.recall) == 0.0
               ? 0.0
               : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}
}  // namespace detail

struct ClassificationReport {
    std::map<FindingLabel, PrfScores> per_label;
    PrfScores micro;
};

inline ClassificationReport precision_recall_f1(
    const std::vector<std::set<FindingLabel>>& predicted,
    const std::vector<std::set<FindingLabel>>& truth) {
    if (predicted.size() != truth.size())
        throw DataError("precision_recall_f1: corpora lengths differ (" +
                        std::to_string(predicted.size()) + " vs " + std::to_string(truth.size()) +
                        ")");
    ClassificationReport report;
    std::size_t micro_tp = 0, micro_fp = 0, micro_fn = 0;
    for (FindingLabel label : kAllFindingLabels) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            const bool pred = predicted[i].count(label) > 0;
            const bool real = truth[i].count(label) > 0;
            if (pred && real)
                ++tp;
            else if (pred && !real)
                ++fp;
            else if (!pred && real)
                ++fn;
        }
        report.per_label[label] = detail::prf_from_counts(tp, fp, fn);
        micro_tp += tp;
        micro_fp += fp;
        micro_fn += fn;
    }
    report.micro = detail::prf_from_counts(micro_tp, micro_fp, micro_fn);
    return report;
}

// ---------------------------------------------------------------------------
// N-gram machinery
// ---------------------------------------------------------------------------

namespace detail {

using Ngram = std::vector<std::string>;

inline std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& tokens,
                                                 std::size_t n) {
    std::map<Ngram, std::size_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
    return counts;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BLEU (Eq. 10): clipped n-gram precision, uniform weights, brevity penalty
// ---------------------------------------------------------------------------

/// Corpus-level BLEU-1..4 over aligned candidate/reference-set pairs.
/// Clipped counts aggregate across the corpus; BP uses total candidate
/// length vs total closest-reference length. Any zero n-gram precision
/// zeroes the scores that include it.
inline std::array<double, 4> corpus_bleu(
    const std::vector<std::vector<std::string>>& candidates,
    const std::vector<std::vector<std::vector<std::string>>>& references) {
    if (candidates.size() != references.size())
        throw DataError("corpus_bleu: corpora lengths differ");
    if (candidates.empty()) throw DataError("corpus_bleu: empty corpus");
    std::array<double, 4> clipped{}, totals{};
    std::size_t cand_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& cand = candidates[i];
        const auto& refs = references[i];
        if (refs.empty()) throw DataError("corpus_bleu: item " + std::to_string(i) +
                                          " has no reference");
        cand_len += cand.size();
        std::size_t closest = refs[0].size();
        for (const auto& ref : refs) {
            const auto diff = [&](std::size_t len) {
                return len > cand.size() ? len - cand.size() : cand.size() - len;
            };
            if (diff(ref.size()) < diff(closest) ||
                (diff(ref.size()) == diff(closest) && ref.size() < closest))
                closest = ref.size();
        }
        ref_len += closest;
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto cand_counts = detail::ngram_counts(cand, n);
            std::map<detail::Ngram, std::size_t> max_ref;
            for (const auto& ref : refs)
                for (const auto& [gram, count] : detail::ngram_counts(ref, n))
                    max_ref[gram] = std::max(max_ref[gram], count);
            for (const auto& [gram, count] : cand_counts) {
                const auto it = max_ref.find(gram);
                clipped[n - 1] += static_cast<double>(
                    std::min(count, it == max_ref.end() ? std::size_t{0} : it->second));
                totals[n - 1] += static_cast<double>(count);
            }
        }
    }
    const double bp = (cand_len == 0)
                          ? 0.0
                          : (cand_len > ref_len
                                 ? 1.0
                                 : std::exp(1.0 - static_cast<double>(ref_len) /
                                                      static_cast<double>(cand_len)));
    std::array<double, 4> scores{};
    for (std::size_t n = 1; n <= 4; ++n) {
        double log_sum = 0.0;
        bool zero = false;
        for (std::size_t k = 1; k <= n; ++k) {
            if (totals[k - 1] == 0.0 || clipped[k - 1] == 0.0) {
                zero = true;
                break;
            }
            log_sum += std::log(clipped[k - 1] / totals[k - 1]) / static_cast<double>(n);
        }
        scores[n - 1] = zero ? 0.0 : bp * std::exp(log_sum);
    }
    return scores;
}

inline std::array<double, 4> sentence_bleu(const std::vector<std::string>& candidate,
                                           const std::vector<std::vector<std::string>>& refs) {
    return corpus_bleu({candidate}, {refs});
}

// ---------------------------------------------------------------------------
// METEOR (Eq. 11): exact-match unigram alignment, 9:1 recall-weighted
// harmonic mean, fragmentation penalty 0.5 * (chunks/m)^3
// ---------------------------------------------------------------------------

inline double meteor(const std::vector<std::string>& candidate,
                     const std::vector<std::string>& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    // Greedy alignment in candidate order, preferring the reference position
    // that extends the current contiguous run.
    std::vector<bool> used(reference.size(), false);
    std::ptrdiff_t prev_ref = -2;
    std::size_t matches = 0, chunks = 0;
    for (const auto& word : candidate) {
        std::ptrdiff_t chosen = -1;
        if (prev_ref >= 0 && static_cast<std::size_t>(prev_ref + 1) < reference.size() &&
            !used[prev_ref + 1] && reference[prev_ref + 1] == word) {
            chosen = prev_ref + 1;
        } else {
            for (std::size_t j = 0; j < reference.size(); ++j)
                if (!used[j] && reference[j] == word) {
                    chosen = static_cast<std::ptrdiff_t>(j);
                    break;
                }
        }
        if (chosen < 0) {
            prev_ref = -2;
            continue;
        }
        used[chosen] = true;
        ++matches;
        if (chosen != prev_ref + 1) ++chunks;
        prev_ref = chosen;
    }
    if (matches == 0) return 0.0;
    const double m = static_cast<double>(matches);
    const double precision = m / static_cast<double>(candidate.size());
    const double recall = m / static_cast<double>(reference.size());
    const double hmean = 10.0 * precision * recall / (recall + 9.0 * precision);
    const double frag = static_cast<double>(chunks) / m;
    const double penalty = 0.5 * frag * frag * frag;
    return hmean * (1.0 - penalty);
}

// ---------------------------------------------------------------------------
// ROUGE-L (Eq. 12): LCS length over reference length
// ---------------------------------------------------------------------------

inline double rouge_l(const std::vector<std::string>& candidate,
                      const std::vector<std::string>& reference) {
    if (reference.empty()) throw DataError("rouge_l: empty reference");
    if (candidate.empty()) return 0.0;
    const std::size_t n = candidate.size(), m = reference.size();
    std::vector<std::size_t> prev(m + 1, 0), curr(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j)
            curr[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1
                                                           : std::max(prev[j], curr[j - 1]);
        std::swap(prev, curr);
    }
    return static_cast<double>(prev[m]) / static_cast<double>(m);
}

// ---------------------------------------------------------------------------
// CIDEr (Eq. 13): TF-IDF n-gram vectors (n = 1..4), cosine consensus,
// averaged over n and scaled by 10
// ---------------------------------------------------------------------------

struct CiderResult {
    double score = 0.0;
    std::vector<double> per_item;
    bool idf_degenerate = false;  // corpus of fewer than 2 items
};

inline CiderResult cider(const std::vector<std::vector<std::string>>& candidates,
                         const std::vector<std::vector<std::vector<std::string>>>& references) {
    if (candidates.size() != references.size())
        throw DataError("cider: corpora lengths differ");
    if (candidates.empty()) throw DataError("cider: empty corpus");
    CiderResult result;
    result.idf_degenerate = candidates.size() < 2;
    const double corpus_size = static_cast<double>(candidates.size());

    for (std::size_t n = 1; n <= 4; ++n) {
        // Document frequency: number of items whose reference set contains
        // the n-gram at least once.
        std::map<detail::Ngram, double> df;
        for (const auto& refs : references) {
            std::set<detail::Ngram> seen;
            for (const auto& ref : refs)
                for (const auto& [gram, count] : detail::ngram_counts(ref, n)) seen.insert(gram);
            for (const auto& gram : seen) df[gram] += 1.0;
        }
        auto tfidf = [&](const std::vector<std::string>& tokens) {
            std::map<detail::Ngram, double> vec;
            for (const auto& [gram, count] : detail::ngram_counts(tokens, n)) {
                const auto it = df.find(gram);
                const double freq = it == df.end() ? 1.0 : std::max(1.0, it->second);
                vec[gram] = static_cast<double>(count) * std::log(corpus_size / freq);
            }
            return vec;
        };
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (n == 1) result.per_item.push_back(0.0);
            const auto cand_vec = tfidf(candidates[i]);
            double cand_norm_sq = 0.0;
            for (const auto& [gram, weight] : cand_vec) cand_norm_sq += weight * weight;
            double sim_sum = 0.0;
            for (const auto& ref : references[i]) {
                const auto ref_vec = tfidf(ref);
                double ref_norm_sq = 0.0, dot = 0.0;
                for (const auto& [gram, weight] : ref_vec) {
                    ref_norm_sq += weight * weight;
                    const auto it = cand_vec.find(gram);
                    if (it != cand_vec.end()) dot += it->second * weight;
                }
                if (cand_norm_sq > 0.0 && ref_norm_sq > 0.0)
                    sim_sum += dot / std::sqrt(cand_norm_sq * ref_norm_sq);
            }
            result.per_item[i] +=
                10.0 * (sim_sum / static_cast<double>(references[i].size())) / 4.0;
        }
    }
    for (double item : result.per_item) result.score += item;
    result.score /= corpus_size;
    return result;
}

// ---------------------------------------------------------------------------
// Corpus evaluation
// ---------------------------------------------------------------------------

struct MetricReport {
    std::array<double, 4> bleu{};  // BLEU-1..4, raw [0,1]
    double meteor = 0.0;           // raw [0,1]
    double rouge_l = 0.0;          // raw [0,1]
    double cider = 0.0;            // raw [0,10]
    bool cider_idf_degenerate = false;
    ClassificationReport classification;
    std::size_t corpus_size = 0;
};

/// Runs the full evaluation protocol on aligned corpora: finding extraction
/// feeding precision/recall/F1, then the NLG metric suite.
inline MetricReport evaluate_corpus(const std::vector<std::string>& generated,
                                    const std::vector<std::string>& ground_truth) {
    if (generated.empty() || ground_truth.empty())
        throw DataError("evaluate_corpus: empty corpus");
    if (generated.size() != ground_truth.size())
        throw DataError("evaluate_corpus: corpora lengths differ (" +
                        std::to_string(generated.size()) + " vs " +
                        std::to_string(ground_truth.size()) + ")");
    MetricReport report;
    report.corpus_size = generated.size();

    std::vector<std::set<FindingLabel>> predicted, truth;
    std::vector<std::vector<std::string>> cand_tokens;
    std::vector<std::vector<std::vector<std::string>>> ref_tokens;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        predicted.push_back(extract_findings(generated[i]));
        truth.push_back(extract_findings(ground_truth[i]));
        cand_tokens.push_back(tokenize(generated[i]));
        ref_tokens.push_back({tokenize(ground_truth[i])});
    }
    report.classification = precision_recall_f1(predicted, truth);
    report.bleu = corpus_bleu(cand_tokens, ref_tokens);
    double meteor_sum = 0.0, rouge_sum = 0.0;
    for (std::size_t i = 0; i < cand_tokens.size(); ++i) {
        meteor_sum += meteor(cand_tokens[i], ref_tokens[i][0]);
        rouge_sum += rouge_l(cand_tokens[i], ref_tokens[i][0]);
    }
    report.meteor = meteor_sum / static_cast<double>(cand_tokens.size());
    report.rouge_l = rouge_sum / static_cast<double>(cand_tokens.size());
    const CiderResult cider_result = cider(cand_tokens, ref_tokens);
    report.cider = cider_result.score;
    report.cider_idf_degenerate = cider_result.idf_degenerate;
    return report;
}

/// Plain-text table in the Table-4 column layout. NLG scores print x100;
/// CIDEr prints x10 of its raw [0,10] value so the column shares the scale.
inline std::string render_metric_table(
    const std::vector<std::pair<std::string, MetricReport>>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(12) << "Encoder";
    for (const char* col : {"BLEU-U1", "BLEU-B2", "BLEU-T3", "BLEU-Q4", "METEOR", "ROUGE",
                            "CIDEr"})
        os << std::right << std::setw(9) << col;
    os << '\n';
    os << std::fixed << std::setprecision(2);
    for (const auto& [name, report] : rows) {
        os << std::left << std::setw(12) << name;
        for (double b : report.bleu) os << std::right << std::setw(9) << b * 100.0;
        os << std::right << std::setw(9) << report.meteor * 100.0;
        os << std::right << std::setw(9) << report.rouge_l * 100.0;
        os << std::right << std::setw(9) << report.cider * 10.0;
        os << '\n';
    }
    return os.str();
}

}  // namespace reportgen
