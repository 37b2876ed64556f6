#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "reportgen/errors.hpp"

namespace reportgen {

/// Word-level vocabulary. Ids 0-3 are the fixed special tokens; content words
/// follow in (frequency desc, then lexicographic) order.
class Vocabulary {
public:
    static constexpr int kCls = 0;
    static constexpr int kSep = 1;
    static constexpr int kPad = 2;
    static constexpr int kUnk = 3;

    Vocabulary() {
        for (const char* s : {"<cls>", "<sep>", "<pad>", "<unk>"}) append(s);
    }

    int append(const std::string& word) {
        const int id = static_cast<int>(id_to_word_.size());
        id_to_word_.push_back(word);
        word_to_id_[word] = id;
        return id;
    }

    std::size_t size() const { return id_to_word_.size(); }

    int id_of(const std::string& word) const {
        auto it = word_to_id_.find(word);
        return it == word_to_id_.end() ? kUnk : it->second;
    }

    const std::string& word_of(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= id_to_word_.size())
            throw VocabularyError("token id " + std::to_string(id) +
                                  " outside vocabulary of size " + std::to_string(size()));
        return id_to_word_[static_cast<std::size_t>(id)];
    }

    bool contains(const std::string& word) const { return word_to_id_.count(word) > 0; }

    int min_frequency = 1;

private:
    std::vector<std::string> id_to_word_;
    std::unordered_map<std::string, int> word_to_id_;
};

/// Lowercases and splits on whitespace, peeling punctuation off as separate
/// tokens.
inline std::vector<std::string> tokenize(const std::string& text) {
    static const std::string punct = ".,:;!?()";
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&]() {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (char raw : text) {
        const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (punct.find(c) != std::string::npos) {
            flush();
            tokens.push_back(std::string(1, c));
        } else {
            word.push_back(c);
        }
    }
    flush();
    return tokens;
}

/// Deterministic vocabulary construction: words at or above min_frequency,
/// ordered by frequency (desc) then lexicographically.
inline Vocabulary build_vocab(const std::vector<std::string>& corpus, int min_frequency = 1) {
    if (corpus.empty()) throw DataError("build_vocab: empty corpus");
    std::map<std::string, std::size_t> counts;
    for (const auto& text : corpus)
        for (const auto& token : tokenize(text)) ++counts[token];
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary vocab;
    vocab.min_frequency = min_frequency;
    for (const auto& [word, count] : ranked)
        if (count >= static_cast<std::size_t>(min_frequency)) vocab.append(word);
    return vocab;
}

/// [CLS] + word ids + [SEP], truncated so the total length never exceeds
/// max_len.
inline std::vector<int> encode(const std::string& text, const Vocabulary& vocab,
                               std::size_t max_len) {
    if (max_len < 2) throw ConfigError("encode: max_len must be at least 2");
    std::vector<int> ids{Vocabulary::kCls};
    for (const auto& token : tokenize(text)) {
        if (ids.size() >= max_len - 1) break;
        ids.push_back(vocab.id_of(token));
    }
    ids.push_back(Vocabulary::kSep);
    return ids;
}

/// Joins content tokens back into text, skipping CLS/SEP/PAD.
inline std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string text;
    for (int id : ids) {
        if (id == Vocabulary::kCls || id == Vocabulary::kSep || id == Vocabulary::kPad) continue;
        if (!text.empty()) text.push_back(' ');
        text += vocab.word_of(id);
    }
    return text;
}

// Serialized as one word per line, specials first (4-line header).
inline void save_vocabulary(const std::string& path, const Vocabulary& vocab) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open vocabulary file for writing: " + path);
    for (std::size_t i = 0; i < vocab.size(); ++i) os << vocab.word_of(static_cast<int>(i)) << '\n';
}

inline Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open vocabulary file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    if (lines.size() < 4 || lines[0] != "<cls>" || lines[1] != "<sep>" || lines[2] != "<pad>" ||
        lines[3] != "<unk>")
        throw DataError("vocabulary file missing special-token header: " + path);
    Vocabulary vocab;
    for (std::size_t i = 4; i < lines.size(); ++i) vocab.append(lines[i]);
    return vocab;
}

}  // namespace reportgen
