#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "reportgen/rng.hpp"
#include "reportgen/tokenizer.hpp"

using namespace reportgen;

TEST_CASE("vocabulary build orders by frequency then lexicographically") {
    Vocabulary vocab = build_vocab({"a b", "a"}, 1);
    CHECK(vocab.size() == 6);
    CHECK(vocab.id_of("a") == 4);
    CHECK(vocab.id_of("b") == 5);

    Vocabulary strict = build_vocab({"a b", "a"}, 2);
    CHECK(strict.size() == 5);
    CHECK(strict.id_of("b") == Vocabulary::kUnk);
}

TEST_CASE("vocabulary build is invariant under corpus permutation") {
    const std::vector<std::string> corpus{"the scan shows a lesion", "no lesion is seen",
                                          "the report is normal", "scan of the head"};
    Vocabulary base = build_vocab(corpus, 1);
    Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::string> shuffled = corpus;
        rng.shuffle(shuffled);
        Vocabulary rebuilt = build_vocab(shuffled, 1);
        REQUIRE(rebuilt.size() == base.size());
        for (std::size_t i = 0; i < base.size(); ++i)
            CHECK(rebuilt.word_of(static_cast<int>(i)) == base.word_of(static_cast<int>(i)));
    }
}

TEST_CASE("empty corpus is rejected") {
    CHECK_THROWS_AS(build_vocab({}, 1), DataError);
}

TEST_CASE("encode and decode round trips") {
    Vocabulary vocab = build_vocab({"small lesion on the left side ."}, 1);

    SECTION("empty text yields [CLS, SEP]") {
        const auto ids = encode("", vocab, 16);
        CHECK(ids == std::vector<int>{Vocabulary::kCls, Vocabulary::kSep});
        CHECK(decode(ids, vocab).empty());
    }
    SECTION("in-vocabulary sentence round trips") {
        const std::string text = "small lesion on the left side .";
        const auto ids = encode(text, vocab, 32);
        CHECK(ids.front() == Vocabulary::kCls);
        CHECK(ids.back() == Vocabulary::kSep);
        CHECK(decode(ids, vocab) == text);
        CHECK(encode(decode(encode(text, vocab, 32), vocab), vocab, 32) == ids);
    }
    SECTION("out-of-vocabulary word maps to UNK, rest preserved") {
        const auto ids = encode("small hematoma on the left", vocab, 32);
        CHECK(ids[2] == Vocabulary::kUnk);
        CHECK(decode(ids, vocab) == "small <unk> on the left");
        CHECK(encode(decode(ids, vocab), vocab, 32) == ids);
    }
    SECTION("punctuation splits off as separate tokens") {
        const auto toks = tokenize("No lesion, margin clear.");
        CHECK(toks == std::vector<std::string>{"no", "lesion", ",", "margin", "clear", "."});
    }
}

TEST_CASE("decode rejects ids outside the vocabulary") {
    Vocabulary vocab = build_vocab({"a b"}, 1);
    CHECK_THROWS_AS(decode({Vocabulary::kCls, 99, Vocabulary::kSep}, vocab), VocabularyError);
    CHECK_THROWS_AS(decode({-1}, vocab), VocabularyError);
}

TEST_CASE("encoded sequences respect max_len and end with SEP") {
    Vocabulary vocab = build_vocab({"a b c d e f g h"}, 1);
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        std::string text;
        const int words = rng.uniform_int(0, 12);
        for (int w = 0; w < words; ++w) {
            if (!text.empty()) text.push_back(' ');
            text += std::string(1, static_cast<char>('a' + rng.uniform_int(0, 7)));
        }
        const std::size_t max_len = static_cast<std::size_t>(rng.uniform_int(2, 10));
        const auto ids = encode(text, vocab, max_len);
        CHECK(ids.size() <= max_len);
        CHECK(ids.back() == Vocabulary::kSep);
        CHECK(std::count(ids.begin(), ids.end(), Vocabulary::kPad) == 0);
    }
}

TEST_CASE("vocabulary serialization round trips") {
    Vocabulary vocab = build_vocab({"subdural hematoma along the left convexity ."}, 1);
    const std::string path = "vocab_roundtrip_test.txt";
    save_vocabulary(path, vocab);
    Vocabulary loaded = load_vocabulary(path);
    REQUIRE(loaded.size() == vocab.size());
    for (std::size_t i = 0; i < vocab.size(); ++i)
        CHECK(loaded.word_of(static_cast<int>(i)) == vocab.word_of(static_cast<int>(i)));
    std::remove(path.c_str());
}
