#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "reportgen/data.hpp"
#include "reportgen/metrics.hpp"

using namespace reportgen;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("generate_case is deterministic per seed") {
    const SyntheticCase a = generate_case(12345);
    const SyntheticCase b = generate_case(12345);
    CHECK(a.report == b.report);
    CHECK(a.labels == b.labels);
    REQUIRE(a.image.size() == b.image.size());
    for (std::size_t i = 0; i < a.image.size(); ++i) CHECK(a.image[i] == b.image[i]);
    CHECK(generate_case(12346).report != a.report);
}

TEST_CASE("generated images satisfy the shape and range invariants") {
    for (std::uint64_t seed : {1ULL, 77ULL, 901ULL}) {
        const SyntheticCase item = generate_case(seed);
        CHECK(item.image.shape() == Shape{1, kImageSize, kImageSize});
        for (double v : item.image.values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("generator and labeler agree on every case") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const SyntheticCase item = generate_case(splitmix64(seed));
        CAPTURE(item.report);
        CHECK(extract_findings(item.report) == item.labels);
    }
}

TEST_CASE("normal cases carry no bright interior patch") {
    int normals = 0;
    for (std::uint64_t seed = 0; seed < 400 && normals < 20; ++seed) {
        const SyntheticCase item = generate_case(splitmix64(seed));
        if (item.labels != std::set<FindingLabel>{FindingLabel::Normal}) continue;
        ++normals;
        CHECK(extract_findings(item.report) == std::set<FindingLabel>{FindingLabel::Normal});
        double interior_max = 0.0;
        for (std::size_t r = 0; r < kImageSize; ++r)
            for (std::size_t c = 0; c < kImageSize; ++c) {
                const double dx = (static_cast<double>(c) - 31.5) / 28.0;
                const double dy = (static_cast<double>(r) - 31.5) / 30.0;
                if (std::sqrt(dx * dx + dy * dy) < 0.75)
                    interior_max = std::max(interior_max, item.image[r * kImageSize + c]);
            }
        CHECK(interior_max < 0.6);
    }
    CHECK(normals == 20);
}

TEST_CASE("class frequencies are near uniform over 600 seeds") {
    std::map<std::string, int> counts;
    for (std::uint64_t seed = 0; seed < 600; ++seed) {
        const SyntheticCase item = generate_case(splitmix64(0xabcd0000ULL + seed));
        counts[finding_label_name(*item.labels.begin())]++;
    }
    // binomial: mean 100, sigma = sqrt(600 * (1/6)(5/6)) ~ 9.13, 3 sigma ~ 27.4
    for (const auto& [label, count] : counts) {
        CAPTURE(label, count);
        CHECK(count > 72);
        CHECK(count < 128);
    }
}

TEST_CASE("generate_dataset writes a consistent, idempotent directory") {
    TempDir dir("reportgen_data_test");
    const DatasetManifest manifest = generate_dataset(100, 42, dir.path.string());

    SECTION("split sizes are 80/10/10") {
        CHECK(manifest.splits.at("train").size() == 80);
        CHECK(manifest.splits.at("val").size() == 10);
        CHECK(manifest.splits.at("test").size() == 10);
    }
    SECTION("splits are disjoint and exhaustive") {
        std::set<std::string> seen;
        for (const auto& [name, ids] : manifest.splits)
            for (const auto& id : ids) CHECK(seen.insert(id).second);
        CHECK(seen.size() == 100);
    }
    SECTION("rerun is byte-identical") {
        std::map<std::string, std::string> before;
        for (const auto& entry : fs::recursive_directory_iterator(dir.path))
            if (entry.is_regular_file())
                before[entry.path().string()] = file_bytes(entry.path());
        generate_dataset(100, 42, dir.path.string());
        for (const auto& [path, bytes] : before) CHECK(file_bytes(path) == bytes);
    }
    SECTION("manifest class distribution matches a recount of the files") {
        std::map<std::string, std::size_t> recount;
        for (const std::string split : {"train", "val", "test"})
            for (const auto& item : load_split(dir.path.string(), split))
                for (FindingLabel label : item.labels) ++recount[finding_label_name(label)];
        std::size_t total = 0;
        for (const auto& [label, count] : manifest.class_distribution) {
            CHECK(recount[label] == count);
            total += count;
        }
        CHECK(total == 100);
    }
}

TEST_CASE("load_split round trips image values exactly") {
    TempDir dir("reportgen_data_roundtrip");
    generate_dataset(20, 7, dir.path.string());
    const auto manifest = load_manifest(dir.path.string());
    const auto cases = load_split(dir.path.string(), "train");
    CHECK(cases.size() == manifest.splits.at("train").size());
    for (const auto& item : cases) {
        const std::string bytes = encode_image_bytes(item.image);
        const Tensor decoded = decode_image_bytes(bytes, "mem");
        for (std::size_t i = 0; i < item.image.size(); ++i)
            CHECK(decoded[i] == item.image[i]);
    }
}

TEST_CASE("tampered image files are rejected with the file named") {
    TempDir dir("reportgen_data_tamper");
    generate_dataset(12, 3, dir.path.string());
    const auto manifest = load_manifest(dir.path.string());
    const std::string victim = manifest.splits.at("train").front();
    const fs::path img = dir.path / "images" / (victim + ".img");
    {
        std::fstream f(img, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(20);
        const char byte = 0x7f;
        f.write(&byte, 1);
    }
    try {
        load_split(dir.path.string(), "train");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(victim) != std::string::npos);
    }
}

TEST_CASE("generate_dataset enforces the minimum size") {
    TempDir dir("reportgen_data_min");
    CHECK_THROWS_AS(generate_dataset(5, 1, dir.path.string()), ConfigError);
}

TEST_CASE("unknown split and missing manifest raise data errors") {
    TempDir dir("reportgen_data_missing");
    CHECK_THROWS_AS(load_split(dir.path.string(), "train"), DataError);
    generate_dataset(10, 9, dir.path.string());
    CHECK_THROWS_AS(load_split(dir.path.string(), "holdout"), DataError);
}
