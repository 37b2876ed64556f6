#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reportgen/errors.hpp"
#include "reportgen/metrics.hpp"
#include "reportgen/rng.hpp"
#include "reportgen/tensor.hpp"

// Deterministic synthetic dataset: procedural 64x64 "scan" images with a
// class-specific bright pattern and a templated report. The report templates
// and the finding extractor share one vocabulary, so extract_findings on a
// generated report always recovers the generated label.

namespace reportgen {

inline constexpr std::size_t kImageSize = 64;
inline constexpr std::uint32_t kImageFormatVersion = 1;
inline constexpr int kManifestVersion = 1;

struct SyntheticCase {
    std::string id;
    Tensor image;  // [1, 64, 64], intensities in [0, 1]
    std::string report;
    std::set<FindingLabel> labels;
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    int version = kManifestVersion;
    std::size_t count = 0;
    std::uint64_t generator_seed = 0;
    std::map<std::string, std::size_t> class_distribution;
    std::map<std::string, std::string> checksums;  // id -> image payload FNV-1a
    std::map<std::string, std::vector<std::string>> splits;
};

// ---------------------------------------------------------------------------
// Case generation
// ---------------------------------------------------------------------------

namespace detail {

inline const std::vector<std::string>& hemorrhage_phrases() {
    static const std::vector<std::string> phrases{
        "epidural hematoma",          "subdural hematoma",        "subarachnoid hemorrhage",
        "intraparenchymal hemorrhage", "intraventricular hemorrhage",
    };
    return phrases;
}

inline std::string fill_report(FindingLabel label, int skeleton, const std::string& side,
                               const std::string& size_word) {
    if (label == FindingLabel::Normal) {
        switch (skeleton) {
            case 0: return "no evidence of intracranial hemorrhage .";
            case 1: return "no acute intracranial abnormality is seen .";
            default: return "the study appears normal without evidence of hemorrhage .";
        }
    }
    const std::string& phrase = hemorrhage_phrases()[static_cast<std::size_t>(label)];
    switch (skeleton) {
        case 0:
            return "ct scan shows a " + size_word + " " + phrase + " in the " + side +
                   " hemisphere .";
        case 1:
            return "there is a " + size_word + " " + phrase + " along the " + side +
                   " convexity .";
        default:
            return "findings are consistent with a " + size_word + " " + phrase + " on the " +
                   side + " side .";
    }
}

struct ScanGeometry {
    static constexpr double cx = 31.5, cy = 31.5;
    static constexpr double rx = 28.0, ry = 30.0;

    // Normalized elliptical radius: <0.88 brain, 0.88..1 skull rim, >1 air.
    static double radius(std::size_t row, std::size_t col) {
        const double dx = (static_cast<double>(col) - cx) / rx;
        const double dy = (static_cast<double>(row) - cy) / ry;
        return std::sqrt(dx * dx + dy * dy);
    }
    static double angle(std::size_t row, std::size_t col) {
        return std::atan2(static_cast<double>(row) - cy, static_cast<double>(col) - cx);
    }
};

inline void paint_patch(std::vector<double>& img, FindingLabel label, int side_sign,
                        double size_scale, Rng& rng) {
    using G = ScanGeometry;
    auto at = [&](std::size_t r, std::size_t c) -> double& { return img[r * kImageSize + c]; };
    auto patch_value = [&]() { return 0.93 + 0.05 * rng.uniform(); };
    const double side_axis = side_sign < 0 ? 3.141592653589793 : 0.0;
    auto angular_distance = [&](double a) {
        double d = std::abs(a - side_axis);
        if (d > 3.141592653589793) d = 2.0 * 3.141592653589793 - d;
        return d;
    };

    switch (label) {
        case FindingLabel::Epidural: {
            // biconvex lens hugging the inner table
            const double px = G::cx + side_sign * G::rx * 0.60;
            const double py = G::cy;
            for (std::size_t r = 0; r < kImageSize; ++r)
                for (std::size_t c = 0; c < kImageSize; ++c) {
                    const double dx = (static_cast<double>(c) - px) / (7.0 * size_scale);
                    const double dy = (static_cast<double>(r) - py) / (13.0 * size_scale);
                    if (dx * dx + dy * dy < 1.0 && G::radius(r, c) < 0.88)
                        at(r, c) = patch_value();
                }
            break;
        }
        case FindingLabel::Subdural: {
            // crescent along the rim on the chosen side
            for (std::size_t r = 0; r < kImageSize; ++r)
                for (std::size_t c = 0; c < kImageSize; ++c) {
                    const double d = G::radius(r, c);
                    const double band = 0.13 * size_scale;
                    if (d > 0.86 - band && d < 0.86 &&
                        angular_distance(G::angle(r, c)) < 1.3)
                        at(r, c) = patch_value();
                }
            break;
        }
        case FindingLabel::Subarachnoid: {
            // scattered speckles in the sulci band
            const int speckles = static_cast<int>(45 * size_scale);
            for (int s = 0; s < speckles; ++s) {
                const double rad = rng.uniform(0.40, 0.72);
                const double ang = side_axis + rng.uniform(-1.1, 1.1);
                const double px = G::cx + std::cos(ang) * rad * G::rx;
                const double py = G::cy + std::sin(ang) * rad * G::ry;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const auto r = static_cast<std::size_t>(py + dr);
                        const auto c = static_cast<std::size_t>(px + dc);
                        if (r < kImageSize && c < kImageSize) at(r, c) = patch_value();
                    }
            }
            break;
        }
        case FindingLabel::Intraparenchymal: {
            const double px = G::cx + side_sign * 10.0;
            const double py = G::cy + rng.uniform(-6.0, 6.0);
            const double radius = 9.0 * size_scale;
            for (std::size_t r = 0; r < kImageSize; ++r)
                for (std::size_t c = 0; c < kImageSize; ++c) {
                    const double dx = static_cast<double>(c) - px;
                    const double dy = static_cast<double>(r) - py;
                    if (dx * dx + dy * dy < radius * radius && G::radius(r, c) < 0.8)
                        at(r, c) = patch_value();
                }
            break;
        }
        case FindingLabel::Intraventricular: {
            // central cavity, shifted toward the named side so the side wording
            // stays image-derivable
            const double px = G::cx + side_sign * 4.0;
            const double radius = 6.5 * size_scale;
            for (std::size_t r = 0; r < kImageSize; ++r)
                for (std::size_t c = 0; c < kImageSize; ++c) {
                    const double dx = static_cast<double>(c) - px;
                    const double dy = static_cast<double>(r) - G::cy;
                    if (dx * dx + dy * dy < radius * radius) at(r, c) = patch_value();
                }
            break;
        }
        case FindingLabel::Normal:
            break;
    }
}

inline std::string seed_hex(std::uint64_t seed) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << seed;
    return os.str();
}

}  // namespace detail

/// Renders one case from its seed: label draw, background, class pattern,
/// templated report. Identical seeds produce bit-identical cases.
inline SyntheticCase generate_case(std::uint64_t seed, std::string id = "") {
    Rng rng(seed);
    SyntheticCase item;
    item.seed = seed;
    item.id = id.empty() ? "case-" + detail::seed_hex(seed) : std::move(id);

    const int label_index = rng.uniform_int(0, 5);
    const FindingLabel label = kAllFindingLabels[static_cast<std::size_t>(label_index)];
    item.labels = {label};

    using G = detail::ScanGeometry;
    std::vector<double> img(kImageSize * kImageSize, 0.0);
    for (std::size_t r = 0; r < kImageSize; ++r)
        for (std::size_t c = 0; c < kImageSize; ++c) {
            const double d = G::radius(r, c);
            const double noise = rng.uniform(-1.0, 1.0);
            double v;
            if (d > 1.0)
                v = 0.02 + 0.01 * std::abs(noise);
            else if (d > 0.88)
                v = 0.72 + 0.03 * noise;
            else
                v = 0.30 + 0.04 * noise;
            // dark paired ventricle cavities; intraventricular cases paint
            // blood over them
            for (double offset : {-5.0, 5.0}) {
                const double dx = (static_cast<double>(c) - (G::cx + offset)) / 3.5;
                const double dy = (static_cast<double>(r) - G::cy) / 7.0;
                if (dx * dx + dy * dy < 1.0) v = 0.10 + 0.02 * std::abs(noise);
            }
            img[r * kImageSize + c] = v;
        }

    const int side_sign = rng.uniform_int(0, 1) == 0 ? -1 : 1;
    const std::string side = side_sign < 0 ? "left" : "right";
    const int size_index = rng.uniform_int(0, 2);
    const std::string size_word =
        size_index == 0 ? "small" : (size_index == 1 ? "moderate" : "large");
    const double size_scale = size_index == 0 ? 0.7 : (size_index == 1 ? 1.0 : 1.3);
    detail::paint_patch(img, label, side_sign, size_scale, rng);

    // clamp and round through float32 so disk round trips are exact
    for (double& v : img) {
        v = std::clamp(v, 0.0, 1.0);
        v = static_cast<double>(static_cast<float>(v));
    }
    item.image = Tensor(Shape{1, kImageSize, kImageSize}, std::move(img));

    // Skeleton choice is a deterministic function of the image-visible
    // attributes (class, side, size): the report stays fully derivable from
    // the scan, which is what makes overfit experiments on this corpus
    // meaningful. Normal scans carry no visible attribute, so they share one
    // fixed wording.
    const int skeleton =
        label == FindingLabel::Normal
            ? 0
            : (label_index + 2 * (side_sign < 0 ? 0 : 1) + size_index) % 3;
    item.report = detail::fill_report(label, skeleton, side, size_word);
    return item;
}

// ---------------------------------------------------------------------------
// On-disk formats
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t len) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        hash ^= data[i];
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

inline void append_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t read_u32_le(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

/// 16-byte header (magic "RGIM", version, H, W as u32 LE) + float32 LE
/// row-major intensities.
inline std::string encode_image_bytes(const Tensor& image) {
    if (image.shape().size() != 3 || image.shape()[0] != 1)
        throw DimensionError("encode_image_bytes: expects [1,H,W], got " +
                             shape_to_string(image.shape()));
    std::string bytes;
    bytes += "RGIM";
    detail::append_u32_le(bytes, kImageFormatVersion);
    detail::append_u32_le(bytes, static_cast<std::uint32_t>(image.shape()[1]));
    detail::append_u32_le(bytes, static_cast<std::uint32_t>(image.shape()[2]));
    for (double v : image.values()) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof(bits));
        detail::append_u32_le(bytes, bits);
    }
    return bytes;
}

inline Tensor decode_image_bytes(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < 16 || bytes.compare(0, 4, "RGIM") != 0)
        throw DataError("corrupt image file (bad magic): " + origin);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t version = detail::read_u32_le(p + 4);
    const std::uint32_t h = detail::read_u32_le(p + 8);
    const std::uint32_t w = detail::read_u32_le(p + 12);
    if (version != kImageFormatVersion)
        throw DataError("corrupt image file (version " + std::to_string(version) + "): " + origin);
    if (bytes.size() != 16 + static_cast<std::size_t>(h) * w * 4)
        throw DataError("corrupt image file (size mismatch): " + origin);
    std::vector<double> data(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::uint32_t bits = detail::read_u32_le(p + 16 + i * 4);
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        data[i] = static_cast<double>(f);
        if (!(data[i] >= 0.0 && data[i] <= 1.0))
            throw DataError("corrupt image file (intensity out of range): " + origin);
    }
    return Tensor(Shape{1, h, w}, std::move(data));
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const DatasetManifest& manifest) {
    nlohmann::json j;
    j["version"] = manifest.version;
    j["count"] = manifest.count;
    j["generator_seed"] = manifest.generator_seed;
    j["class_distribution"] = manifest.class_distribution;
    j["checksums"] = manifest.checksums;
    nlohmann::json split_sizes;
    for (const auto& [name, ids] : manifest.splits) split_sizes[name] = ids.size();
    j["split_sizes"] = split_sizes;
    return j;
}

/// Writes n cases under out_dir: manifest.json, splits.json, reports.jsonl,
/// images/<id>.img. Split is 80/10/10 by id-hash order; re-running with the
/// same arguments reproduces every file byte for byte.
inline DatasetManifest generate_dataset(std::size_t n, std::uint64_t seed,
                                        const std::string& out_dir) {
    if (n < 10) throw ConfigError("generate_dataset: need at least 10 cases, got " +
                                  std::to_string(n));
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    if (ec) throw DataError("cannot create dataset directory: " + out_dir);

    DatasetManifest manifest;
    manifest.count = n;
    manifest.generator_seed = seed;
    for (FindingLabel label : kAllFindingLabels)
        manifest.class_distribution[finding_label_name(label)] = 0;

    std::vector<SyntheticCase> cases;
    cases.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::ostringstream id;
        id << "case-" << std::setw(6) << std::setfill('0') << i;
        cases.push_back(generate_case(splitmix64(seed + i), id.str()));
        for (FindingLabel label : cases.back().labels)
            ++manifest.class_distribution[finding_label_name(label)];
    }

    // deterministic hash-ordered 80/10/10 split
    std::vector<std::string> ordered;
    for (const auto& item : cases) ordered.push_back(item.id);
    std::sort(ordered.begin(), ordered.end(), [](const std::string& a, const std::string& b) {
        const auto ha = detail::fnv1a64(reinterpret_cast<const unsigned char*>(a.data()), a.size());
        const auto hb = detail::fnv1a64(reinterpret_cast<const unsigned char*>(b.data()), b.size());
        return ha != hb ? ha < hb : a < b;
    });
    const std::size_t val_count = n / 10;
    const std::size_t test_count = n / 10;
    const std::size_t train_count = n - val_count - test_count;
    manifest.splits["train"] = {ordered.begin(), ordered.begin() + train_count};
    manifest.splits["val"] = {ordered.begin() + train_count,
                              ordered.begin() + train_count + val_count};
    manifest.splits["test"] = {ordered.begin() + train_count + val_count, ordered.end()};
    for (auto& [name, ids] : manifest.splits) std::sort(ids.begin(), ids.end());

    std::ostringstream reports;
    for (const auto& item : cases) {
        const std::string bytes = encode_image_bytes(item.image);
        detail::write_file(fs::path(out_dir) / "images" / (item.id + ".img"), bytes);
        std::ostringstream checksum;
        checksum << std::hex << std::setw(16) << std::setfill('0')
                 << detail::fnv1a64(reinterpret_cast<const unsigned char*>(bytes.data()),
                                    bytes.size());
        manifest.checksums[item.id] = checksum.str();

        nlohmann::json record;
        record["id"] = item.id;
        record["report"] = item.report;
        std::vector<std::string> label_names;
        for (FindingLabel label : item.labels) label_names.push_back(finding_label_name(label));
        record["labels"] = label_names;
        reports << record.dump() << '\n';
    }
    detail::write_file(fs::path(out_dir) / "reports.jsonl", reports.str());

    nlohmann::json splits_json;
    for (const auto& [name, ids] : manifest.splits) splits_json[name] = ids;
    detail::write_file(fs::path(out_dir) / "splits.json", splits_json.dump(2) + "\n");
    detail::write_file(fs::path(out_dir) / "manifest.json",
                       manifest_to_json(manifest).dump(2) + "\n");
    return manifest;
}

inline DatasetManifest load_manifest(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto manifest_path = fs::path(dir) / "manifest.json";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    DatasetManifest manifest;
    manifest.version = j.at("version").get<int>();
    if (manifest.version != kManifestVersion)
        throw DataError("manifest version " + std::to_string(manifest.version) +
                        " not supported (expected " + std::to_string(kManifestVersion) + ")");
    manifest.count = j.at("count").get<std::size_t>();
    manifest.generator_seed = j.at("generator_seed").get<std::uint64_t>();
    manifest.class_distribution =
        j.at("class_distribution").get<std::map<std::string, std::size_t>>();
    manifest.checksums = j.at("checksums").get<std::map<std::string, std::string>>();

    const auto splits_path = fs::path(dir) / "splits.json";
    nlohmann::json splits = nlohmann::json::parse(detail::read_file(splits_path));
    for (const auto& [name, ids] : splits.items())
        manifest.splits[name] = ids.get<std::vector<std::string>>();
    return manifest;
}

/// Loads the cases of one split, in manifest order, verifying checksums and
/// image invariants.
inline std::vector<SyntheticCase> load_split(const std::string& dir, const std::string& split) {
    namespace fs = std::filesystem;
    const DatasetManifest manifest = load_manifest(dir);
    const auto it = manifest.splits.find(split);
    if (it == manifest.splits.end()) throw DataError("unknown split: " + split);

    std::map<std::string, std::pair<std::string, std::set<FindingLabel>>> reports;
    std::ifstream is(fs::path(dir) / "reports.jsonl");
    if (!is) throw DataError("cannot open reports.jsonl under " + dir);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed reports.jsonl line: " + std::string(e.what()));
        }
        std::set<FindingLabel> labels;
        for (const auto& name : record.at("labels"))
            labels.insert(finding_label_from_name(name.get<std::string>()));
        reports[record.at("id").get<std::string>()] = {record.at("report").get<std::string>(),
                                                       labels};
    }

    std::vector<SyntheticCase> cases;
    for (const std::string& id : it->second) {
        const auto record = reports.find(id);
        if (record == reports.end()) throw DataError("report missing for case " + id);
        const auto img_path = fs::path(dir) / "images" / (id + ".img");
        const std::string bytes = detail::read_file(img_path);
        std::ostringstream checksum;
        checksum << std::hex << std::setw(16) << std::setfill('0')
                 << detail::fnv1a64(reinterpret_cast<const unsigned char*>(bytes.data()),
                                    bytes.size());
        const auto expected = manifest.checksums.find(id);
        if (expected == manifest.checksums.end() || expected->second != checksum.str())
            throw DataError("corrupt data: checksum mismatch for " + img_path.string());
        SyntheticCase item;
        item.id = id;
        item.image = decode_image_bytes(bytes, img_path.string());
        if (item.image.shape() != Shape{1, kImageSize, kImageSize})
            throw DataError("corrupt data: unexpected image shape in " + img_path.string());
        item.report = record->second.first;
        item.labels = record->second.second;
        cases.push_back(std::move(item));
    }
    return cases;
}

}  // namespace reportgen
