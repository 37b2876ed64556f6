#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "reportgen/errors.hpp"
#include "reportgen/params.hpp"

// Parameter checkpoint: a text header (format version + manifest of
// name/shape per parameter) followed by the raw values as 64-bit IEEE-754
// little-endian, in manifest order. A human-readable key-value sidecar
// (.meta) carries run metadata.

namespace reportgen {

inline constexpr const char* kCheckpointMagic = "RGCKPT";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void write_le_double(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(bytes, 8);
}

inline double read_le_double(std::istream& is) {
    char bytes[8];
    is.read(bytes, 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint file for writing: " + path);
    os << kCheckpointMagic << ' ' << kCheckpointVersion << ' ' << params.count() << '\n';
    for (const auto& [name, t] : params.entries()) {
        os << name;
        for (std::size_t extent : t.shape()) os << ' ' << extent;
        os << '\n';
    }
    os << "DATA\n";
    for (const auto& [name, t] : params.entries())
        for (double v : t.values()) detail::write_le_double(os, v);
    if (!os) throw DataError("checkpoint write failed: " + path);
}

/// Loads values into an already-built parameter set. The manifest must match
/// the registered names and shapes exactly.
inline void load_checkpoint(const std::string& path, ModelParams& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint file: " + path);
    std::string magic;
    int version = 0;
    std::size_t count = 0;
    is >> magic >> version >> count;
    is.ignore(1);
    if (magic != kCheckpointMagic || version != kCheckpointVersion)
        throw DataError("checkpoint header mismatch in " + path);
    if (count != params.count())
        throw DataError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                        std::to_string(params.count()));
    for (const auto& [name, t] : params.entries()) {
        std::string line;
        if (!std::getline(is, line)) throw DataError("checkpoint manifest truncated: " + path);
        std::istringstream ls(line);
        std::string entry_name;
        ls >> entry_name;
        Shape shape;
        std::size_t extent;
        while (ls >> extent) shape.push_back(extent);
        if (entry_name != name || shape != t.shape())
            throw DataError("checkpoint/model mismatch at parameter '" + name + "': file has '" +
                            entry_name + "' " + shape_to_string(shape) + ", model expects " +
                            shape_to_string(t.shape()));
    }
    std::string sentinel;
    std::getline(is, sentinel);
    if (sentinel != "DATA") throw DataError("checkpoint data sentinel missing: " + path);
    for (auto& [name, t] : params.entries()) {
        for (double& v : t.values()) v = detail::read_le_double(is);
        if (!is) throw DataError("checkpoint data truncated at parameter '" + name + "'");
    }
}

inline void save_meta(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& fields) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open metadata file for writing: " + path);
    for (const auto& [key, value] : fields) os << key << ": " << value << '\n';
}

inline std::vector<std::pair<std::string, std::string>> load_meta(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open metadata file: " + path);
    std::vector<std::pair<std::string, std::string>> fields;
    std::string line;
    while (std::getline(is, line)) {
        const auto pos = line.find(": ");
        if (pos == std::string::npos) continue;
        fields.emplace_back(line.substr(0, pos), line.substr(pos + 2));
    }
    return fields;
}

inline std::string meta_value(const std::vector<std::pair<std::string, std::string>>& fields,
                              const std::string& key) {
    for (const auto& [k, v] : fields)
        if (k == key) return v;
    throw DataError("metadata key missing: " + key);
}

}  // namespace reportgen
