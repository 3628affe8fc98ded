#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mstim/error.hpp"
#include "mstim/tensor.hpp"

namespace mstim {

/// Binary container shared by parameter files, checkpoints and dataset caches.
///
/// Layout:
///   8 bytes   magic tag
///   8 bytes   header length H, little-endian uint64
///   H bytes   JSON header: {"format_version", "arrays": [{"name","shape","offset","bytes"}], "meta"}
///   payload   float64 values, little-endian, concatenated in header order;
///             "offset" is relative to the first payload byte.
namespace container {

inline constexpr int kFormatVersion = 1;

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Contents {
    nlohmann::json meta;
    std::vector<NamedArray> arrays;

    const NamedArray& find(std::string_view name) const {
        for (const auto& a : arrays)
            if (a.name == name) return a;
        throw SchemaError("container has no array named '" + std::string(name) + "'");
    }
    bool contains(std::string_view name) const {
        for (const auto& a : arrays)
            if (a.name == name) return true;
        return false;
    }
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    std::array<char, 8> bytes{};
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os.write(bytes.data(), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    std::array<unsigned char, 8> bytes{};
    if (!is.read(reinterpret_cast<char*>(bytes.data()), 8)) throw SchemaError("container truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

} // namespace detail

inline void write(std::ostream& os, std::string_view magic, const nlohmann::json& meta, const std::vector<NamedArray>& arrays) {
    if (magic.size() != 8) throw UsageError("container magic must be 8 bytes");
    nlohmann::json header;
    header["format_version"] = kFormatVersion;
    header["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : arrays) {
        if (shape_numel(a.shape) != a.values.size()) {
            throw DimensionError("container array '" + a.name + "' shape " + shape_str(a.shape) + " does not match " +
                                 std::to_string(a.values.size()) + " values");
        }
        const std::uint64_t bytes = a.values.size() * 8;
        header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"bytes", bytes}});
        offset += bytes;
    }
    header["meta"] = meta;
    const std::string text = header.dump();
    os.write(magic.data(), 8);
    detail::put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : arrays)
        for (double v : a.values) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
    if (!os) throw IoError("failed writing container");
}

inline Contents read(std::istream& is, std::string_view magic) {
    std::array<char, 8> tag{};
    if (!is.read(tag.data(), 8) || std::string_view(tag.data(), 8) != magic) {
        throw SchemaError("not a '" + std::string(magic) + "' file");
    }
    const std::uint64_t length = detail::get_u64(is);
    std::string text(length, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(length))) throw SchemaError("container header truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("container header is not valid JSON: ") + e.what());
    }
    if (header.value("format_version", -1) != kFormatVersion) {
        throw SchemaError("unsupported container format version " + header.value("format_version", nlohmann::json()).dump());
    }
    Contents out;
    out.meta = header.value("meta", nlohmann::json::object());
    std::uint64_t expected_offset = 0;
    for (const auto& entry : header.at("arrays")) {
        NamedArray a;
        a.name = entry.at("name").get<std::string>();
        a.shape = entry.at("shape").get<Shape>();
        const auto bytes = entry.at("bytes").get<std::uint64_t>();
        if (entry.at("offset").get<std::uint64_t>() != expected_offset || bytes != shape_numel(a.shape) * 8) {
            throw SchemaError("container array '" + a.name + "' has inconsistent offset or size");
        }
        a.values.resize(bytes / 8);
        for (auto& v : a.values) v = std::bit_cast<double>(detail::get_u64(is));
        expected_offset += bytes;
        out.arrays.push_back(std::move(a));
    }
    return out;
}

inline void write_file(const std::string& path, std::string_view magic, const nlohmann::json& meta,
                       const std::vector<NamedArray>& arrays) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write(os, magic, meta, arrays);
}

inline Contents read_file(const std::string& path, std::string_view magic) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    return read(is, magic);
}

} // namespace container
} // namespace mstim
