#pragma once

// Checkpoint container: an 8-byte little-endian header length, a JSON header
// describing every tensor (name, shape, dtype, byte offset into the data
// section) plus free-form metadata, then the raw little-endian arrays in
// header order. Round-trips are bit-exact for a fixed scalar type.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "agd/core/params.hpp"

namespace agd {

using json = nlohmann::ordered_json;

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else if constexpr (std::is_same_v<T, double>) return "f64";
    else static_assert(sizeof(T) == 0, "unsupported checkpoint dtype");
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params,
                     const json& meta = json::object()) {
    json header;
    header["format"] = "agd-checkpoint";
    header["version"] = 1;
    header["dtype"] = detail::dtype_name<T>();
    header["meta"] = meta;
    json tensors = json::array();
    uint64_t offset = 0;
    for (size_t i = 0; i < params.count(); ++i) {
        const auto& t = params.tensors()[i];
        json entry;
        entry["name"] = params.names()[i];
        entry["shape"] = t.shape();
        entry["offset"] = offset;
        tensors.push_back(entry);
        offset += uint64_t(t.size()) * sizeof(T);
    }
    header["tensors"] = std::move(tensors);

    const std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path.string());
    uint64_t hlen = hs.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = char((hlen >> (8 * i)) & 0xff);
    f.write(lenbuf, 8);
    f.write(hs.data(), std::streamsize(hs.size()));
    for (const auto& t : params.tensors())
        f.write(reinterpret_cast<const char*>(t.values().data()),
                std::streamsize(t.size() * sizeof(T)));
    if (!f) throw IoError("short write: " + path.string());
}

// Reads a checkpoint into an existing store. Every stored tensor must match
// a parameter by name and shape (and vice versa). The scalar type may differ
// from the file's dtype; values are converted. Returns the header.
template <typename T>
json load_checkpoint(const std::filesystem::path& path, ParamStore<T>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path.string());
    char lenbuf[8];
    f.read(lenbuf, 8);
    if (!f) throw IoError("truncated checkpoint header: " + path.string());
    uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i) hlen |= uint64_t(uint8_t(lenbuf[i])) << (8 * i);
    std::string hs(hlen, '\0');
    f.read(hs.data(), std::streamsize(hlen));
    if (!f) throw IoError("truncated checkpoint header: " + path.string());
    json header = json::parse(hs);
    if (header.value("format", "") != "agd-checkpoint")
        throw IoError("not a checkpoint file: " + path.string());

    const std::string dtype = header.at("dtype");
    size_t elem = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
    if (elem == 0) throw IoError("unknown checkpoint dtype: " + dtype);

    const std::streampos data_start = f.tellg();
    size_t matched = 0;
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name");
        Shape shape = entry.at("shape").get<Shape>();
        if (!params.has(name))
            throw IoError("checkpoint tensor not in model: " + name);
        auto& t = params.get(name);
        if (t.shape() != shape)
            throw IoError("shape mismatch for " + name + ": model " + shape_str(t.shape()) +
                          " vs checkpoint " + shape_str(shape));
        f.seekg(data_start + std::streampos(entry.at("offset").get<uint64_t>()));
        std::vector<char> raw(t.size() * elem);
        f.read(raw.data(), std::streamsize(raw.size()));
        if (!f) throw IoError("truncated checkpoint data for " + name);
        auto vals = t.values();
        if (dtype == "f32") {
            const float* src = reinterpret_cast<const float*>(raw.data());
            for (size_t i = 0; i < vals.size(); ++i) vals[i] = T(src[i]);
        } else {
            const double* src = reinterpret_cast<const double*>(raw.data());
            for (size_t i = 0; i < vals.size(); ++i) vals[i] = T(src[i]);
        }
        ++matched;
    }
    if (matched != params.count())
        throw IoError("checkpoint covers " + std::to_string(matched) + " of " +
                      std::to_string(params.count()) + " parameters");
    return header;
}

// Header-only peek (metadata, tensor listing) without needing a model.
inline json read_checkpoint_header(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path.string());
    char lenbuf[8];
    f.read(lenbuf, 8);
    if (!f) throw IoError("truncated checkpoint header: " + path.string());
    uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i) hlen |= uint64_t(uint8_t(lenbuf[i])) << (8 * i);
    std::string hs(hlen, '\0');
    f.read(hs.data(), std::streamsize(hlen));
    if (!f) throw IoError("truncated checkpoint header: " + path.string());
    return json::parse(hs);
}

}  // namespace agd
