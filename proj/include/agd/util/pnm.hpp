#pragma once

// Minimal binary PNM readers/writers: P6 (RGB), P5 8-bit and 16-bit
// grayscale. 16-bit samples are big-endian per the format. Deterministic
// output: no comments, fixed header layout.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "agd/types.hpp"

namespace agd::pnm {

namespace detail {

inline int read_token(std::istream& in) {
    // skip whitespace and '#' comments
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = in.get();
        c = in.get();
    }
    int v = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw IoError("malformed PNM header");
    return v;
}

}  // namespace detail

struct Image8 {
    int width = 0, height = 0, channels = 1;  // 1 = P5, 3 = P6
    std::vector<uint8_t> data;                // row-major, interleaved
};

struct Image16 {
    int width = 0, height = 0;
    std::vector<uint16_t> data;
};

inline void write(const std::filesystem::path& path, const Image8& img) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.data.data()), std::streamsize(img.data.size()));
    if (!f) throw IoError("short write " + path.string());
}

inline void write(const std::filesystem::path& path, const Image16& img) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << "P5\n" << img.width << " " << img.height << "\n65535\n";
    std::vector<uint8_t> be(img.data.size() * 2);
    for (size_t i = 0; i < img.data.size(); ++i) {
        be[2 * i] = uint8_t(img.data[i] >> 8);
        be[2 * i + 1] = uint8_t(img.data[i] & 0xff);
    }
    f.write(reinterpret_cast<const char*>(be.data()), std::streamsize(be.size()));
    if (!f) throw IoError("short write " + path.string());
}

inline Image8 read8(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    char m0 = char(f.get()), m1 = char(f.get());
    if (m0 != 'P' || (m1 != '5' && m1 != '6')) throw IoError("not P5/P6: " + path.string());
    Image8 img;
    img.channels = (m1 == '6') ? 3 : 1;
    img.width = detail::read_token(f);
    img.height = detail::read_token(f);
    const int maxval = detail::read_token(f);
    if (maxval != 255) throw IoError("expected 8-bit PNM: " + path.string());
    img.data.resize(size_t(img.width) * img.height * img.channels);
    f.read(reinterpret_cast<char*>(img.data.data()), std::streamsize(img.data.size()));
    if (!f) throw IoError("truncated PNM: " + path.string());
    return img;
}

inline Image16 read16(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    char m0 = char(f.get()), m1 = char(f.get());
    if (m0 != 'P' || m1 != '5') throw IoError("not P5: " + path.string());
    Image16 img;
    img.width = detail::read_token(f);
    img.height = detail::read_token(f);
    const int maxval = detail::read_token(f);
    if (maxval != 65535) throw IoError("expected 16-bit PGM: " + path.string());
    std::vector<uint8_t> be(size_t(img.width) * img.height * 2);
    f.read(reinterpret_cast<char*>(be.data()), std::streamsize(be.size()));
    if (!f) throw IoError("truncated PNM: " + path.string());
    img.data.resize(size_t(img.width) * img.height);
    for (size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = uint16_t((uint16_t(be[2 * i]) << 8) | be[2 * i + 1]);
    return img;
}

}  // namespace agd::pnm
