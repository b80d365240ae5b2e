#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "cacc/io.hpp"
#include "cacc/tensor.hpp"

namespace cacc {

// Binary 8-bit PGM ("P5") images. Pixels map linearly between [0,1] floats
// in memory and 0..255 bytes on disk.

inline std::string encode_pgm(const TensorF& img) {
    int h, w;
    if (img.rank() == 2) {
        h = img.dim(0);
        w = img.dim(1);
    } else if (img.rank() == 3 && img.dim(0) == 1) {
        h = img.dim(1);
        w = img.dim(2);
    } else {
        throw std::invalid_argument("encode_pgm: need (H,W) or (1,H,W), got " + shape_str(img.shape));
    }
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + img.data.size());
    for (float v : img.data) {
        float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
    }
    return out;
}

inline TensorF decode_pgm(const std::string& bytes) {
    size_t pos = 0;
    auto skip_space = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {  // comment to end of line
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() {
        skip_space();
        size_t start = pos;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (pos == start) throw std::runtime_error("malformed PGM header");
        return std::stoi(bytes.substr(start, pos - start));
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw std::runtime_error("not a P5 PGM");
    pos = 2;
    const int w = read_int();
    const int h = read_int();
    const int maxval = read_int();
    if (w <= 0 || h <= 0) throw std::runtime_error("PGM has invalid dimensions");
    if (maxval != 255) throw std::runtime_error("only 8-bit PGM supported, maxval=" + std::to_string(maxval));
    ++pos;  // single whitespace byte after maxval
    if (bytes.size() - pos < static_cast<size_t>(w) * h) throw std::runtime_error("PGM pixel data truncated");
    TensorF img({h, w});
    for (size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0f;
    return img;
}

inline void write_pgm(const std::filesystem::path& path, const TensorF& img) {
    atomic_write_file(path, encode_pgm(img));
}

inline TensorF read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file_bytes(path)); }

// Max-normalized rendering for inspection: the peak value maps to white.
// An all-zero input renders all-black.
inline TensorF normalize_for_render(const TensorF& values) {
    float mx = 0.f;
    for (float v : values.data) mx = std::max(mx, v);
    TensorF out(values.shape);
    if (mx > 0.f)
        for (size_t i = 0; i < values.data.size(); ++i) out.data[i] = values.data[i] / mx;
    return out;
}

}  // namespace cacc
