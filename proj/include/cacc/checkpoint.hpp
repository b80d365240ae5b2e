#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cacc/io.hpp"
#include "cacc/tensor.hpp"

namespace cacc {

// Flat binary container of named float arrays.
//
// Layout (all integers little-endian):
//   magic "CACC" | version u32 | array count u32
//   per array: name length u32 | UTF-8 name | rank u32 | dims u64 each | f32 data
//
// Values are stored as 32-bit floats regardless of the in-memory precision.
constexpr uint32_t kCheckpointVersion = 1;

using NamedArray = std::pair<std::string, TensorF>;

inline std::string encode_arrays(const std::vector<NamedArray>& arrays) {
    std::string out;
    out += "CACC";
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<uint32_t>(arrays.size()));
    for (const auto& [name, tensor] : arrays) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<uint32_t>(tensor.shape.size()));
        for (int d : tensor.shape) put_u64(out, static_cast<uint64_t>(d));
        for (float v : tensor.data) put_f32(out, v);
    }
    return out;
}

inline std::vector<NamedArray> decode_arrays(const std::string& bytes) {
    ByteReader r(bytes);
    if (r.bytes(4) != "CACC") throw std::runtime_error("bad checkpoint magic");
    uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    uint32_t count = r.u32();
    std::vector<NamedArray> arrays;
    arrays.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        uint32_t rank = r.u32();
        std::vector<int> shape(rank);
        long long numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            uint64_t dim = r.u64();
            shape[d] = static_cast<int>(dim);
            numel *= static_cast<long long>(dim);
        }
        TensorF t(shape);
        for (long long j = 0; j < numel; ++j) t.data[static_cast<size_t>(j)] = r.f32();
        arrays.emplace_back(std::move(name), std::move(t));
    }
    return arrays;
}

inline void save_arrays(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
    atomic_write_file(path, encode_arrays(arrays));
}

inline std::vector<NamedArray> load_arrays(const std::filesystem::path& path) {
    return decode_arrays(read_file_bytes(path));
}

inline std::vector<NamedArray> named_to_arrays(const std::vector<std::pair<std::string, TensorF*>>& named) {
    std::vector<NamedArray> out;
    out.reserve(named.size());
    for (const auto& [name, tensor] : named) out.emplace_back(name, *tensor);
    return out;
}

// Fill existing tensors from a checkpoint. Every requested name must be
// present with a matching shape; a missing or misshapen entry aborts the
// load rather than leaving a half-initialised network.
inline void load_into(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, TensorF*>>& named) {
    const std::vector<NamedArray> arrays = load_arrays(path);
    for (const auto& [name, dst] : named) {
        const NamedArray* found = nullptr;
        for (const NamedArray& a : arrays)
            if (a.first == name) {
                found = &a;
                break;
            }
        if (!found) throw std::runtime_error("checkpoint missing array '" + name + "'");
        if (found->second.shape != dst->shape)
            throw std::runtime_error("checkpoint array '" + name + "' has shape " +
                                     shape_str(found->second.shape) + ", expected " + shape_str(dst->shape));
        dst->data = found->second.data;
    }
}

}  // namespace cacc
