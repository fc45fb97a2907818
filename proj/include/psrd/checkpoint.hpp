#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "psrd/error.hpp"
#include "psrd/tensor.hpp"

namespace psrd {

// Weight checkpoint, single file, little-endian:
//   magic "PSRD1"
//   u64 tensor count
//   per tensor: u64 name length, name bytes (UTF-8), u64 rank,
//               u64 extents[rank], f64 data (row-major)
// Values are stored as 64-bit reals regardless of the build's Real type.

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw ParseError("checkpoint truncated while reading integer");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
    const std::uint64_t bits = read_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "PSRD1";

inline void save_checkpoint(const std::map<std::string, Tensor>& tensors, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 5);
    detail::write_u64(os, tensors.size());
    for (const auto& [name, t] : tensors) {
        detail::write_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u64(os, static_cast<std::uint64_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) detail::write_u64(os, static_cast<std::uint64_t>(t.dim(i)));
        for (std::int64_t i = 0; i < t.numel(); ++i) detail::write_f64(os, static_cast<double>(t[i]));
    }
    if (!os) throw IoError("failed writing checkpoint: " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint for reading: " + path);
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kCheckpointMagic, 5) != 0) {
        throw ParseError("bad checkpoint magic in " + path + ", expected PSRD1");
    }
    const std::uint64_t count = detail::read_u64(is);
    std::map<std::string, Tensor> tensors;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = detail::read_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw ParseError("checkpoint truncated while reading tensor name");
        const std::uint64_t rank = detail::read_u64(is);
        std::vector<int> shape(rank);
        for (std::uint64_t r = 0; r < rank; ++r) shape[r] = static_cast<int>(detail::read_u64(is));
        Tensor t(shape);
        for (std::int64_t j = 0; j < t.numel(); ++j) t[j] = static_cast<Real>(detail::read_f64(is));
        tensors.emplace(std::move(name), std::move(t));
    }
    return tensors;
}

}  // namespace psrd
