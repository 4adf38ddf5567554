#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "lsrkit/matrix.hpp"

namespace lsrkit {

/// Shortest decimal representation that round-trips to the same double.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/// Raw vector file: unsigned 64-bit little-endian length, then that many
/// little-endian 64-bit floats.
inline void write_vector_file(const std::string& path, const Vec& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw NumericalError("write_vector_file: cannot open " + path);
    std::uint64_t n = v.size();
    char hdr[8];
    for (int i = 0; i < 8; ++i) hdr[i] = static_cast<char>((n >> (8 * i)) & 0xff);
    os.write(hdr, 8);
    for (double x : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
        os.write(b, 8);
    }
    if (!os) throw NumericalError("write_vector_file: write failed for " + path);
}

inline Vec read_vector_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NumericalError("read_vector_file: cannot open " + path);
    char hdr[8];
    is.read(hdr, 8);
    if (!is) throw NumericalError("read_vector_file: truncated header in " + path);
    std::uint64_t n = 0;
    for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(static_cast<unsigned char>(hdr[i])) << (8 * i);
    Vec v(n);
    for (std::uint64_t k = 0; k < n; ++k) {
        char b[8];
        is.read(b, 8);
        if (!is) throw NumericalError("read_vector_file: truncated payload in " + path);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        std::memcpy(&v[k], &bits, 8);
    }
    return v;
}

}  // namespace lsrkit
