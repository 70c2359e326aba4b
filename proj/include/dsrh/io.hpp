// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace dsrh {

// Little-endian binary primitives shared by the model and code file formats.

inline void write_bytes(std::ostream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out) throw std::runtime_error("write failed");
}

inline void read_bytes(std::istream& in, void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n)
        throw std::runtime_error("unexpected end of file");
}

inline void write_u16(std::ostream& out, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8)};
    write_bytes(out, b, 2);
}

inline void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(out, b, 4);
}

inline void write_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(out, b, 8);
}

inline void write_f64(std::ostream& out, double v) {
    write_u64(out, std::bit_cast<uint64_t>(v));
}

inline uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    read_bytes(in, b, 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    read_bytes(in, b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

inline uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    read_bytes(in, b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double read_f64(std::istream& in) {
    return std::bit_cast<double>(read_u64(in));
}

/// Writes through a temp file in the destination directory, then renames.
/// An exception from the writer leaves no partial output behind.
inline void atomic_write_file(const std::filesystem::path& path,
                              const std::function<void(std::ostream&)>& writer,
                              bool binary = true) {
    namespace fs = std::filesystem;
    fs::path tmp = path;
    tmp += ".tmp";
    try {
        {
            std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
            if (!out) throw std::runtime_error("cannot open " + tmp.string());
            writer(out);
            out.flush();
            if (!out) throw std::runtime_error("write failed: " + tmp.string());
        }
        fs::rename(tmp, path);
    } catch (...) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
    }
}

}  // namespace dsrh
