#pragma once

// Small file and byte-order helpers shared by the checkpoint and dataset
// codecs. All multi-byte encodings are explicit about endianness so the
// formats are portable regardless of host order.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "rfsc/error.hpp"

namespace rfsc {

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open file for reading: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_data("cannot open file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail_data("short write to " + path);
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open file for reading: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_data("cannot open file for writing: " + path);
    out << text;
    if (!out) fail_data("short write to " + path);
}

inline void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

// Cursor-based decoding with truncation checks; `what` names the field for
// error messages.
struct ByteReader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;
    std::string source;

    void need(std::size_t n, const char* what) const {
        if (pos + n > bytes.size())
            fail_data(source + ": truncated while reading " + what + " (offset " + std::to_string(pos) + ")");
    }
    std::uint32_t u32_le(const char* what) {
        need(4, what);
        std::uint32_t v = static_cast<std::uint32_t>(bytes[pos]) | (static_cast<std::uint32_t>(bytes[pos + 1]) << 8) |
                          (static_cast<std::uint32_t>(bytes[pos + 2]) << 16) |
                          (static_cast<std::uint32_t>(bytes[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    std::uint32_t u32_be(const char* what) {
        need(4, what);
        std::uint32_t v = (static_cast<std::uint32_t>(bytes[pos]) << 24) |
                          (static_cast<std::uint32_t>(bytes[pos + 1]) << 16) |
                          (static_cast<std::uint32_t>(bytes[pos + 2]) << 8) | static_cast<std::uint32_t>(bytes[pos + 3]);
        pos += 4;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return bytes[pos++];
    }
};

inline void put_f32_le(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t v;
    static_assert(sizeof(v) == sizeof(f));
    __builtin_memcpy(&v, &f, 4);
    put_u32_le(out, v);
}

inline float get_f32_le(ByteReader& r, const char* what) {
    std::uint32_t v = r.u32_le(what);
    float f;
    __builtin_memcpy(&f, &v, 4);
    return f;
}

// FNV-1a 64-bit, used to fingerprint checkpoint bytes in reports.
inline std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

} // namespace rfsc
