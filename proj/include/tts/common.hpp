#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tts {

/// Input data (files, formats, corpora) failed validation.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A training run could not proceed (bad plan, broken stage chain, ...).
class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// FNV-1a 64-bit over a byte range.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), seed);
}

std::string to_hex(std::uint64_t v);

// Little-endian scalar append/read helpers for the binary file formats.
void put_u32(std::string& out, std::uint32_t v);
void put_u8(std::string& out, std::uint8_t v);
void put_f32(std::string& out, float v);
void put_f64(std::string& out, double v);

class ByteReader {
public:
    ByteReader(const void* data, std::size_t size)
        : p_(static_cast<const unsigned char*>(data)), size_(size) {}

    std::size_t remaining() const { return size_ - pos_; }
    bool eof() const { return pos_ >= size_; }

    std::uint8_t u8();
    std::uint32_t u32();
    float f32();
    double f64();
    std::string bytes(std::size_t n);
    void raw(void* dst, std::size_t n);

private:
    void need(std::size_t n) const;
    const unsigned char* p_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);
/// Write to path via temp file + rename so readers never see a partial file.
void write_file_atomic(const std::string& path, const std::string& bytes);

} // namespace tts
