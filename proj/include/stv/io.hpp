#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stv/common.hpp"

namespace stv {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);
Digest sha256(std::string_view text);
std::string to_hex(const Digest& digest);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Little-endian byte sink.
class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
    void magic(std::string_view tag);

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

// Little-endian byte source. Every failure throws FormatError carrying the
// offset at which the offending field starts.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    std::span<const std::uint8_t> raw(std::uint64_t n);
    void expect_magic(std::string_view tag);
    void expect_end() const;

    std::uint64_t offset() const { return pos_; }
    std::uint64_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::uint64_t n, const char* what) const;

    std::span<const std::uint8_t> bytes_;
    std::uint64_t pos_ = 0;
};

// STVD tensor framing:
//   "STVD" | u32 version=1 | u8 dtype (0 = f32) | u8 ndim | ndim x u64 dims | row-major f32 payload
inline constexpr std::uint32_t kFormatVersion = 1;

struct Tensor {
    std::vector<std::uint64_t> dims;
    std::vector<float> values;

    std::uint64_t numel() const;
};

void write_tensor(ByteWriter& out, std::span<const std::uint64_t> dims, std::span<const float> values);
Tensor read_tensor(ByteReader& in);

} // namespace stv
