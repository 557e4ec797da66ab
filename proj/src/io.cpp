#include "stv/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include <openssl/evp.h>

namespace stv {

Digest sha256(std::span<const std::uint8_t> bytes) {
    Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
        throw Error("sha256 failed");
    return out;
}

Digest sha256(std::string_view text) {
    return sha256(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string to_hex(const Digest& digest) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    s.reserve(digest.size() * 2);
    for (auto b : digest) {
        s.push_back(kHex[b >> 4]);
        s.push_back(kHex[b & 0xf]);
    }
    return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::magic(std::string_view tag) {
    for (char c : tag) bytes_.push_back(static_cast<std::uint8_t>(c));
}

void ByteReader::need(std::uint64_t n, const char* what) const {
    if (n > remaining())
        throw FormatError(std::string("truncated ") + what + ": need " + std::to_string(n) + " bytes, have " +
                              std::to_string(remaining()),
                          pos_);
}

std::uint8_t ByteReader::u8() {
    need(1, "u8");
    return bytes_[pos_++];
}

std::uint32_t ByteReader::u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
}

std::span<const std::uint8_t> ByteReader::raw(std::uint64_t n) {
    need(n, "payload");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
}

void ByteReader::expect_magic(std::string_view tag) {
    const auto at = pos_;
    if (remaining() < tag.size() || std::memcmp(bytes_.data() + pos_, tag.data(), tag.size()) != 0)
        throw FormatError("bad magic, expected \"" + std::string(tag) + "\"", at);
    pos_ += tag.size();
}

void ByteReader::expect_end() const {
    if (remaining() != 0) throw FormatError(std::to_string(remaining()) + " trailing bytes", pos_);
}

// ---------------------------------------------------------------------------

std::uint64_t Tensor::numel() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void write_tensor(ByteWriter& out, std::span<const std::uint64_t> dims, std::span<const float> values) {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    if (n != values.size()) throw ShapeError("tensor dims do not match value count");
    if (dims.size() > 255) throw ShapeError("too many tensor dimensions");
    out.magic("STVD");
    out.u32(kFormatVersion);
    out.u8(0);
    out.u8(static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) out.u64(d);
    for (float v : values) out.f32(v);
}

Tensor read_tensor(ByteReader& in) {
    in.expect_magic("STVD");
    const auto version_at = in.offset();
    if (const auto version = in.u32(); version != kFormatVersion)
        throw FormatError("unsupported STVD version " + std::to_string(version), version_at);
    const auto dtype_at = in.offset();
    if (const auto dtype = in.u8(); dtype != 0)
        throw FormatError("unsupported dtype " + std::to_string(dtype), dtype_at);
    const auto ndim = in.u8();
    Tensor t;
    t.dims.resize(ndim);
    const auto dims_at = in.offset();
    std::uint64_t n = 1;
    for (auto& d : t.dims) {
        d = in.u64();
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / 4 / d)
            throw FormatError("dimension overflow", dims_at);
        n *= d;
    }
    const auto payload_at = in.offset();
    if (n * 4 > in.remaining())
        throw FormatError("truncated payload: dims require " + std::to_string(n * 4) + " bytes, have " +
                              std::to_string(in.remaining()),
                          payload_at);
    const auto payload = in.raw(n * 4);
    t.values.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= std::uint32_t{payload[i * 4 + b]} << (8 * b);
        t.values[i] = std::bit_cast<float>(bits);
    }
    return t;
}

} // namespace stv
