#include "doctest.h"

#include <cstring>

#include "helpers.hpp"
#include "stv/io.hpp"

using namespace stv;
using namespace stv::test;

TEST_CASE("sha256 known answers") {
    CHECK(to_hex(sha256(std::string_view(""))) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(to_hex(sha256(std::string_view("abc"))) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("little-endian writer and reader") {
    ByteWriter w;
    w.magic("ABCD");
    w.u8(7);
    w.u32(0x01020304u);
    w.u64(0x1122334455667788ull);
    w.f32(-1.5f);
    const auto bytes = w.bytes();
    REQUIRE(bytes.size() == 4 + 1 + 4 + 8 + 4);
    CHECK(bytes[5] == 0x04);
    CHECK(bytes[8] == 0x01);
    CHECK(bytes[9] == 0x88);

    ByteReader r(bytes);
    r.expect_magic("ABCD");
    CHECK(r.u8() == 7);
    CHECK(r.u32() == 0x01020304u);
    CHECK(r.u64() == 0x1122334455667788ull);
    const auto raw = r.raw(4);
    float f;
    std::memcpy(&f, raw.data(), 4);
    CHECK(f == -1.5f);
    CHECK_NOTHROW(r.expect_end());
    try {
        r.u8();
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset == bytes.size());
        CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
}

TEST_CASE("tensor framing round-trip and errors") {
    Rng rng(1);
    std::vector<float> values(2 * 3 * 4);
    for (auto& v : values) v = static_cast<float>(rng.uniform(-1, 1));
    const std::vector<std::uint64_t> dims{2, 3, 4};
    ByteWriter w;
    write_tensor(w, dims, values);
    const auto bytes = w.take();
    ByteReader r(bytes);
    const auto t = read_tensor(r);
    CHECK(t.dims == dims);
    CHECK(t.values == values);
    CHECK(t.numel() == 24);

    auto bad = bytes;
    bad[8] = 1;  // dtype
    ByteReader rb(bad);
    try {
        read_tensor(rb);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset == 8);
    }
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 1);
    ByteReader rc(cut);
    CHECK_THROWS_AS(read_tensor(rc), FormatError);

    ByteWriter wm;
    CHECK_THROWS(write_tensor(wm, dims, std::vector<float>(5)));
}

TEST_CASE("file helpers") {
    const auto dir = scratch_dir("io");
    const std::vector<std::uint8_t> data{1, 2, 3};
    write_file(dir / "x.bin", data);
    CHECK(read_file(dir / "x.bin") == data);
    write_text_file(dir / "x.txt", "hi\n");
    CHECK(read_file(dir / "x.txt").size() == 3);
    CHECK_THROWS_AS(read_file(dir / "missing"), IoError);
    CHECK_THROWS_AS(write_file(dir / "no" / "such" / "dir" / "x", data), IoError);
}
