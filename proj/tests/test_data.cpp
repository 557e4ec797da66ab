#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "helpers.hpp"
#include "stv/io.hpp"

using namespace stv;
using namespace stv::test;

namespace {

std::size_t count_majority(const GroupedDataset& d) {
    return static_cast<std::size_t>(
        std::count_if(d.examples().begin(), d.examples().end(), [](const Example& e) { return e.a == e.y; }));
}

std::multiset<std::string> as_multiset(const std::vector<const GroupedDataset*>& parts) {
    std::multiset<std::string> out;
    for (const auto* p : parts)
        for (const auto& e : p->examples()) {
            std::string key = std::to_string(e.y) + ":" + std::to_string(e.a);
            for (auto t : e.tokens) key += "," + std::to_string(t);
            out.insert(key);
        }
    return out;
}

ActivationDump random_dump(Rng& rng, std::uint64_t n, std::uint64_t l, std::uint64_t t, std::uint64_t d) {
    ActivationDump dump{n, l, t, d, {}, {}, {}};
    dump.activations.resize(n * l * t * d);
    for (auto& v : dump.activations) v = static_cast<float>(rng.uniform(-3, 3));
    for (std::uint64_t i = 0; i < n; ++i) {
        dump.labels.push_back(static_cast<std::uint32_t>(rng.below(2)));
        dump.confounders.push_back(static_cast<std::uint32_t>(rng.below(2)));
    }
    return dump;
}

} // namespace

TEST_CASE("BiasConfig validation") {
    BiasConfig b;
    CHECK_NOTHROW(b.validate());
    b.rho = 0.4;
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b = BiasConfig{};
    b.rho = 1.0;
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b = BiasConfig{};
    b.eta = 0.5;
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b = BiasConfig{};
    b.n_test = 3;
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b = BiasConfig{};
    b.vocab_size = 5;  // 1 + A + C = 5 leaves no filler ids
    CHECK_THROWS_AS(generate(b), ConfigError);
    b.vocab_size = 6;
    b.n_train = b.n_val = b.n_test = 8;
    CHECK_NOTHROW(generate(b));
}

TEST_CASE("generator token layout") {
    auto b = small_bias(9, 400);
    b.eta = 0.25;
    const auto d = generate(b);
    const TokenLayout layout{b.n_classes, b.n_confounders, b.vocab_size};
    std::size_t with_signal = 0;
    for (const auto& e : d.examples()) {
        REQUIRE(e.tokens.size() == b.seq_len - 1);
        CHECK(e.g == e.y * b.n_confounders + e.a);
        // Sequence position 1 (after CLS) is tokens[0].
        CHECK(e.tokens[0] == layout.confounder_token(e.a));
        std::size_t signals = 0;
        for (std::size_t i = 1; i < e.tokens.size(); ++i) {
            const auto t = e.tokens[i];
            CHECK(t >= 1);
            CHECK(t < b.vocab_size);
            if (t == layout.signal_token(e.y)) {
                ++signals;
                CHECK(i + 1 >= 2);
                CHECK(i + 1 < b.seq_len - 1);
            } else {
                CHECK(t >= layout.first_filler());
            }
        }
        CHECK(signals <= 1);
        with_signal += signals;
    }
    const double n = static_cast<double>(d.size());
    const double expect = n * (1 - b.eta);
    CHECK(std::abs(static_cast<double>(with_signal) - expect) < 4 * std::sqrt(n * b.eta * (1 - b.eta)));
}

TEST_CASE("generator: unbiased coin at rho = 0.5") {
    auto b = small_bias(12, 4000);
    b.rho = 0.5;
    const auto d = generate(b);
    const double n = static_cast<double>(d.size());
    CHECK(std::abs(static_cast<double>(count_majority(d)) - n / 2) < 4 * std::sqrt(n));
}

TEST_CASE("generator calibration: class balance and P(a = y)") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        BiasConfig b;
        b.seed = seed;
        const auto d = generate(b);
        const double n = static_cast<double>(d.size());
        std::size_t class0 = 0;
        for (const auto& e : d.examples()) class0 += e.y == 0 ? 1 : 0;
        CHECK(std::abs(static_cast<double>(class0) - n / 2) < 4 * std::sqrt(n * 0.25));
        const double sigma = std::sqrt(n * b.rho * (1 - b.rho));
        CHECK(std::abs(static_cast<double>(count_majority(d)) - n * b.rho) < 4 * sigma);
    }
}

TEST_CASE("minority groups are about 2.5% each at rho = 0.95") {
    BiasConfig b;
    b.n_train = 8000;
    b.n_val = 1000;
    b.n_test = 1000;
    b.seed = 77;
    const auto d = generate(b);
    REQUIRE(d.size() == 10000);
    // Direct count, independent of group_table.
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> counts;
    for (const auto& e : d.examples()) ++counts[{e.y, e.a}];
    CHECK(std::abs(counts[{0, 1}] / 10000.0 - 0.025) <= 0.01);
    CHECK(std::abs(counts[{1, 0}] / 10000.0 - 0.025) <= 0.01);
    CHECK(counts[{0, 1}] == d.group_table()[d.group_id(0, 1)]);
    CHECK(counts[{1, 0}] == d.group_table()[d.group_id(1, 0)]);
}

TEST_CASE("generator is deterministic and seed-sensitive") {
    const auto b = small_bias();
    CHECK(generate(b) == generate(b));
    CHECK(generate(b).digest() == generate(b).digest());
    auto b2 = b;
    b2.seed += 1;
    CHECK(generate(b2).digest() != generate(b).digest());
}

TEST_CASE("property: random configs produce valid examples") {
    Rng rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        BiasConfig b;
        b.n_classes = 2 + rng.below(3);
        b.n_confounders = b.n_classes + rng.below(2);
        b.seq_len = 4 + rng.below(10);
        b.vocab_size = b.n_classes + b.n_confounders + 2 + rng.below(10);
        b.rho = rng.uniform(0.5, 0.99);
        b.eta = rng.uniform(0.0, 0.49);
        b.n_train = 20 + rng.below(50);
        b.n_val = 4 + rng.below(10);
        b.n_test = 4 + rng.below(10);
        b.seed = rng.next_u64();
        const auto d = generate(b);
        CHECK(d.size() == b.total());
        std::size_t total = 0;
        for (auto c : d.group_table()) total += c;
        CHECK(total == d.size());
        for (const auto& e : d.examples()) {
            CHECK(e.y < b.n_classes);
            CHECK(e.a < b.n_confounders);
            CHECK(e.g == e.y * b.n_confounders + e.a);
            for (auto t : e.tokens) CHECK((t >= 1 && t < b.vocab_size));
        }
    }
}

TEST_CASE("GroupedDataset rejects invalid examples") {
    CHECK_THROWS_AS(GroupedDataset({{{1, 2}, 2, 0, 0}}, 2, 2), DataError);
    CHECK_THROWS_AS(GroupedDataset({{{1, 2}, 0, 0, 0}, {{1}, 0, 0, 0}}, 2, 2), DataError);
    CHECK_THROWS_AS(GroupedDataset({{{0, 2}, 0, 0, 0}}, 2, 2), DataError);
    const GroupedDataset ok({{{1, 2}, 1, 0, 99}}, 2, 2);
    CHECK(ok[0].g == 2);  // recomputed
    CHECK(ok.group_name(2) == "(y=1, a=0)");
    CHECK_FALSE(ok.is_majority(2));
    CHECK(ok.is_majority(3));
}

TEST_CASE("split sizes and partition") {
    BiasConfig b = small_bias(1, 800);
    b.n_val = 100;
    b.n_test = 100;
    const auto d = generate(b);
    REQUIRE(d.size() == 1000);
    const auto s = split(d, {0.8, 0.1, 0.1}, false, 5);
    CHECK(s.train.size() == 800);
    CHECK(s.val.size() == 100);
    CHECK(s.test.size() == 100);
    CHECK(as_multiset({&s.train, &s.val, &s.test}) == as_multiset({&d}));
    const auto again = split(d, {0.8, 0.1, 0.1}, false, 5);
    CHECK(again.train == s.train);
    CHECK_THROWS_AS(split(d, {0.8, 0.1, 0.2}, false, 5), ConfigError);
    CHECK_THROWS_AS(split(d, {1.0, 0.0, 0.0}, false, 5), ConfigError);
}

TEST_CASE("balanced test split") {
    // 4 groups; the rarest has exactly 20 examples in the test partition.
    std::vector<Example> ex;
    const std::array<std::size_t, 4> per_group = {60, 20, 40, 80};
    for (std::uint32_t g = 0; g < 4; ++g)
        for (std::size_t i = 0; i < per_group[g]; ++i)
            ex.push_back({{1 + g % 2, 5, static_cast<std::uint32_t>(5 + i % 7)}, g / 2, g % 2, 0});
    // Route everything to test by making train/val tiny shares of a copy.
    const GroupedDataset test_only(ex, 2, 2);
    const auto s = split(test_only, {1e-9, 1e-9, 1.0 - 2e-9}, true, 3);
    CHECK(s.test.size() == 80);
    for (auto c : s.test.group_table()) CHECK(c == 20);

    std::vector<Example> missing;
    for (const auto& e : ex)
        if (!(e.y == 1 && e.a == 1)) missing.push_back(e);
    try {
        split(GroupedDataset(missing, 2, 2), {0.5, 0.25, 0.25}, true, 3);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("(y=1, a=1)") != std::string::npos);
    }
}

TEST_CASE("select_group") {
    const auto d = generate(small_bias(2, 400));
    std::size_t total = 0;
    for (std::uint32_t y = 0; y < 2; ++y)
        for (std::uint32_t a = 0; a < 2; ++a) {
            const auto s = select_group(d, y, a);
            for (const auto& e : s.examples()) CHECK((e.y == y && e.a == a));
            CHECK(select_group(s, y, a) == s);
            CHECK(s.size() == d.group_table()[d.group_id(y, a)]);
            total += s.size();
        }
    CHECK(total == d.size());
    // Order preserved.
    const auto s = select_group(d, 0, 0);
    std::size_t j = 0;
    for (const auto& e : d.examples())
        if (e.y == 0 && e.a == 0) CHECK(e == s[j++]);
    CHECK_THROWS_AS(select_group(d, 5, 0), DataError);
    CHECK_THROWS_AS(select_group(GroupedDataset({{{1, 2}, 0, 0, 0}}, 2, 2), 1, 1), DataError);
}

TEST_CASE("dataset text round-trip and parse errors") {
    const auto d = generate(small_bias(4, 60));
    const auto dir = scratch_dir("dataset");
    write_dataset(dir / "d.txt", d);
    const auto back = read_dataset(dir / "d.txt", 2, 2);
    CHECK(back == d);
    CHECK(back.digest() == d.digest());
    CHECK(parse_dataset("0 1 5 6 7\n1 0 5 6 7\n", 2, 2).size() == 2);
    CHECK_THROWS_AS(parse_dataset("0 1 5 x 7\n", 2, 2), DataError);
    CHECK_THROWS_AS(parse_dataset("0\n", 2, 2), DataError);
    CHECK_THROWS_AS(parse_dataset("3 1 5 6 7\n", 2, 2), DataError);
    CHECK_THROWS_AS(read_dataset(dir / "missing.txt", 2, 2), IoError);
}

TEST_CASE("activation dump round-trip is bitwise exact") {
    Rng rng(31);
    const auto dir = scratch_dir("dump");
    for (int trial = 0; trial < 5; ++trial) {
        const auto dump = random_dump(rng, 1 + rng.below(6), 1 + rng.below(3), 2 + rng.below(4), 1 + rng.below(5));
        export_dump(dump, dir / "d.stvd");
        const auto back = import_dump(dir / "d.stvd");
        CHECK(back == dump);
        CHECK(serialize_dump(back) == read_file(dir / "d.stvd"));
    }
}

TEST_CASE("activation dump format errors carry byte offsets") {
    Rng rng(32);
    const auto bytes = serialize_dump(random_dump(rng, 3, 2, 2, 2));

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    try {
        deserialize_dump(bad_magic);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset == 0);
    }

    auto bad_version = bytes;
    bad_version[4] = 9;
    try {
        deserialize_dump(bad_version);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset == 4);
    }

    // Inflate N in the header so dims no longer match the payload.
    auto inflated = bytes;
    inflated[10] = 200;
    CHECK_THROWS_AS(deserialize_dump(inflated), FormatError);

    // Dimension product overflowing 64 bits.
    auto overflow = bytes;
    for (int i = 0; i < 8; ++i) overflow[10 + i] = 0xff;
    CHECK_THROWS_AS(deserialize_dump(overflow), FormatError);

    const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
    CHECK_THROWS_AS(deserialize_dump(truncated), FormatError);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(deserialize_dump(trailing), FormatError);

    CHECK_THROWS_AS(import_dump("/nonexistent/dir/x.stvd"), IoError);
}
