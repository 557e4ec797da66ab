#include "doctest.h"

#include <set>

#include "helpers.hpp"
#include "stv/config.hpp"
#include "stv/io.hpp"
#include "stv/pipeline.hpp"

using namespace stv;
using namespace stv::test;

TEST_CASE("defaults") {
    const RunConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.data.rho == 0.95);
    CHECK(c.data.eta == 0.1);
    CHECK(c.data.n_train == 8000);
    CHECK(c.train.epochs == 10);
    CHECK(c.train.batch_size == 64);
    CHECK(c.train.learning_rate == 3e-4);
    CHECK(c.steering.position == 0);
    CHECK(c.steering.alpha == 1.0f);
    CHECK(c.over_group() == std::pair<std::uint32_t, std::uint32_t>{0, 0});
    CHECK(c.under_group() == std::pair<std::uint32_t, std::uint32_t>{0, 1});
}

TEST_CASE("stage seeds are distinct and derived from the root") {
    RunConfig a;
    a.seed = 5;
    const std::set<std::uint64_t> seeds{a.data_config().seed, a.model_config().seed, a.train_config().seed,
                                        a.split_seed()};
    CHECK(seeds.size() == 4);
    RunConfig b = a;
    b.seed = 6;
    CHECK(b.data_config().seed != a.data_config().seed);
    CHECK(a.model_config().vocab_size == a.data.vocab_size);
    CHECK(a.model_config().seq_len == a.data.seq_len);
}

TEST_CASE("JSON round-trip and overrides") {
    RunConfig c;
    c.seed = 42;
    c.model.n_layers = 3;
    c.data.rho = 0.9;
    c.steering.mode = InterventionMode::subtract;
    c.steering.alpha = 0.5f;
    c.steering.orientation = Orientation::minority_over;
    c.steering.use_validation_means = true;
    const auto back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(back.over_group() == std::pair<std::uint32_t, std::uint32_t>{0, 1});

    const auto partial = run_config_from_json(nlohmann::json::parse(R"({"seed": 3, "train": {"epochs": 2}})"));
    CHECK(partial.seed == 3);
    CHECK(partial.train.epochs == 2);
    CHECK(partial.train.batch_size == 64);
}

TEST_CASE("invalid configs are rejected") {
    using nlohmann::json;
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"data": {"rho": 0.4}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model": {"seq_len": 9}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model": {"d_model": 10, "n_heads": 3}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"epochs": "ten"}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"steering": {"mode": "weird"}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"steering": {"class": 5}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"steering": {"position": 16}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"steering": {"means_from": "test"}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"steering": {"minority_confounder": 0}})")), ConfigError);

    const auto dir = scratch_dir("config");
    write_text_file(dir / "bad.json", "{ not json");
    CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
    CHECK_THROWS_AS(load_run_config(dir / "missing.json"), IoError);
}

TEST_CASE("make_splits honors sizes and balance") {
    RunConfig c;
    c.data.n_train = 400;
    c.data.n_val = 100;
    c.data.n_test = 200;
    const auto s = make_splits(c);
    CHECK(s.train.size() == 400);
    CHECK(s.val.size() == 100);
    const auto& t = s.test.group_table();
    for (auto n : t) CHECK(n == t[0]);
    CHECK(make_splits(c).train == s.train);
}
