#include "doctest.h"

#include <algorithm>

#include "helpers.hpp"
#include "stv/eval.hpp"
#include "stv/train.hpp"

using namespace stv;
using namespace stv::test;

namespace {

std::vector<GroupAccuracy> groups_from(const std::vector<std::pair<std::size_t, std::size_t>>& correct_of_n) {
    std::vector<GroupAccuracy> out;
    for (std::uint32_t g = 0; g < correct_of_n.size(); ++g) {
        const auto [c, n] = correct_of_n[g];
        out.push_back({g, g / 2, g % 2, n, c, static_cast<double>(c) / static_cast<double>(n)});
    }
    return out;
}

// Model whose residual coordinate k is identically zero (see test_model.cpp).
ModelParams dead_coordinate_model(std::uint64_t seed, Eigen::Index k) {
    auto p = init_params(tiny_config(2, 8, 2, 16, 16, 8, 2, seed));
    p.tok_emb.col(k).setZero();
    p.pos_emb.col(k).setZero();
    for (auto& l : p.layers) {
        l.wo.col(k).setZero();
        l.w2.col(k).setZero();
        l.b2.col(k).setZero();
    }
    return p;
}

} // namespace

TEST_CASE("summarize: min and unweighted mean") {
    const auto r = summarize(groups_from({{9, 10}, {5, 10}, {7, 10}, {7, 10}}));
    CHECK(r.wga == doctest::Approx(0.5));
    CHECK(r.aga == doctest::Approx(0.7));
    CHECK(r.overall == doctest::Approx(0.7));

    const auto perfect = summarize(groups_from({{3, 3}, {4, 4}}));
    CHECK(perfect.wga == 1.0);
    CHECK(perfect.aga == 1.0);

    // Unequal sizes: aga and overall differ.
    const auto skew = summarize(groups_from({{90, 100}, {1, 10}}));
    CHECK(skew.aga == doctest::Approx(0.5));
    CHECK(skew.overall == doctest::Approx(91.0 / 110.0));
    CHECK_THROWS_AS(summarize({}), DataError);
}

TEST_CASE("property: wga <= aga <= max group accuracy") {
    Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<std::pair<std::size_t, std::size_t>> g;
        const std::size_t k = 1 + rng.below(8);
        const bool equal = rng.bernoulli(0.5);
        const std::size_t base_n = 1 + rng.below(50);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t n = equal ? base_n : 1 + rng.below(50);
            g.push_back({rng.below(n + 1), n});
        }
        const auto r = summarize(groups_from(g));
        double mx = 0;
        for (const auto& x : r.groups) mx = std::max(mx, x.accuracy);
        CHECK(r.wga <= r.aga + 1e-12);
        CHECK(r.aga <= mx + 1e-12);
        if (equal) CHECK(r.aga == doctest::Approx(r.overall).epsilon(1e-12));
    }
}

TEST_CASE("group_accuracies on a model") {
    const auto p = init_params(tiny_config(2, 8, 2, 16, 16, 8, 2, 4));
    const auto d = generate(small_bias(4, 120));
    const auto r = group_accuracies(p, d, InterventionSpec::none());
    REQUIRE(r.groups.size() == 4);
    std::size_t total = 0, correct = 0;
    for (const auto& g : r.groups) {
        total += g.n;
        correct += g.correct;
        CHECK(g.n == d.group_table()[g.group]);
    }
    CHECK(total == d.size());
    CHECK(r.overall == doctest::Approx(static_cast<double>(correct) / static_cast<double>(total)));
    CHECK(r.dataset_digest == d.digest());
    CHECK(r == group_accuracies(p, d, InterventionSpec::none()));

    // Independent tally.
    std::vector<std::size_t> hits(4, 0);
    for (const auto& e : d.examples()) {
        const auto logits = forward(p, e.tokens).logits;
        const std::uint32_t pred = logits[1] > logits[0] ? 1u : 0u;
        hits[e.g] += pred == e.y ? 1 : 0;
    }
    for (const auto& g : r.groups) CHECK(g.correct == hits[g.group]);

    try {
        group_accuracies(p, select_group(d, 0, 0), InterventionSpec::none());
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("(y=0, a=1)") != std::string::npos);
    }
}

TEST_CASE("orthogonal ablation leaves the report unchanged") {
    const auto p = dead_coordinate_model(9, 5);
    const auto d = generate(small_bias(9, 120));
    VectorF e = VectorF::Zero(8);
    e[5] = 1.0f;
    // Confirm orthogonality on the captured traces before relying on it.
    for (const auto& ex : d.examples()) {
        const auto tr = forward(p, ex.tokens, InterventionSpec::none(), true);
        for (const auto& x : tr.trace->resid_pre) REQUIRE(x.col(5).cwiseAbs().maxCoeff() == 0.0f);
    }
    auto base = group_accuracies(p, d, InterventionSpec::none());
    auto ablated = group_accuracies(p, d, InterventionSpec::single_global(e));
    CHECK(base.wga == ablated.wga);
    CHECK(base.aga == ablated.aga);
    for (std::size_t g = 0; g < 4; ++g) CHECK(base.groups[g].correct == ablated.groups[g].correct);
}

TEST_CASE("compare") {
    const auto a = summarize(groups_from({{9, 10}, {5, 10}}), "none", "abc");
    const auto b = summarize(groups_from({{8, 10}, {8, 10}}), "single", "abc");
    const auto zero = compare(a, a);
    CHECK(zero.wga == 0.0);
    CHECK(zero.aga == 0.0);
    for (double g : zero.groups) CHECK(g == 0.0);
    const auto ab = compare(a, b);
    const auto ba = compare(b, a);
    CHECK(ab.wga == doctest::Approx(0.3));
    CHECK(ab.wga == -ba.wga);
    CHECK(ab.aga == -ba.aga);
    CHECK(ab.overall == -ba.overall);
    for (std::size_t i = 0; i < ab.groups.size(); ++i) CHECK(ab.groups[i] == -ba.groups[i]);
    const auto c = summarize(groups_from({{8, 10}, {8, 10}}), "single", "xyz");
    CHECK_THROWS_AS(compare(a, c), ArtifactMismatch);
}

TEST_CASE("table rendering") {
    const std::string t = render_table({{"Waterbirds", "ERM", "yes", 62.46, 89.43}});
    CHECK(t.find("Dataset") != std::string::npos);
    CHECK(t.find("Training Required?") != std::string::npos);
    CHECK(t.find("62.46") != std::string::npos);
    CHECK(t.find("89.43") != std::string::npos);
    CHECK(render_table({{"x", "m", "no", 5.0, 100.0}}).find("  5.00") != std::string::npos);

    const auto r = summarize(groups_from({{6246, 10000}, {8943, 10000}}));
    const auto row = table_row("Waterbirds", "ERM", r, "yes");
    CHECK(row.worst == doctest::Approx(62.46));
    CHECK(row.average == doctest::Approx(75.945));
}

TEST_CASE("report JSON round-trip") {
    auto r = summarize(groups_from({{3, 7}, {1, 3}, {5, 5}, {0, 2}}), "single_global", "d1g");
    const auto back = eval_report_from_json(to_json(r));
    CHECK(back == r);
    CHECK(to_json(back).dump() == to_json(r).dump());
    CHECK(to_json(LayerProfile{{{2, 0.5, 0.6}, {3, 0.7, 0.8}}})["layers"].size() == 2);
    CHECK(render_profile(LayerProfile{{{2, 0.5, 0.6}}}).find("50.00") != std::string::npos);
}
