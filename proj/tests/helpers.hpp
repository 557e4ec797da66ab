#pragma once

// Shared fixtures and independent oracles for the unit and acceptance tests.
// The oracles deliberately avoid the library's own helpers (plain loops, double
// accumulation) so they can catch mistakes in the code under test.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stv/data.hpp"
#include "stv/model.hpp"
#include "stv/rng.hpp"

namespace stv::test {

inline ModelConfig tiny_config(std::size_t layers = 2, std::size_t d = 8, std::size_t heads = 2,
                               std::size_t ff = 16, std::size_t vocab = 16, std::size_t seq = 8,
                               std::size_t classes = 2, std::uint64_t seed = 1) {
    ModelConfig c;
    c.n_layers = layers;
    c.d_model = d;
    c.n_heads = heads;
    c.d_ff = ff;
    c.vocab_size = vocab;
    c.seq_len = seq;
    c.n_classes = classes;
    c.seed = seed;
    return c;
}

inline std::vector<std::uint32_t> random_tokens(Rng& rng, const ModelConfig& c) {
    std::vector<std::uint32_t> t(c.seq_len - 1);
    for (auto& v : t) v = static_cast<std::uint32_t>(1 + rng.below(c.vocab_size - 1));
    return t;
}

inline VectorF random_vector(Rng& rng, std::size_t d, double scale = 1.0) {
    VectorF v(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<float>(rng.uniform(-scale, scale));
    return v;
}

inline VectorF random_unit(Rng& rng, std::size_t d) {
    VectorF v;
    do {
        v = random_vector(rng, d);
    } while (v.norm() < 1e-3f);
    return v / v.norm();
}

// Small dataset with every group present; the default layout of the generator.
inline BiasConfig small_bias(std::uint64_t seed = 3, std::size_t n = 200) {
    BiasConfig b;
    b.n_train = n;
    b.n_val = n / 4;
    b.n_test = n / 4;
    b.rho = 0.8;
    b.vocab_size = 16;
    b.seq_len = 8;
    b.seed = seed;
    return b;
}

inline double dot_oracle(const VectorF& a, const VectorF& b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

inline double norm_oracle(const VectorF& a) { return std::sqrt(dot_oracle(a, a)); }

// Projection removal written from scratch in double.
inline std::vector<double> ablate_oracle(const VectorF& x, const VectorF& unit) {
    const double c = dot_oracle(x, unit);
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i) out[static_cast<std::size_t>(i)] = x[i] - c * unit[i];
    return out;
}

// Per-coordinate average of captured resid_pre traces, plain nested loops.
inline std::vector<double> brute_force_mean(const ModelParams& params, const GroupedDataset& group) {
    const auto& c = params.config;
    std::vector<double> sum(c.n_layers * c.seq_len * c.d_model, 0.0);
    for (const auto& ex : group.examples()) {
        const auto out = forward(params, ex.tokens, InterventionSpec::none(), true);
        for (std::size_t l = 0; l < c.n_layers; ++l)
            for (std::size_t t = 0; t < c.seq_len; ++t)
                for (std::size_t k = 0; k < c.d_model; ++k)
                    sum[(l * c.seq_len + t) * c.d_model + k] +=
                        out.trace->resid_pre[l](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k));
    }
    for (auto& v : sum) v /= static_cast<double>(group.size());
    return sum;
}

// Empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("stv_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace stv::test
