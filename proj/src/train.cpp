#include "stv/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "stv/parallel.hpp"
#include "stv/rng.hpp"

namespace stv {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning_rate must be finite and non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("adam betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

CrossEntropy cross_entropy(const VectorF& logits, std::uint32_t y) {
    CrossEntropy ce;
    ce.loss = softmax_cross_entropy<float>(logits, y, &ce.grad);
    return ce;
}

bool TrainReport::operator==(const TrainReport& o) const {
    auto same = [](const std::vector<double>& a, const std::vector<double>& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (!(a[i] == b[i] || (std::isnan(a[i]) && std::isnan(b[i])))) return false;
        return true;
    };
    return same(epoch_loss, o.epoch_loss) && same(epoch_accuracy, o.epoch_accuracy) &&
           same(val_group_accuracy, o.val_group_accuracy);
}

nlohmann::json to_json(const TrainReport& report) {
    nlohmann::json val = nlohmann::json::array();
    for (double v : report.val_group_accuracy) val.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    return {{"epoch_loss", report.epoch_loss}, {"epoch_accuracy", report.epoch_accuracy}, {"val_group_accuracy", val}};
}

namespace {

constexpr std::size_t kGradChunk = 16;

struct ChunkResult {
    ModelParams grad;
    double loss = 0.0;
    std::size_t correct = 0;
};

} // namespace

TrainResult train_erm(ModelParams params, const GroupedDataset& train, const GroupedDataset& val,
                      const TrainConfig& config) {
    config.validate();
    check_params(params);
    if (train.empty()) throw DataError("training set is empty");
    const auto start = std::chrono::steady_clock::now();

    ModelParams m = zeros_like<float>(params.config);
    ModelParams v = zeros_like<float>(params.config);
    std::uint64_t step = 0;
    TrainReport report;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle) {
            std::iota(order.begin(), order.end(), 0);
            Rng rng(derive_seed(config.seed, epoch));
            rng.shuffle(order.begin(), order.end());
        }
        double epoch_loss = 0.0;
        std::size_t epoch_correct = 0;
        const std::size_t n_batches = (train.size() + config.batch_size - 1) / config.batch_size;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t begin = b * config.batch_size;
            const std::size_t end = std::min(train.size(), begin + config.batch_size);
            const float scale = 1.0f / static_cast<float>(end - begin);
            const std::size_t n_chunks = (end - begin + kGradChunk - 1) / kGradChunk;

            const auto diverged = [&](const std::string& why) {
                return TrainingError("loss diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                                         std::to_string(b + 1) + ": " + why,
                                     epoch + 1, b + 1);
            };
            std::vector<ChunkResult> chunks(n_chunks);
            try {
                parallel_for(n_chunks, [&](std::size_t c) {
                    auto& out = chunks[c];
                    out.grad = zeros_like<float>(params.config);
                    for (std::size_t i = begin + c * kGradChunk; i < std::min(end, begin + (c + 1) * kGradChunk); ++i) {
                        const auto& ex = train[order[i]];
                        std::uint32_t predicted = 0;
                        out.loss += loss_and_grad<float>(params, ex.tokens, ex.y, out.grad, scale,
                                                         InterventionSpec::none(), &predicted);
                        out.correct += predicted == ex.y ? 1 : 0;
                    }
                });
            } catch (const NumericError& e) {
                throw diverged(e.what());
            }

            ModelParams grad = std::move(chunks[0].grad);
            double batch_loss = chunks[0].loss;
            std::size_t batch_correct = chunks[0].correct;
            for (std::size_t c = 1; c < n_chunks; ++c) {
                visit_tensors([](const std::string&, MatrixF& acc, const MatrixF& g) { acc += g; }, grad, chunks[c].grad);
                batch_loss += chunks[c].loss;
                batch_correct += chunks[c].correct;
            }
            if (!std::isfinite(batch_loss)) throw diverged("non-finite loss");
            epoch_loss += batch_loss;
            epoch_correct += batch_correct;

            ++step;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            const auto lr = static_cast<float>(config.learning_rate);
            const auto b1 = static_cast<float>(config.beta1);
            const auto b2 = static_cast<float>(config.beta2);
            const auto eps = static_cast<float>(config.epsilon);
            const auto wd = static_cast<float>(config.weight_decay);
            const auto inv_bc1 = static_cast<float>(1.0 / bc1);
            const auto inv_bc2 = static_cast<float>(1.0 / bc2);
            visit_tensors(
                [&](const std::string&, MatrixF& p, const MatrixF& g, MatrixF& mm, MatrixF& vv) {
                    for (Eigen::Index i = 0; i < p.size(); ++i) {
                        const float gi = g.data()[i];
                        float& mi = mm.data()[i];
                        float& vi = vv.data()[i];
                        mi = b1 * mi + (1.0f - b1) * gi;
                        vi = b2 * vi + (1.0f - b2) * gi * gi;
                        const float update = (mi * inv_bc1) / (std::sqrt(vi * inv_bc2) + eps) + wd * p.data()[i];
                        p.data()[i] -= lr * update;
                    }
                },
                params, grad, m, v);
        }
        report.epoch_loss.push_back(epoch_loss / static_cast<double>(train.size()));
        report.epoch_accuracy.push_back(static_cast<double>(epoch_correct) / static_cast<double>(train.size()));
    }

    report.val_group_accuracy.assign(val.n_groups(), std::numeric_limits<double>::quiet_NaN());
    std::vector<std::size_t> n(val.n_groups(), 0), correct(val.n_groups(), 0);
    for (const auto& ex : val.examples()) {
        ++n[ex.g];
        correct[ex.g] += predict(forward(params, ex.tokens).logits) == ex.y ? 1 : 0;
    }
    for (std::size_t g = 0; g < n.size(); ++g)
        if (n[g]) report.val_group_accuracy[g] = static_cast<double>(correct[g]) / static_cast<double>(n[g]);

    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(params), std::move(report)};
}

// ---------------------------------------------------------------------------
// Checkpoints

nlohmann::json to_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers}, {"d_model", c.d_model},       {"n_heads", c.n_heads},
            {"d_ff", c.d_ff},         {"vocab_size", c.vocab_size}, {"seq_len", c.seq_len},
            {"n_classes", c.n_classes}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.seq_len = j.at("seq_len").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params) {
    check_params(params);
    ByteWriter out;
    out.magic("STVP");
    out.u32(kFormatVersion);
    const std::string config = to_json(params.config).dump();
    out.u64(config.size());
    out.raw(std::span(reinterpret_cast<const std::uint8_t*>(config.data()), config.size()));
    std::uint32_t count = 0;
    visit_tensors([&count](const std::string&, const MatrixF&) { ++count; }, params);
    out.u32(count);
    visit_tensors(
        [&out](const std::string&, const MatrixF& t) {
            const std::array<std::uint64_t, 2> dims{static_cast<std::uint64_t>(t.rows()), static_cast<std::uint64_t>(t.cols())};
            write_tensor(out, dims, std::span(t.data(), static_cast<std::size_t>(t.size())));
        },
        params);
    return out.take();
}

ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    in.expect_magic("STVP");
    const auto version_at = in.offset();
    if (const auto v = in.u32(); v != kFormatVersion)
        throw FormatError("unsupported STVP version " + std::to_string(v), version_at);
    const auto config_at = in.offset();
    const auto len = in.u64();
    const auto text = in.raw(len);
    ModelConfig config;
    try {
        config = model_config_from_json(nlohmann::json::parse(text.begin(), text.end()));
        config.validate();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad embedded model config: ") + e.what(), config_at);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("bad embedded model config: ") + e.what(), config_at);
    }
    ModelParams params = zeros_like<float>(config);
    const auto count_at = in.offset();
    std::uint32_t expected = 0;
    visit_tensors([&expected](const std::string&, const MatrixF&) { ++expected; }, params);
    if (const auto count = in.u32(); count != expected)
        throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                              std::to_string(expected),
                          count_at);
    visit_tensors(
        [&in](const std::string& name, MatrixF& t) {
            const auto at = in.offset();
            Tensor read = read_tensor(in);
            if (read.dims.size() != 2 || read.dims[0] != static_cast<std::uint64_t>(t.rows()) ||
                read.dims[1] != static_cast<std::uint64_t>(t.cols()))
                throw FormatError("tensor " + name + " has the wrong shape", at);
            std::copy(read.values.begin(), read.values.end(), t.data());
        },
        params);
    in.expect_end();
    return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    write_file(path, serialize_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

Digest model_digest(const ModelParams& params) { return sha256(serialize_checkpoint(params)); }

} // namespace stv
