#include "stv/steering.hpp"

#include <algorithm>
#include <cmath>

#include "stv/eval.hpp"
#include "stv/parallel.hpp"

namespace stv {

namespace {

constexpr std::size_t kChunk = 64;

void check_same_shape(const MeanField& mu, const MeanField& nu) {
    if (mu.n_layers != nu.n_layers || mu.seq_len != nu.seq_len || mu.d_model != nu.d_model ||
        mu.means.size() != nu.means.size())
        throw ShapeError("mean fields have different shapes");
}

// Sums rows into double accumulators chunk by chunk, then reduces chunks in
// order so the result does not depend on the worker count.
template <typename RowFn>
MeanField chunked_mean(std::size_t n, std::size_t n_layers, std::size_t seq_len, std::size_t d_model, RowFn&& add_row) {
    const std::size_t width = n_layers * seq_len * d_model;
    const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> partial(n_chunks);
    parallel_for(n_chunks, [&](std::size_t c) {
        partial[c].assign(width, 0.0);
        for (std::size_t i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) add_row(i, partial[c]);
    });
    std::vector<double> total(width, 0.0);
    for (const auto& p : partial)
        for (std::size_t k = 0; k < width; ++k) total[k] += p[k];
    MeanField m;
    m.n_layers = n_layers;
    m.seq_len = seq_len;
    m.d_model = d_model;
    m.n_samples = n;
    m.means.resize(width);
    for (std::size_t k = 0; k < width; ++k) m.means[k] = static_cast<float>(total[k] / static_cast<double>(n));
    return m;
}

} // namespace

CandidateVector make_candidate(std::size_t layer, std::size_t position, VectorF r) {
    CandidateVector c;
    c.layer = layer;
    c.position = position;
    c.norm = r.cast<double>().norm();
    c.degenerate = !(c.norm >= kDegenerateNorm);
    c.unit = c.degenerate ? VectorF::Zero(r.size()) : VectorF((r.cast<double>() / c.norm).cast<float>());
    c.r = std::move(r);
    return c;
}

MeanField mean_activations(const ModelParams& params, const GroupedDataset& group) {
    if (group.empty()) throw DataError("mean_activations: empty group");
    const auto& c = params.config;
    MeanField m = chunked_mean(group.size(), c.n_layers, c.seq_len, c.d_model,
                               [&](std::size_t i, std::vector<double>& acc) {
                                   const auto out = forward(params, group[i].tokens, InterventionSpec::none(), true);
                                   std::size_t k = 0;
                                   for (const auto& x : out.trace->resid_pre)
                                       for (Eigen::Index e = 0; e < x.size(); ++e) acc[k++] += x.data()[e];
                               });
    if (!group.empty()) {
        const auto& first = group[0];
        m.source = "(y=" + std::to_string(first.y) + ", a=" + std::to_string(first.a) + ")";
    }
    return m;
}

MeanField mean_activations(const ActivationDump& dump, std::uint32_t y, std::uint32_t a) {
    dump.validate();
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < dump.n; ++i)
        if (dump.labels[i] == y && dump.confounders[i] == a) rows.push_back(i);
    if (rows.empty())
        throw DataError("activation dump has no rows for group (y=" + std::to_string(y) + ", a=" + std::to_string(a) + ")");
    const std::size_t width = dump.n_layers * dump.seq_len * dump.d_model;
    MeanField m = chunked_mean(rows.size(), dump.n_layers, dump.seq_len, dump.d_model,
                               [&](std::size_t i, std::vector<double>& acc) {
                                   const float* src = dump.activations.data() + rows[i] * width;
                                   for (std::size_t k = 0; k < width; ++k) acc[k] += src[k];
                               });
    m.source = "dump (y=" + std::to_string(y) + ", a=" + std::to_string(a) + ")";
    return m;
}

std::vector<CandidateVector> diff_in_means(const MeanField& mu, const MeanField& nu) {
    check_same_shape(mu, nu);
    std::vector<CandidateVector> out;
    out.reserve(mu.n_layers * mu.seq_len);
    for (std::size_t l = 0; l < mu.n_layers; ++l)
        for (std::size_t t = 0; t < mu.seq_len; ++t) out.push_back(make_candidate(l + 1, t, mu.row(l, t) - nu.row(l, t)));
    return out;
}

VectorF ablate_vector(const VectorF& x, const VectorF& unit) {
    if (x.size() != unit.size()) throw ShapeError("ablate_vector: dimension mismatch");
    const double norm = unit.cast<double>().norm();
    if (!(std::abs(norm - 1.0) <= 1e-5))
        throw ContractError("ablate_vector: direction must have unit norm, got " + std::to_string(norm));
    return x - unit * unit.dot(x);
}

std::vector<MatrixF> ablate_field(const std::vector<MatrixF>& x, const SteeringField& field) {
    if (x.size() != field.n_layers) throw ShapeError("ablate_field: layer count mismatch");
    std::vector<MatrixF> out = x;
    for (std::size_t l = 0; l < x.size(); ++l) {
        auto& m = out[l];
        if (static_cast<std::size_t>(m.rows()) != field.seq_len || static_cast<std::size_t>(m.cols()) != field.d_model)
            throw ShapeError("ablate_field: activation shape mismatch at layer " + std::to_string(l + 1));
        for (std::size_t t = 0; t < field.seq_len; ++t) {
            if (field.masked(l, t)) continue;
            const auto r = field.row(l, t);
            const auto ti = static_cast<Eigen::Index>(t);
            const float c = m.row(ti).dot(r);
            m.row(ti) -= c * r;
        }
    }
    return out;
}

VectorF subtract_vector(const VectorF& x, const VectorF& r, float alpha) {
    if (x.size() != r.size()) throw ShapeError("subtract_vector: dimension mismatch");
    return x - alpha * r;
}

std::vector<CandidateVector> extract_candidates(const MeanField& over, const MeanField& under, std::size_t position) {
    check_same_shape(over, under);
    if (position >= over.seq_len) throw ShapeError("candidate position outside the sequence");
    std::vector<CandidateVector> out;
    out.reserve(over.n_layers);
    for (std::size_t l = 0; l < over.n_layers; ++l)
        out.push_back(make_candidate(l + 1, position, over.row(l, position) - under.row(l, position)));
    return out;
}

std::vector<CandidateVector> extract_candidates(const ModelParams& params, const GroupedDataset& over,
                                                const GroupedDataset& under, std::size_t position) {
    if (position >= params.config.seq_len) throw ShapeError("candidate position outside the sequence");
    return extract_candidates(mean_activations(params, over), mean_activations(params, under), position);
}

std::size_t select_best(const std::vector<LayerScore>& scores) {
    if (scores.empty()) throw SteeringError("no candidates to select from");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        const auto& s = scores[i];
        const auto& b = scores[best];
        const bool better = s.wga > b.wga || (s.wga == b.wga && (s.aga > b.aga || (s.aga == b.aga && s.layer < b.layer)));
        if (better) best = i;
    }
    return best;
}

SweepResult sweep_single_layer(const ModelParams& params, const std::vector<CandidateVector>& candidates,
                               const GroupedDataset& d_val) {
    if (std::none_of(candidates.begin(), candidates.end(), [](const auto& c) { return !c.degenerate; }))
        throw SteeringError("sweep: every candidate is degenerate");
    SweepResult result;
    result.profile = layer_profile(params, candidates, d_val).entries;
    const auto best = result.profile[select_best(result.profile)];
    result.chosen_layer = best.layer;
    for (const auto& c : candidates)
        if (!c.degenerate && c.layer == best.layer) {
            result.chosen = c;
            break;
        }
    return result;
}

SteeringField field_from_means(const MeanField& mu, const MeanField& nu) {
    check_same_shape(mu, nu);
    SteeringField f;
    f.n_layers = mu.n_layers;
    f.seq_len = mu.seq_len;
    f.d_model = mu.d_model;
    f.directions.assign(mu.means.size(), 0.0f);
    f.mask.assign(mu.n_layers * mu.seq_len, 1);
    for (std::size_t l = 0; l < mu.n_layers; ++l)
        for (std::size_t t = 0; t < mu.seq_len; ++t) {
            const auto c = make_candidate(l + 1, t, mu.row(l, t) - nu.row(l, t));
            if (c.degenerate) continue;
            f.mask[l * f.seq_len + t] = 0;
            std::copy(c.unit.data(), c.unit.data() + c.unit.size(),
                      f.directions.begin() + static_cast<std::ptrdiff_t>((l * f.seq_len + t) * f.d_model));
        }
    return f;
}

SteeringField build_full_field(const ModelParams& params, const GroupedDataset& over, const GroupedDataset& under) {
    return field_from_means(mean_activations(params, over), mean_activations(params, under));
}

SteeringField constant_field(const ModelConfig& config, const VectorF& unit) {
    if (static_cast<std::size_t>(unit.size()) != config.d_model) throw ShapeError("constant_field: dimension mismatch");
    SteeringField f;
    f.n_layers = config.n_layers;
    f.seq_len = config.seq_len;
    f.d_model = config.d_model;
    f.mask.assign(f.n_layers * f.seq_len, 0);
    f.directions.reserve(f.n_layers * f.seq_len * f.d_model);
    for (std::size_t k = 0; k < f.n_layers * f.seq_len; ++k) f.directions.insert(f.directions.end(), unit.data(), unit.data() + unit.size());
    return f;
}

ActivationDump capture_dump(const ModelParams& params, const GroupedDataset& dataset) {
    const auto& c = params.config;
    ActivationDump d;
    d.n = dataset.size();
    d.n_layers = c.n_layers;
    d.seq_len = c.seq_len;
    d.d_model = c.d_model;
    const std::size_t width = c.n_layers * c.seq_len * c.d_model;
    d.activations.resize(d.n * width);
    parallel_for(dataset.size(), [&](std::size_t i) {
        const auto out = forward(params, dataset[i].tokens, InterventionSpec::none(), true);
        float* dst = d.activations.data() + i * width;
        for (const auto& x : out.trace->resid_pre) dst = std::copy(x.data(), x.data() + x.size(), dst);
    });
    for (const auto& ex : dataset.examples()) {
        d.labels.push_back(ex.y);
        d.confounders.push_back(ex.a);
    }
    return d;
}

// ---------------------------------------------------------------------------
// STVC files

std::vector<std::uint8_t> serialize_vector_file(const VectorFile& file) {
    ByteWriter out;
    out.magic("STVC");
    out.u32(kFormatVersion);
    out.u8(static_cast<std::uint8_t>(file.mode));
    out.raw(file.model_digest);
    if (file.mode == VectorFile::Mode::single) {
        if (file.candidates.empty()) throw ContractError("vector file needs at least one candidate");
        const auto d = static_cast<std::uint64_t>(file.candidates.front().r.size());
        out.u32(static_cast<std::uint32_t>(file.candidates.size()));
        std::vector<float> rows;
        for (const auto& c : file.candidates) {
            if (static_cast<std::uint64_t>(c.r.size()) != d) throw ShapeError("candidates differ in dimension");
            out.u32(static_cast<std::uint32_t>(c.layer));
            out.u32(static_cast<std::uint32_t>(c.position));
            rows.insert(rows.end(), c.r.data(), c.r.data() + c.r.size());
        }
        const std::array<std::uint64_t, 2> dims{file.candidates.size(), d};
        write_tensor(out, dims, rows);
    } else {
        if (!file.field) throw ContractError("field vector file needs a field");
        const auto& f = *file.field;
        const std::array<std::uint64_t, 3> dims{f.n_layers, f.seq_len, f.d_model};
        write_tensor(out, dims, f.directions);
    }
    return out.take();
}

VectorFile deserialize_vector_file(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    in.expect_magic("STVC");
    const auto version_at = in.offset();
    if (const auto v = in.u32(); v != kFormatVersion)
        throw FormatError("unsupported STVC version " + std::to_string(v), version_at);
    const auto mode_at = in.offset();
    const auto mode = in.u8();
    if (mode > 1) throw FormatError("unknown STVC mode " + std::to_string(mode), mode_at);
    VectorFile file;
    file.mode = static_cast<VectorFile::Mode>(mode);
    const auto digest = in.raw(32);
    std::copy(digest.begin(), digest.end(), file.model_digest.begin());
    if (file.mode == VectorFile::Mode::single) {
        const auto count = in.u32();
        std::vector<std::pair<std::uint32_t, std::uint32_t>> slots(count);
        for (auto& s : slots) {
            s.first = in.u32();
            s.second = in.u32();
        }
        const auto tensor_at = in.offset();
        Tensor t = read_tensor(in);
        if (t.dims.size() != 2 || t.dims[0] != count)
            throw FormatError("candidate tensor must be [count x d_model]", tensor_at);
        const auto d = static_cast<Eigen::Index>(t.dims[1]);
        for (std::uint32_t k = 0; k < count; ++k) {
            VectorF r = Eigen::Map<const VectorF>(t.values.data() + k * t.dims[1], d);
            file.candidates.push_back(make_candidate(slots[k].first, slots[k].second, std::move(r)));
        }
    } else {
        const auto tensor_at = in.offset();
        Tensor t = read_tensor(in);
        if (t.dims.size() != 3) throw FormatError("field tensor must be [L x T x d_model]", tensor_at);
        SteeringField f;
        f.n_layers = t.dims[0];
        f.seq_len = t.dims[1];
        f.d_model = t.dims[2];
        f.directions = std::move(t.values);
        f.mask.assign(f.n_layers * f.seq_len, 0);
        for (std::size_t k = 0; k < f.mask.size(); ++k) {
            const auto* row = f.directions.data() + k * f.d_model;
            f.mask[k] = std::all_of(row, row + f.d_model, [](float v) { return v == 0.0f; }) ? 1 : 0;
        }
        try {
            f.validate();
        } catch (const ContractError& e) {
            throw FormatError(std::string("invalid field: ") + e.what(), tensor_at);
        }
        file.field = std::move(f);
    }
    in.expect_end();
    return file;
}

void save_vector_file(const std::filesystem::path& path, const VectorFile& file) {
    write_file(path, serialize_vector_file(file));
}

VectorFile load_vector_file(const std::filesystem::path& path, const Digest* expected) {
    VectorFile file = deserialize_vector_file(read_file(path));
    if (expected && *expected != file.model_digest)
        throw ArtifactMismatch("vector file " + path.string() + " was extracted from model " +
                               to_hex(file.model_digest) + ", not " + to_hex(*expected));
    return file;
}

} // namespace stv
