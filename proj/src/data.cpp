#include "stv/data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stv/io.hpp"
#include "stv/rng.hpp"

namespace stv {

void BiasConfig::validate() const {
    if (!(rho >= 0.5 && rho < 1.0)) throw ConfigError("rho must lie in [0.5, 1), got " + std::to_string(rho));
    if (!(eta >= 0.0 && eta < 0.5)) throw ConfigError("eta must lie in [0, 0.5), got " + std::to_string(eta));
    if (n_train < 4 || n_val < 4 || n_test < 4) throw ConfigError("n_train, n_val and n_test must each be >= 4");
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (n_confounders < 2) throw ConfigError("n_confounders must be >= 2");
    if (n_confounders < n_classes)
        throw ConfigError("n_confounders must be >= n_classes so every class has a matching confounder");
    if (seq_len < 4) throw ConfigError("seq_len must be >= 4 (CLS, confounder slot, one signal slot, one filler)");
    if (vocab_size < n_confounders + n_classes + 2)
        throw ConfigError("vocab_size " + std::to_string(vocab_size) + " cannot host " +
                          std::to_string(n_confounders) + " confounder ids, " + std::to_string(n_classes) +
                          " class ids and at least one filler id after the CLS id");
}

std::string BiasConfig::canonical() const {
    std::ostringstream s;
    s.precision(17);
    s << "bias-config n_train=" << n_train << " n_val=" << n_val << " n_test=" << n_test << " rho=" << rho
      << " eta=" << eta << " C=" << n_classes << " A=" << n_confounders << " V=" << vocab_size
      << " T=" << seq_len << " seed=" << seed;
    return s.str();
}

// ---------------------------------------------------------------------------

GroupedDataset::GroupedDataset(std::vector<Example> examples, std::size_t n_classes, std::size_t n_confounders,
                               std::string provenance)
    : examples_(std::move(examples)),
      n_classes_(n_classes),
      n_confounders_(n_confounders),
      group_table_(n_classes * n_confounders, 0),
      provenance_(std::move(provenance)) {
    if (n_classes < 1 || n_confounders < 1) throw DataError("dataset needs at least one class and confounder");
    const std::size_t len = examples_.empty() ? 0 : examples_.front().tokens.size();
    for (std::size_t i = 0; i < examples_.size(); ++i) {
        auto& ex = examples_[i];
        if (ex.y >= n_classes || ex.a >= n_confounders)
            throw DataError("example " + std::to_string(i) + " has out-of-range label or confounder");
        if (ex.tokens.size() != len) throw DataError("example " + std::to_string(i) + " has inconsistent length");
        if (std::find(ex.tokens.begin(), ex.tokens.end(), 0u) != ex.tokens.end())
            throw DataError("example " + std::to_string(i) + " uses the reserved CLS token id 0");
        ex.g = group_id(ex.y, ex.a);
        ++group_table_[ex.g];
    }
}

std::string GroupedDataset::group_name(std::uint32_t g) const {
    return "(y=" + std::to_string(group_class(g)) + ", a=" + std::to_string(group_confounder(g)) + ")";
}

std::string GroupedDataset::to_text() const {
    std::string out;
    out.reserve(examples_.size() * 48);
    for (const auto& ex : examples_) {
        out += std::to_string(ex.y);
        out += ' ';
        out += std::to_string(ex.a);
        for (auto t : ex.tokens) {
            out += ' ';
            out += std::to_string(t);
        }
        out += '\n';
    }
    return out;
}

std::string GroupedDataset::digest() const { return to_hex(sha256(to_text())); }

// ---------------------------------------------------------------------------

GroupedDataset generate(const BiasConfig& config) {
    config.validate();
    const TokenLayout layout{config.n_classes, config.n_confounders, config.vocab_size};
    const std::size_t n_tokens = config.seq_len - 1;
    const std::size_t n_signal_slots = config.seq_len - 3;  // positions [2, T-1)
    const std::uint32_t first_filler = layout.first_filler();
    const std::uint64_t n_fillers = config.vocab_size - first_filler;

    Rng rng(config.seed);
    std::vector<Example> examples(config.total());
    for (auto& ex : examples) {
        ex.y = static_cast<std::uint32_t>(rng.below(config.n_classes));
        if (rng.bernoulli(config.rho)) {
            ex.a = ex.y;
        } else {
            auto other = static_cast<std::uint32_t>(rng.below(config.n_confounders - 1));
            ex.a = other >= ex.y ? other + 1 : other;
        }
        ex.tokens.assign(n_tokens, 0);
        ex.tokens[0] = layout.confounder_token(ex.a);  // sequence position 1
        if (!rng.bernoulli(config.eta)) {
            const std::size_t pos = 2 + rng.below(n_signal_slots);
            ex.tokens[pos - 1] = layout.signal_token(ex.y);
        }
        for (auto& t : ex.tokens)
            if (t == 0) t = first_filler + static_cast<std::uint32_t>(rng.below(n_fillers));
    }
    return GroupedDataset(std::move(examples), config.n_classes, config.n_confounders,
                          to_hex(sha256(config.canonical())));
}

Splits split(const GroupedDataset& dataset, std::array<double, 3> fractions, bool balanced_eval,
             std::uint64_t seed) {
    for (double f : fractions)
        if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");

    const std::size_t n = dataset.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());

    const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));

    auto take = [&](std::size_t begin, std::size_t end) {
        std::vector<Example> out;
        out.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) out.push_back(dataset[order[i]]);
        return out;
    };
    const auto C = dataset.n_classes(), A = dataset.n_confounders();
    Splits s{GroupedDataset(take(0, n_train), C, A, dataset.provenance()),
             GroupedDataset(take(n_train, n_train + n_val), C, A, dataset.provenance()),
             GroupedDataset(take(n_train + n_val, n), C, A, dataset.provenance())};

    if (balanced_eval) {
        const auto& table = s.test.group_table();
        for (std::uint32_t g = 0; g < table.size(); ++g)
            if (table[g] == 0) throw DataError("group " + s.test.group_name(g) + " is empty in the test split");
        const std::size_t per_group = *std::min_element(table.begin(), table.end());
        std::vector<std::size_t> kept(table.size(), 0);
        std::vector<Example> balanced;
        balanced.reserve(per_group * table.size());
        for (const auto& ex : s.test.examples())
            if (kept[ex.g] < per_group) {
                ++kept[ex.g];
                balanced.push_back(ex);
            }
        s.test = GroupedDataset(std::move(balanced), C, A, dataset.provenance());
    }
    return s;
}

GroupedDataset select_group(const GroupedDataset& dataset, std::uint32_t y, std::uint32_t a) {
    if (y >= dataset.n_classes() || a >= dataset.n_confounders())
        throw DataError("group (y=" + std::to_string(y) + ", a=" + std::to_string(a) + ") does not exist");
    std::vector<Example> out;
    for (const auto& ex : dataset.examples())
        if (ex.y == y && ex.a == a) out.push_back(ex);
    if (out.empty())
        throw DataError("group (y=" + std::to_string(y) + ", a=" + std::to_string(a) + ") is empty");
    return GroupedDataset(std::move(out), dataset.n_classes(), dataset.n_confounders(), dataset.provenance());
}

// ---------------------------------------------------------------------------

void write_dataset(const std::filesystem::path& path, const GroupedDataset& dataset) {
    write_text_file(path, dataset.to_text());
}

GroupedDataset parse_dataset(const std::string& text, std::size_t n_classes, std::size_t n_confounders) {
    std::vector<Example> examples;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        long long y = -1, a = -1;
        if (!(fields >> y >> a) || y < 0 || a < 0)
            throw DataError("line " + std::to_string(line_no) + ": expected 'y a t1 ... t_{T-1}'");
        Example ex;
        ex.y = static_cast<std::uint32_t>(y);
        ex.a = static_cast<std::uint32_t>(a);
        long long t = 0;
        while (fields >> t) {
            if (t < 1 || t > 0xffffffffLL)
                throw DataError("line " + std::to_string(line_no) + ": token id out of range");
            ex.tokens.push_back(static_cast<std::uint32_t>(t));
        }
        if (!fields.eof()) throw DataError("line " + std::to_string(line_no) + ": non-integer field");
        examples.push_back(std::move(ex));
    }
    try {
        return GroupedDataset(std::move(examples), n_classes, n_confounders);
    } catch (const DataError& e) {
        throw DataError(std::string("dataset file: ") + e.what());
    }
}

GroupedDataset read_dataset(const std::filesystem::path& path, std::size_t n_classes, std::size_t n_confounders) {
    const auto bytes = read_file(path);
    return parse_dataset(std::string(bytes.begin(), bytes.end()), n_classes, n_confounders);
}

// ---------------------------------------------------------------------------

void ActivationDump::validate() const {
    if (labels.size() != n || confounders.size() != n)
        throw DataError("activation dump: label/confounder counts do not match N");
    if (activations.size() != n * n_layers * seq_len * d_model)
        throw ShapeError("activation dump: payload size does not match dims");
    for (float v : activations)
        if (!std::isfinite(v)) throw NumericError("activation dump contains non-finite values");
}

std::vector<std::uint8_t> serialize_dump(const ActivationDump& dump) {
    dump.validate();
    ByteWriter out;
    const std::array<std::uint64_t, 4> dims{dump.n, dump.n_layers, dump.seq_len, dump.d_model};
    write_tensor(out, dims, dump.activations);
    out.u64(dump.labels.size());
    for (auto v : dump.labels) out.u32(v);
    out.u64(dump.confounders.size());
    for (auto v : dump.confounders) out.u32(v);
    return out.take();
}

namespace {
std::vector<std::uint32_t> read_u32_array(ByteReader& in, const char* what) {
    const auto at = in.offset();
    const auto count = in.u64();
    if (count > in.remaining() / 4)
        throw FormatError(std::string("truncated ") + what + " array of length " + std::to_string(count), at);
    std::vector<std::uint32_t> v(count);
    for (auto& x : v) x = in.u32();
    return v;
}
} // namespace

ActivationDump deserialize_dump(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    const auto tensor_at = in.offset();
    Tensor t = read_tensor(in);
    if (t.dims.size() != 4) throw FormatError("activation dump must be 4-dimensional", tensor_at);
    ActivationDump d;
    d.n = t.dims[0];
    d.n_layers = t.dims[1];
    d.seq_len = t.dims[2];
    d.d_model = t.dims[3];
    d.activations = std::move(t.values);
    const auto labels_at = in.offset();
    d.labels = read_u32_array(in, "labels");
    const auto conf_at = in.offset();
    d.confounders = read_u32_array(in, "confounders");
    in.expect_end();
    if (d.labels.size() != d.n) throw FormatError("label count does not match N", labels_at);
    if (d.confounders.size() != d.n) throw FormatError("confounder count does not match N", conf_at);
    for (float v : d.activations)
        if (!std::isfinite(v)) throw NumericError("activation dump contains non-finite values");
    return d;
}

void export_dump(const ActivationDump& dump, const std::filesystem::path& path) {
    write_file(path, serialize_dump(dump));
}

ActivationDump import_dump(const std::filesystem::path& path) { return deserialize_dump(read_file(path)); }

} // namespace stv
