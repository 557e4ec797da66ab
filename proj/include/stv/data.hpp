#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stv/common.hpp"

namespace stv {

struct Example {
    std::vector<std::uint32_t> tokens;  // T-1 data tokens, ids in [1, V)
    std::uint32_t y = 0;                // class
    std::uint32_t a = 0;                // confounder
    std::uint32_t g = 0;                // group id = y * A + a

    bool operator==(const Example&) const = default;
};

struct BiasConfig {
    std::size_t n_train = 8000;
    std::size_t n_val = 1000;
    std::size_t n_test = 2000;
    double rho = 0.95;  // P(a = y)
    double eta = 0.1;   // probability the class-signal token is dropped
    std::size_t n_classes = 2;
    std::size_t n_confounders = 2;
    std::size_t vocab_size = 32;
    std::size_t seq_len = 16;  // includes CLS, so examples carry seq_len - 1 tokens
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t total() const { return n_train + n_val + n_test; }
    // Canonical text form, hashed into dataset provenance.
    std::string canonical() const;
};

// Token layout (positions count the CLS slot as 0):
//   position 1           confounder token 1 + a
//   one of [2, T-1)      class-signal token 1 + A + y (dropped with probability eta)
//   everything else      filler tokens from [1 + A + C, V)
struct TokenLayout {
    std::size_t n_classes;
    std::size_t n_confounders;
    std::size_t vocab_size;

    std::uint32_t confounder_token(std::uint32_t a) const { return 1 + a; }
    std::uint32_t signal_token(std::uint32_t y) const { return static_cast<std::uint32_t>(1 + n_confounders + y); }
    std::uint32_t first_filler() const { return static_cast<std::uint32_t>(1 + n_confounders + n_classes); }
};

class GroupedDataset {
public:
    GroupedDataset() = default;
    // Recomputes g and the group table; throws DataError on invariant violations.
    GroupedDataset(std::vector<Example> examples, std::size_t n_classes, std::size_t n_confounders,
                   std::string provenance = {});

    const std::vector<Example>& examples() const { return examples_; }
    const Example& operator[](std::size_t i) const { return examples_[i]; }
    std::size_t size() const { return examples_.size(); }
    bool empty() const { return examples_.empty(); }

    std::size_t n_classes() const { return n_classes_; }
    std::size_t n_confounders() const { return n_confounders_; }
    std::size_t n_groups() const { return n_classes_ * n_confounders_; }
    const std::vector<std::size_t>& group_table() const { return group_table_; }
    const std::string& provenance() const { return provenance_; }

    std::uint32_t group_id(std::uint32_t y, std::uint32_t a) const {
        return static_cast<std::uint32_t>(y * n_confounders_ + a);
    }
    std::uint32_t group_class(std::uint32_t g) const { return static_cast<std::uint32_t>(g / n_confounders_); }
    std::uint32_t group_confounder(std::uint32_t g) const { return static_cast<std::uint32_t>(g % n_confounders_); }
    bool is_majority(std::uint32_t g) const { return group_class(g) == group_confounder(g); }
    std::string group_name(std::uint32_t g) const;

    // Serialized line format (see write_dataset); its sha256 identifies the dataset.
    std::string to_text() const;
    std::string digest() const;

    bool operator==(const GroupedDataset& other) const { return examples_ == other.examples_; }

private:
    std::vector<Example> examples_;
    std::size_t n_classes_ = 0;
    std::size_t n_confounders_ = 0;
    std::vector<std::size_t> group_table_;
    std::string provenance_;
};

GroupedDataset generate(const BiasConfig& config);

struct Splits {
    GroupedDataset train;
    GroupedDataset val;
    GroupedDataset test;
};

// Shuffles with seed, then partitions. With balanced_eval the test part is
// cut down to min-group-count examples per group (first ones in shuffled order).
Splits split(const GroupedDataset& dataset, std::array<double, 3> fractions, bool balanced_eval,
             std::uint64_t seed);

GroupedDataset select_group(const GroupedDataset& dataset, std::uint32_t y, std::uint32_t a);

// Line-delimited "y a t1 t2 ... t_{T-1}" records.
void write_dataset(const std::filesystem::path& path, const GroupedDataset& dataset);
GroupedDataset read_dataset(const std::filesystem::path& path, std::size_t n_classes, std::size_t n_confounders);
GroupedDataset parse_dataset(const std::string& text, std::size_t n_classes, std::size_t n_confounders);

// Residual-stream activations at resid_pre for N examples.
struct ActivationDump {
    std::uint64_t n = 0, n_layers = 0, seq_len = 0, d_model = 0;
    std::vector<float> activations;  // [n x n_layers x seq_len x d_model]
    std::vector<std::uint32_t> labels;
    std::vector<std::uint32_t> confounders;

    void validate() const;
    bool operator==(const ActivationDump&) const = default;
};

// STVD-framed [N, L, T, d_model] tensor, then u64 count + u32 labels, u64 count + u32 confounders.
std::vector<std::uint8_t> serialize_dump(const ActivationDump& dump);
ActivationDump deserialize_dump(std::span<const std::uint8_t> bytes);
void export_dump(const ActivationDump& dump, const std::filesystem::path& path);
ActivationDump import_dump(const std::filesystem::path& path);

} // namespace stv
