#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stv/data.hpp"
#include "stv/io.hpp"
#include "stv/model.hpp"

namespace stv {

// Below this norm a difference vector is treated as zero and never normalized.
inline constexpr double kDegenerateNorm = 1e-8;

// Mean resid_pre activation per (layer, position).
struct MeanField {
    std::size_t n_layers = 0;
    std::size_t seq_len = 0;
    std::size_t d_model = 0;
    std::vector<float> means;  // [n_layers x seq_len x d_model]
    std::size_t n_samples = 0;
    std::string source;

    Eigen::Map<const Eigen::VectorXf> row(std::size_t layer0, std::size_t t) const {
        return {means.data() + (layer0 * seq_len + t) * d_model, static_cast<Eigen::Index>(d_model)};
    }
};

struct CandidateVector {
    std::size_t layer = 0;     // 1-based
    std::size_t position = 0;  // 0 = CLS
    VectorF r;                 // raw difference of means
    VectorF unit;              // r / |r|; zero when degenerate
    double norm = 0.0;
    bool degenerate = true;
};

// Builds the unit direction from r, flagging |r| < kDegenerateNorm.
CandidateVector make_candidate(std::size_t layer, std::size_t position, VectorF r);

MeanField mean_activations(const ModelParams& params, const GroupedDataset& group);
// Mean over dump rows with the given (label, confounder).
MeanField mean_activations(const ActivationDump& dump, std::uint32_t y, std::uint32_t a);

// r = mu - nu for every (layer, position), layer-major.
std::vector<CandidateVector> diff_in_means(const MeanField& mu, const MeanField& nu);

// x - unit (unit . x); unit must have norm 1 within 1e-5.
VectorF ablate_vector(const VectorF& x, const VectorF& unit);

// Row-wise ablation of L entries of [T x d_model] activations; masked rows pass through.
std::vector<MatrixF> ablate_field(const std::vector<MatrixF>& x, const SteeringField& field);

VectorF subtract_vector(const VectorF& x, const VectorF& r, float alpha = 1.0f);

// Candidates at one position for layers 1..L, over minus under.
std::vector<CandidateVector> extract_candidates(const ModelParams& params, const GroupedDataset& over,
                                                const GroupedDataset& under, std::size_t position = 0);
std::vector<CandidateVector> extract_candidates(const MeanField& over, const MeanField& under,
                                                std::size_t position = 0);

struct LayerScore {
    std::size_t layer = 0;
    double wga = 0.0;
    double aga = 0.0;
};

struct SweepResult {
    std::vector<LayerScore> profile;  // one entry per non-degenerate candidate, layer order
    std::size_t chosen_layer = 0;
    CandidateVector chosen;
};

// Picks the candidate with the highest validation WGA; ties go to higher AGA,
// then to the lower layer.
SweepResult sweep_single_layer(const ModelParams& params, const std::vector<CandidateVector>& candidates,
                               const GroupedDataset& d_val);
std::size_t select_best(const std::vector<LayerScore>& scores);

SteeringField field_from_means(const MeanField& mu, const MeanField& nu);
SteeringField build_full_field(const ModelParams& params, const GroupedDataset& over, const GroupedDataset& under);
SteeringField constant_field(const ModelConfig& config, const VectorF& unit);

ActivationDump capture_dump(const ModelParams& params, const GroupedDataset& dataset);

// STVC vector file:
//   "STVC" | u32 version=1 | u8 mode (0 = single, 1 = field) | 32-byte model digest
//   mode 0: u32 count K | K x (u32 layer, u32 position) | STVD [K x d_model] raw differences r
//   mode 1: STVD [L x T x d_model] unit rows, zero rows are masked
struct VectorFile {
    enum class Mode : std::uint8_t { single = 0, field = 1 };

    Mode mode = Mode::single;
    Digest model_digest{};
    std::vector<CandidateVector> candidates;
    std::optional<SteeringField> field;
};

std::vector<std::uint8_t> serialize_vector_file(const VectorFile& file);
VectorFile deserialize_vector_file(std::span<const std::uint8_t> bytes);
void save_vector_file(const std::filesystem::path& path, const VectorFile& file);
// Throws ArtifactMismatch when expected is given and differs from the stored digest.
VectorFile load_vector_file(const std::filesystem::path& path, const Digest* expected = nullptr);

} // namespace stv
