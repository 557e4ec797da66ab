#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "stv/data.hpp"
#include "stv/io.hpp"
#include "stv/model.hpp"

namespace stv {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW style)
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate() const;
};

struct CrossEntropy {
    float loss = 0.0f;
    VectorF grad;  // softmax(logits) - onehot(y)
};

CrossEntropy cross_entropy(const VectorF& logits, std::uint32_t y);

struct TrainReport {
    std::vector<double> epoch_loss;      // mean pre-update loss per epoch
    std::vector<double> epoch_accuracy;  // train accuracy of the same forward passes
    std::vector<double> val_group_accuracy;  // per group id; NaN for groups absent from val
    double wall_seconds = 0.0;

    // Ignores wall time.
    bool operator==(const TrainReport& other) const;
};

// Leaves wall time out so identical runs serialize identically.
nlohmann::json to_json(const TrainReport& report);

struct TrainResult {
    ModelParams params;
    TrainReport report;
};

// Adam on mean cross-entropy. Each batch is cut into fixed 16-example chunks
// whose gradients are summed in chunk order, so results do not depend on the
// number of worker threads.
TrainResult train_erm(ModelParams params, const GroupedDataset& train, const GroupedDataset& val,
                      const TrainConfig& config);

// STVP checkpoint:
//   "STVP" | u32 version=1 | u64 length + ModelConfig JSON | u32 tensor count |
//   tensors in visit_tensors order, each STVD-framed as [rows x cols]
std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

// sha256 of the serialized checkpoint; stamped into vector files.
Digest model_digest(const ModelParams& params);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

} // namespace stv
