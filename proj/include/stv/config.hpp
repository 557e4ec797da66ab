#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "stv/data.hpp"
#include "stv/model.hpp"
#include "stv/train.hpp"

namespace stv {

enum class Orientation { majority_over, minority_over };

struct SteeringOptions {
    InterventionMode mode = InterventionMode::single_global;
    std::size_t position = 0;
    std::uint32_t target_class = 0;
    // Confounder of the underrepresented group; defaults to the first a != class.
    std::optional<std::uint32_t> minority_confounder;
    Orientation orientation = Orientation::majority_over;
    float alpha = 1.0f;
    bool use_validation_means = false;  // means from the train split unless set
};

// One file configures every stage. Stage seeds are derived from the root seed,
// so each stage can be rerun on its own.
struct RunConfig {
    std::uint64_t seed = 0;
    ModelConfig model;  // vocab_size, seq_len, n_classes are mirrored from data
    BiasConfig data;
    bool balanced_test = true;
    TrainConfig train;
    SteeringOptions steering;

    BiasConfig data_config() const;
    ModelConfig model_config() const;
    TrainConfig train_config() const;
    std::uint64_t split_seed() const;
    std::array<double, 3> split_fractions() const;

    std::uint32_t minority_confounder() const;
    // (y, a) of the over- and underrepresented groups for the target class.
    std::pair<std::uint32_t, std::uint32_t> over_group() const;
    std::pair<std::uint32_t, std::uint32_t> under_group() const;

    void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

Orientation parse_orientation(const std::string& text);
std::string to_string(Orientation orientation);

} // namespace stv
