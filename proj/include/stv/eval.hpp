#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stv/data.hpp"
#include "stv/model.hpp"
#include "stv/steering.hpp"

namespace stv {

struct GroupAccuracy {
    std::uint32_t group = 0;
    std::uint32_t y = 0;
    std::uint32_t a = 0;
    std::size_t n = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
};

struct EvalReport {
    std::vector<GroupAccuracy> groups;
    double wga = 0.0;      // min over groups
    double aga = 0.0;      // unweighted mean over groups
    double overall = 0.0;  // sample-weighted
    std::string intervention;
    std::string dataset_digest;

    bool operator==(const EvalReport&) const;
};

// Metrics from per-group accuracies alone (no model); used by the sweep tests.
EvalReport summarize(std::vector<GroupAccuracy> groups, std::string intervention = {}, std::string dataset_digest = {});

// Throws DataError naming the first empty group.
EvalReport group_accuracies(const ModelParams& params, const GroupedDataset& dataset,
                            const InterventionSpec& intervention);

struct LayerProfile {
    std::vector<LayerScore> entries;  // ascending layer
};

LayerProfile layer_profile(const ModelParams& params, const std::vector<CandidateVector>& candidates,
                           const GroupedDataset& dataset);

struct MetricDelta {
    double wga = 0.0;
    double aga = 0.0;
    double overall = 0.0;
    std::vector<double> groups;
};

// steered - baseline; throws ArtifactMismatch when the dataset digests differ.
MetricDelta compare(const EvalReport& baseline, const EvalReport& steered);

// One row of a worst/average accuracy table; values in percent.
struct TableRow {
    std::string dataset;
    std::string method;
    std::string training_required;
    double worst = 0.0;
    double average = 0.0;
};

TableRow table_row(const std::string& dataset, const std::string& method, const EvalReport& report,
                   const std::string& training_required = "no");
std::string render_table(const std::vector<TableRow>& rows);
std::string render_delta(const std::string& label, const MetricDelta& delta);
std::string render_profile(const LayerProfile& profile);

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LayerProfile& profile);
nlohmann::json to_json(const MetricDelta& delta);

} // namespace stv
