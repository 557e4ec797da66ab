#pragma once

#include <vector>

#include "stv/config.hpp"
#include "stv/data.hpp"
#include "stv/eval.hpp"
#include "stv/steering.hpp"
#include "stv/train.hpp"

namespace stv {

// Stage functions shared by the CLI and the end-to-end tests. Each one is a
// pure function of the run config and the previous stage's artifacts.

Splits make_splits(const RunConfig& config);

TrainResult train_model(const RunConfig& config, const Splits& splits);

// Over/under groups come from the train split (or val, per config).
struct GroupPair {
    GroupedDataset over;
    GroupedDataset under;
};
GroupPair steering_groups(const RunConfig& config, const GroupedDataset& source);

std::vector<CandidateVector> extract_for_config(const RunConfig& config, const ModelParams& params,
                                                const GroupedDataset& source);
SteeringField field_for_config(const RunConfig& config, const ModelParams& params, const GroupedDataset& source);

struct PipelineResult {
    Splits splits;
    TrainResult trained;
    std::vector<CandidateVector> candidates;
    SweepResult sweep;
    EvalReport baseline;  // test split, no intervention
    EvalReport steered;   // test split, swept single-layer ablation
    double seconds_data = 0, seconds_train = 0, seconds_extract = 0, seconds_sweep = 0, seconds_eval = 0;
};

// gen-data -> train -> extract -> sweep -> eval.
PipelineResult run_pipeline(const RunConfig& config);

} // namespace stv
