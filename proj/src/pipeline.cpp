#include "stv/pipeline.hpp"

#include <chrono>

namespace stv {

namespace {

class Stopwatch {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

} // namespace

Splits make_splits(const RunConfig& config) {
    config.validate();
    return split(generate(config.data_config()), config.split_fractions(), config.balanced_test, config.split_seed());
}

TrainResult train_model(const RunConfig& config, const Splits& splits) {
    return train_erm(init_params(config.model_config()), splits.train, splits.val, config.train_config());
}

GroupPair steering_groups(const RunConfig& config, const GroupedDataset& source) {
    const auto [oy, oa] = config.over_group();
    const auto [uy, ua] = config.under_group();
    return {select_group(source, oy, oa), select_group(source, uy, ua)};
}

std::vector<CandidateVector> extract_for_config(const RunConfig& config, const ModelParams& params,
                                                const GroupedDataset& source) {
    const auto groups = steering_groups(config, source);
    return extract_candidates(params, groups.over, groups.under, config.steering.position);
}

SteeringField field_for_config(const RunConfig& config, const ModelParams& params, const GroupedDataset& source) {
    const auto groups = steering_groups(config, source);
    return build_full_field(params, groups.over, groups.under);
}

PipelineResult run_pipeline(const RunConfig& config) {
    PipelineResult r;
    Stopwatch clock;
    r.splits = make_splits(config);
    r.seconds_data = clock.lap();

    r.trained = train_model(config, r.splits);
    r.seconds_train = clock.lap();

    const auto& source = config.steering.use_validation_means ? r.splits.val : r.splits.train;
    r.candidates = extract_for_config(config, r.trained.params, source);
    r.seconds_extract = clock.lap();

    r.sweep = sweep_single_layer(r.trained.params, r.candidates, r.splits.val);
    r.seconds_sweep = clock.lap();

    r.baseline = group_accuracies(r.trained.params, r.splits.test, InterventionSpec::none());
    r.steered = group_accuracies(r.trained.params, r.splits.test, InterventionSpec::single_global(r.sweep.chosen.unit));
    r.seconds_eval = clock.lap();
    return r;
}

} // namespace stv
