#include "stv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include "stv/parallel.hpp"

namespace stv {

bool EvalReport::operator==(const EvalReport& o) const {
    if (groups.size() != o.groups.size()) return false;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& a = groups[i];
        const auto& b = o.groups[i];
        if (a.group != b.group || a.n != b.n || a.correct != b.correct || a.accuracy != b.accuracy) return false;
    }
    return wga == o.wga && aga == o.aga && overall == o.overall && intervention == o.intervention &&
           dataset_digest == o.dataset_digest;
}

EvalReport summarize(std::vector<GroupAccuracy> groups, std::string intervention, std::string dataset_digest) {
    if (groups.empty()) throw DataError("no groups to summarize");
    EvalReport r;
    r.wga = 1.0;
    double sum = 0.0;
    std::size_t n = 0, correct = 0;
    for (const auto& g : groups) {
        r.wga = std::min(r.wga, g.accuracy);
        sum += g.accuracy;
        n += g.n;
        correct += g.correct;
    }
    r.aga = sum / static_cast<double>(groups.size());
    r.overall = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
    r.groups = std::move(groups);
    r.intervention = std::move(intervention);
    r.dataset_digest = std::move(dataset_digest);
    return r;
}

EvalReport group_accuracies(const ModelParams& params, const GroupedDataset& dataset,
                            const InterventionSpec& intervention) {
    const auto& table = dataset.group_table();
    for (std::uint32_t g = 0; g < table.size(); ++g)
        if (table[g] == 0) throw DataError("evaluation group " + dataset.group_name(g) + " is empty");

    std::vector<std::uint8_t> hit(dataset.size(), 0);
    parallel_for(dataset.size(), [&](std::size_t i) {
        const auto& ex = dataset[i];
        hit[i] = predict(forward(params, ex.tokens, intervention).logits) == ex.y ? 1 : 0;
    });

    std::vector<GroupAccuracy> groups(table.size());
    for (std::uint32_t g = 0; g < table.size(); ++g) {
        groups[g].group = g;
        groups[g].y = dataset.group_class(g);
        groups[g].a = dataset.group_confounder(g);
        groups[g].n = table[g];
    }
    for (std::size_t i = 0; i < dataset.size(); ++i) groups[dataset[i].g].correct += hit[i];
    for (auto& g : groups) g.accuracy = static_cast<double>(g.correct) / static_cast<double>(g.n);
    return summarize(std::move(groups), intervention.describe(), dataset.digest());
}

LayerProfile layer_profile(const ModelParams& params, const std::vector<CandidateVector>& candidates,
                           const GroupedDataset& dataset) {
    LayerProfile profile;
    for (const auto& c : candidates) {
        if (c.degenerate) continue;
        const auto report = group_accuracies(params, dataset, InterventionSpec::single_global(c.unit));
        profile.entries.push_back({c.layer, report.wga, report.aga});
    }
    if (profile.entries.empty()) throw SteeringError("layer profile: every candidate is degenerate");
    std::stable_sort(profile.entries.begin(), profile.entries.end(),
                     [](const LayerScore& a, const LayerScore& b) { return a.layer < b.layer; });
    return profile;
}

MetricDelta compare(const EvalReport& baseline, const EvalReport& steered) {
    if (baseline.dataset_digest != steered.dataset_digest)
        throw ArtifactMismatch("cannot compare reports computed on different datasets");
    if (baseline.groups.size() != steered.groups.size())
        throw ArtifactMismatch("cannot compare reports with different group sets");
    MetricDelta d;
    d.wga = steered.wga - baseline.wga;
    d.aga = steered.aga - baseline.aga;
    d.overall = steered.overall - baseline.overall;
    for (std::size_t g = 0; g < baseline.groups.size(); ++g)
        d.groups.push_back(steered.groups[g].accuracy - baseline.groups[g].accuracy);
    return d;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string signed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.2f", v);
    return buf;
}

} // namespace

TableRow table_row(const std::string& dataset, const std::string& method, const EvalReport& report,
                   const std::string& training_required) {
    return {dataset, method, training_required, 100.0 * report.wga, 100.0 * report.aga};
}

std::string render_table(const std::vector<TableRow>& rows) {
    const std::vector<std::string> header{"Dataset", "Method", "Training Required?", "Worst", "Average"};
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) cells.push_back({r.dataset, r.method, r.training_required, fixed2(r.worst), fixed2(r.average)});

    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
    }
    std::ostringstream out;
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out << " | ";
            // text columns left-aligned, numbers right-aligned
            if (c < 3)
                out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
            else
                out << std::right << std::setw(static_cast<int>(width[c])) << row[c];
        }
        out << '\n';
    };
    emit(header);
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c) out << "-+-";
        out << std::string(width[c], '-');
    }
    out << '\n';
    for (const auto& row : cells) emit(row);
    return out.str();
}

std::string render_delta(const std::string& label, const MetricDelta& delta) {
    std::ostringstream out;
    out << label << ": worst " << signed2(100.0 * delta.wga) << ", average " << signed2(100.0 * delta.aga)
        << ", overall " << signed2(100.0 * delta.overall) << '\n';
    return out.str();
}

std::string render_profile(const LayerProfile& profile) {
    std::ostringstream out;
    out << "Layer |  Worst | Average\n";
    out << "------+--------+--------\n";
    for (const auto& e : profile.entries)
        out << std::setw(5) << e.layer << " | " << std::setw(6) << fixed2(100.0 * e.wga) << " | " << std::setw(7)
            << fixed2(100.0 * e.aga) << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const EvalReport& report) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : report.groups)
        groups.push_back({{"group", g.group}, {"y", g.y}, {"a", g.a}, {"n", g.n}, {"correct", g.correct},
                          {"accuracy", g.accuracy}});
    return {{"groups", groups},
            {"worst_group_accuracy", report.wga},
            {"average_group_accuracy", report.aga},
            {"overall_accuracy", report.overall},
            {"intervention", report.intervention},
            {"dataset_digest", report.dataset_digest}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    std::vector<GroupAccuracy> groups;
    for (const auto& g : j.at("groups"))
        groups.push_back({g.at("group").get<std::uint32_t>(), g.at("y").get<std::uint32_t>(),
                          g.at("a").get<std::uint32_t>(), g.at("n").get<std::size_t>(),
                          g.at("correct").get<std::size_t>(), g.at("accuracy").get<double>()});
    EvalReport r;
    r.groups = std::move(groups);
    r.wga = j.at("worst_group_accuracy").get<double>();
    r.aga = j.at("average_group_accuracy").get<double>();
    r.overall = j.at("overall_accuracy").get<double>();
    r.intervention = j.at("intervention").get<std::string>();
    r.dataset_digest = j.at("dataset_digest").get<std::string>();
    return r;
}

nlohmann::json to_json(const LayerProfile& profile) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : profile.entries)
        entries.push_back({{"layer", e.layer}, {"worst_group_accuracy", e.wga}, {"average_group_accuracy", e.aga}});
    return {{"layers", entries}};
}

nlohmann::json to_json(const MetricDelta& delta) {
    return {{"worst_group_accuracy", delta.wga},
            {"average_group_accuracy", delta.aga},
            {"overall_accuracy", delta.overall},
            {"groups", delta.groups}};
}

} // namespace stv
