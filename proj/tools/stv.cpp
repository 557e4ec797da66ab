// stv: command-line driver for the bias-vector pipeline.
//
//   stv gen-data    --config cfg.json --out run/
//   stv train       --config cfg.json --data run/ --out run/
//   stv extract     --config cfg.json --checkpoint run/model.stvp --data run/train.txt --out run/
//   stv sweep       --config cfg.json --checkpoint run/model.stvp --candidates run/candidates.stvc --data run/val.txt --out run/
//   stv eval        --config cfg.json --checkpoint run/model.stvp --data run/test.txt [--vector run/chosen.stvc --mode single] --out run/
//   stv profile     --config cfg.json --checkpoint run/model.stvp --candidates run/candidates.stvc --data run/test.txt --out run/
//   stv export-dump --config cfg.json --checkpoint run/model.stvp --data run/train.txt --out run/train.stvd
//   stv import-dump --config cfg.json --dump run/train.stvd --out run/
//
// Exit codes: 0 ok, 2 config/input error, 3 training or numeric error,
// 4 artifact mismatch, 5 I/O or format error.

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "stv/config.hpp"
#include "stv/eval.hpp"
#include "stv/pipeline.hpp"

namespace fs = std::filesystem;
using namespace stv;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kTraining = 3, kMismatch = 4, kIo = 5 };

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    std::string data;
    std::string checkpoint;
    std::string candidates;
    std::string vector;
    std::string dump;
    std::string mode;
    std::optional<float> alpha;
    std::optional<std::size_t> position;
    std::optional<std::uint32_t> target_class;
    std::string orientation;
    std::optional<std::size_t> layer;
    std::string compare_with;
    std::string label;
};

RunConfig effective_config(const Options& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    if (o.seed) c.seed = *o.seed;
    if (!o.mode.empty()) c.steering.mode = parse_intervention_mode(o.mode);
    if (o.alpha) c.steering.alpha = *o.alpha;
    if (o.position) c.steering.position = *o.position;
    if (o.target_class) c.steering.target_class = *o.target_class;
    if (!o.orientation.empty()) c.steering.orientation = parse_orientation(o.orientation);
    c.validate();
    return c;
}

fs::path out_dir(const Options& o) {
    fs::path dir(o.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

GroupedDataset load_data(const RunConfig& c, const std::string& path) {
    if (path.empty()) throw ConfigError("--data is required");
    return read_dataset(path, c.data.n_classes, c.data.n_confounders);
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

nlohmann::json candidate_json(const CandidateVector& c) {
    return {{"layer", c.layer}, {"position", c.position}, {"norm", c.norm}, {"degenerate", c.degenerate}};
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& o) {
    const RunConfig c = effective_config(o);
    const auto splits = make_splits(c);
    const auto dir = out_dir(o);
    write_dataset(dir / "train.txt", splits.train);
    write_dataset(dir / "val.txt", splits.val);
    write_dataset(dir / "test.txt", splits.test);
    write_json(dir / "config.json", to_json(c));

    nlohmann::json manifest;
    manifest["provenance"] = splits.train.provenance();
    manifest["n_classes"] = c.data.n_classes;
    manifest["n_confounders"] = c.data.n_confounders;
    manifest["rho"] = c.data.rho;
    std::size_t total = 0, minority = 0;
    for (const auto& [name, ds] : {std::pair<const char*, const GroupedDataset*>{"train", &splits.train},
                                   {"val", &splits.val},
                                   {"test", &splits.test}}) {
        nlohmann::json groups = nlohmann::json::array();
        for (std::uint32_t g = 0; g < ds->n_groups(); ++g) {
            groups.push_back({{"group", g}, {"y", ds->group_class(g)}, {"a", ds->group_confounder(g)},
                              {"count", ds->group_table()[g]}, {"majority", ds->is_majority(g)}});
            if (std::string(name) != "test") {
                total += ds->group_table()[g];
                if (!ds->is_majority(g)) minority += ds->group_table()[g];
            }
        }
        manifest["splits"][name] = {{"size", ds->size()}, {"digest", ds->digest()}, {"groups", groups}};
    }
    manifest["minority_fraction_train_val"] = static_cast<double>(minority) / static_cast<double>(total);
    write_json(dir / "manifest.json", manifest);
    std::cout << "wrote " << splits.train.size() << "/" << splits.val.size() << "/" << splits.test.size()
              << " examples to " << dir << "\n";
    return kOk;
}

int cmd_train(const Options& o) {
    const RunConfig c = effective_config(o);
    const fs::path data_dir = o.data.empty() ? fs::path(o.out) : fs::path(o.data);
    Splits splits;
    splits.train = read_dataset(data_dir / "train.txt", c.data.n_classes, c.data.n_confounders);
    splits.val = read_dataset(data_dir / "val.txt", c.data.n_classes, c.data.n_confounders);
    const auto result = train_model(c, splits);
    const auto dir = out_dir(o);
    save_checkpoint(dir / "model.stvp", result.params);
    write_json(dir / "train_report.json", to_json(result.report));
    std::cerr << "trained " << c.train.epochs << " epochs in " << result.report.wall_seconds << " s, final loss "
              << (result.report.epoch_loss.empty() ? 0.0 : result.report.epoch_loss.back()) << "\n";
    std::cout << "model digest " << to_hex(model_digest(result.params)) << "\n";
    return kOk;
}

int cmd_extract(const Options& o) {
    const RunConfig c = effective_config(o);
    const auto params = load_checkpoint(o.checkpoint);
    const auto data = load_data(c, o.data);
    const auto dir = out_dir(o);
    VectorFile file;
    file.model_digest = model_digest(params);
    if (c.steering.mode == InterventionMode::full_field) {
        file.mode = VectorFile::Mode::field;
        file.field = field_for_config(c, params, data);
        save_vector_file(dir / "field.stvc", file);
        std::cout << "wrote full steering field to " << (dir / "field.stvc") << "\n";
        return kOk;
    }
    file.candidates = extract_for_config(c, params, data);
    save_vector_file(dir / "candidates.stvc", file);
    for (const auto& cand : file.candidates)
        std::cout << "layer " << cand.layer << " position " << cand.position << " norm " << cand.norm
                  << (cand.degenerate ? " (degenerate)" : "") << "\n";
    return kOk;
}

int cmd_sweep(const Options& o) {
    const RunConfig c = effective_config(o);
    const auto params = load_checkpoint(o.checkpoint);
    const auto digest = model_digest(params);
    const auto file = load_vector_file(o.candidates, &digest);
    if (file.mode != VectorFile::Mode::single) throw ConfigError("sweep needs a single-vector candidate file");
    const auto val = load_data(c, o.data);
    const auto result = sweep_single_layer(params, file.candidates, val);
    const auto dir = out_dir(o);

    VectorFile chosen{VectorFile::Mode::single, digest, {result.chosen}, std::nullopt};
    save_vector_file(dir / "chosen.stvc", chosen);
    nlohmann::json j;
    j["chosen_layer"] = result.chosen_layer;
    j["chosen"] = candidate_json(result.chosen);
    j["profile"] = to_json(LayerProfile{result.profile})["layers"];
    j["model_digest"] = to_hex(digest);
    j["dataset_digest"] = val.digest();
    write_json(dir / "sweep.json", j);
    std::cout << render_profile(LayerProfile{result.profile}) << "chosen layer " << result.chosen_layer << "\n";
    return kOk;
}

int cmd_eval(const Options& o) {
    const RunConfig c = effective_config(o);
    const auto params = load_checkpoint(o.checkpoint);
    const auto digest = model_digest(params);
    const auto data = load_data(c, o.data);
    const InterventionMode mode = o.mode.empty() && o.vector.empty() ? InterventionMode::none : c.steering.mode;

    InterventionSpec spec = InterventionSpec::none();
    if (mode != InterventionMode::none) {
        if (o.vector.empty()) throw ConfigError("--vector is required for mode " + to_string(mode));
        const auto file = load_vector_file(o.vector, &digest);
        if (mode == InterventionMode::full_field) {
            if (file.mode != VectorFile::Mode::field) throw ConfigError("mode full needs a field vector file");
            spec = InterventionSpec::full_field(std::make_shared<const SteeringField>(*file.field));
        } else {
            if (file.mode != VectorFile::Mode::single) throw ConfigError("mode " + to_string(mode) + " needs a single-vector file");
            const CandidateVector* pick = nullptr;
            if (o.layer) {
                for (const auto& cand : file.candidates)
                    if (cand.layer == *o.layer) pick = &cand;
                if (!pick) throw ConfigError("vector file has no candidate for layer " + std::to_string(*o.layer));
            } else if (file.candidates.size() == 1) {
                pick = &file.candidates.front();
            } else {
                throw ConfigError("vector file holds several candidates; pass --layer");
            }
            if (pick->degenerate) throw SteeringError("chosen candidate is degenerate");
            spec = mode == InterventionMode::subtract ? InterventionSpec::subtract(pick->unit, c.steering.alpha)
                                                      : InterventionSpec::single_global(pick->unit);
        }
    }
    const auto report = group_accuracies(params, data, spec);
    const auto dir = out_dir(o);
    write_json(dir / "report.json", to_json(report));
    const std::string label = o.label.empty() ? (mode == InterventionMode::none ? "ERM" : spec.describe()) : o.label;
    std::string text = render_table({table_row("synthetic", label, report)});
    if (!o.compare_with.empty()) {
        const auto bytes = read_file(o.compare_with);
        const auto baseline = eval_report_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
        const auto delta = compare(baseline, report);
        text += render_delta("delta vs " + o.compare_with, delta);
        write_json(dir / "delta.json", to_json(delta));
    }
    write_text_file(dir / "report.txt", text);
    std::cout << text;
    return kOk;
}

int cmd_profile(const Options& o) {
    const RunConfig c = effective_config(o);
    const auto params = load_checkpoint(o.checkpoint);
    const auto digest = model_digest(params);
    const auto file = load_vector_file(o.candidates, &digest);
    if (file.mode != VectorFile::Mode::single) throw ConfigError("profile needs a single-vector candidate file");
    const auto data = load_data(c, o.data);
    const auto profile = layer_profile(params, file.candidates, data);
    const auto dir = out_dir(o);
    write_json(dir / "profile.json", to_json(profile));
    write_text_file(dir / "profile.txt", render_profile(profile));
    std::cout << render_profile(profile);
    return kOk;
}

int cmd_export_dump(const Options& o) {
    const RunConfig c = effective_config(o);
    const auto params = load_checkpoint(o.checkpoint);
    const auto data = load_data(c, o.data);
    if (o.out.empty() || o.out == ".") throw ConfigError("export-dump needs --out <file>");
    const fs::path path(o.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    export_dump(capture_dump(params, data), path);
    std::cout << "wrote " << data.size() << " activation rows to " << path << "\n";
    return kOk;
}

int cmd_import_dump(const Options& o) {
    const RunConfig c = effective_config(o);
    if (o.dump.empty()) throw ConfigError("--dump is required");
    const auto dump = import_dump(o.dump);
    VectorFile file;
    if (!o.checkpoint.empty()) {
        const auto params = load_checkpoint(o.checkpoint);
        if (dump.n_layers != params.config.n_layers || dump.seq_len != params.config.seq_len ||
            dump.d_model != params.config.d_model)
            throw ArtifactMismatch("activation dump shape does not match the checkpoint");
        file.model_digest = model_digest(params);
    } else {
        file.model_digest = sha256(read_file(o.dump));
    }
    const auto [oy, oa] = c.over_group();
    const auto [uy, ua] = c.under_group();
    const auto over = mean_activations(dump, oy, oa);
    const auto under = mean_activations(dump, uy, ua);
    const auto dir = out_dir(o);
    if (c.steering.mode == InterventionMode::full_field) {
        file.mode = VectorFile::Mode::field;
        file.field = field_from_means(over, under);
        save_vector_file(dir / "field.stvc", file);
        return kOk;
    }
    file.candidates = extract_candidates(over, under, c.steering.position);
    save_vector_file(dir / "candidates.stvc", file);
    for (const auto& cand : file.candidates)
        std::cout << "layer " << cand.layer << " norm " << cand.norm << (cand.degenerate ? " (degenerate)" : "") << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bias-vector extraction and directional ablation for transformer classifiers"};
    app.require_subcommand(1);
    Options o;

    auto common = [&o](CLI::App* sub) {
        sub->add_option("--config", o.config, "Run config (JSON)");
        sub->add_option("--seed", o.seed, "Root seed override");
        sub->add_option("--out", o.out, "Output directory (file for export-dump)");
    };
    auto steering = [&o](CLI::App* sub) {
        sub->add_option("--mode", o.mode, "none, single, full or subtract");
        sub->add_option("--alpha", o.alpha, "Subtraction scale");
        sub->add_option("--position", o.position, "Token position for candidates (0 = CLS)");
        sub->add_option("--class", o.target_class, "Class whose groups define the bias vector");
        sub->add_option("--orientation", o.orientation, "majority_over or minority_over");
    };

    auto* gen = app.add_subcommand("gen-data", "Generate train/val/test splits");
    common(gen);
    auto* train = app.add_subcommand("train", "Train the ERM baseline");
    common(train);
    train->add_option("--data", o.data, "Directory holding train.txt and val.txt (default: --out)");
    auto* extract = app.add_subcommand("extract", "Extract candidate bias vectors");
    common(extract);
    steering(extract);
    extract->add_option("--checkpoint", o.checkpoint, "Model checkpoint (STVP)")->required();
    extract->add_option("--data", o.data, "Dataset file the group means come from")->required();
    auto* sweep = app.add_subcommand("sweep", "Select the best single-layer candidate on validation data");
    common(sweep);
    sweep->add_option("--checkpoint", o.checkpoint, "Model checkpoint (STVP)")->required();
    sweep->add_option("--candidates", o.candidates, "Candidate vectors (STVC)")->required();
    sweep->add_option("--data,--val-data", o.data)->required();
    auto* eval = app.add_subcommand("eval", "Group accuracies with or without an intervention");
    common(eval);
    steering(eval);
    eval->add_option("--checkpoint", o.checkpoint, "Model checkpoint (STVP)")->required();
    eval->add_option("--data", o.data, "Dataset file")->required();
    eval->add_option("--vector", o.vector, "STVC vector file");
    eval->add_option("--layer", o.layer, "Candidate layer when the vector file holds several");
    eval->add_option("--compare", o.compare_with, "Baseline report.json to diff against");
    eval->add_option("--label", o.label, "Method label for the table");
    auto* profile = app.add_subcommand("profile", "Per-layer WGA/AGA under single-layer ablation");
    common(profile);
    profile->add_option("--checkpoint", o.checkpoint, "Model checkpoint (STVP)")->required();
    profile->add_option("--candidates", o.candidates, "Candidate vectors (STVC)")->required();
    profile->add_option("--data", o.data, "Dataset file")->required();
    auto* exp = app.add_subcommand("export-dump", "Write resid_pre activations of a dataset (STVD)");
    common(exp);
    exp->add_option("--checkpoint", o.checkpoint, "Model checkpoint (STVP)")->required();
    exp->add_option("--data", o.data, "Dataset file")->required();
    auto* imp = app.add_subcommand("import-dump", "Extract candidates from an external activation dump");
    common(imp);
    steering(imp);
    imp->add_option("--dump", o.dump, "Activation dump (STVD)")->required();
    imp->add_option("--checkpoint", o.checkpoint, "Checkpoint to stamp and shape-check against");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (*gen) return cmd_gen_data(o);
        if (*train) return cmd_train(o);
        if (*extract) return cmd_extract(o);
        if (*sweep) return cmd_sweep(o);
        if (*eval) return cmd_eval(o);
        if (*profile) return cmd_profile(o);
        if (*exp) return cmd_export_dump(o);
        if (*imp) return cmd_import_dump(o);
    } catch (const ArtifactMismatch& e) {
        std::cerr << "artifact mismatch: " << e.what() << "\n";
        return kMismatch;
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return kTraining;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kTraining;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kIo;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    }
    return kConfig;
}
