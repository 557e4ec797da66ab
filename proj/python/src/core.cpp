#include <pybind11/eigen.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "stv/config.hpp"
#include "stv/eval.hpp"
#include "stv/pipeline.hpp"
#include "stv/steering.hpp"
#include "stv/train.hpp"

namespace py = pybind11;
using namespace stv;

namespace {

py::dict trace_to_dict(const ForwardTrace& t) {
    py::dict d;
    d["resid_pre"] = t.resid_pre;
    d["resid_mid"] = t.resid_mid;
    d["resid_final"] = t.resid_final;
    d["logits"] = t.logits;
    return d;
}

InterventionSpec field_spec(SteeringField field) {
    return InterventionSpec::full_field(std::make_shared<const SteeringField>(std::move(field)));
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Difference-in-means bias vectors and directional ablation on a small transformer encoder";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", error);
    py::register_exception<ShapeError>(m, "ShapeError", error);
    py::register_exception<NumericError>(m, "NumericError", error);
    py::register_exception<DataError>(m, "DataError", error);
    py::register_exception<ContractError>(m, "ContractError", error);
    py::register_exception<SteeringError>(m, "SteeringError", error);
    py::register_exception<TrainingError>(m, "TrainingError", error);
    py::register_exception<ArtifactMismatch>(m, "ArtifactMismatch", error);
    py::register_exception<FormatError>(m, "FormatError", error);
    py::register_exception<IoError>(m, "IoError", error);

    // data
    py::class_<BiasConfig>(m, "BiasConfig")
        .def(py::init<>())
        .def_readwrite("n_train", &BiasConfig::n_train)
        .def_readwrite("n_val", &BiasConfig::n_val)
        .def_readwrite("n_test", &BiasConfig::n_test)
        .def_readwrite("rho", &BiasConfig::rho)
        .def_readwrite("eta", &BiasConfig::eta)
        .def_readwrite("n_classes", &BiasConfig::n_classes)
        .def_readwrite("n_confounders", &BiasConfig::n_confounders)
        .def_readwrite("vocab_size", &BiasConfig::vocab_size)
        .def_readwrite("seq_len", &BiasConfig::seq_len)
        .def_readwrite("seed", &BiasConfig::seed)
        .def("validate", &BiasConfig::validate);

    py::class_<Example>(m, "Example")
        .def_readonly("tokens", &Example::tokens)
        .def_readonly("y", &Example::y)
        .def_readonly("a", &Example::a)
        .def_readonly("g", &Example::g);

    py::class_<GroupedDataset>(m, "GroupedDataset")
        .def("__len__", &GroupedDataset::size)
        .def("__getitem__", [](const GroupedDataset& d, std::size_t i) {
            if (i >= d.size()) throw py::index_error();
            return d[i];
        })
        .def_property_readonly("examples", &GroupedDataset::examples)
        .def_property_readonly("n_classes", &GroupedDataset::n_classes)
        .def_property_readonly("n_confounders", &GroupedDataset::n_confounders)
        .def_property_readonly("group_table", &GroupedDataset::group_table)
        .def("group_name", &GroupedDataset::group_name)
        .def("digest", &GroupedDataset::digest)
        .def("to_text", &GroupedDataset::to_text);

    py::class_<Splits>(m, "Splits")
        .def_readonly("train", &Splits::train)
        .def_readonly("val", &Splits::val)
        .def_readonly("test", &Splits::test);

    m.def("generate", &generate, py::arg("config"));
    m.def("split", &split, py::arg("dataset"), py::arg("fractions"), py::arg("balanced_eval"), py::arg("seed"));
    m.def("select_group", &select_group, py::arg("dataset"), py::arg("y"), py::arg("a"));
    m.def("parse_dataset", &parse_dataset, py::arg("text"), py::arg("n_classes") = 2, py::arg("n_confounders") = 2);
    m.def("read_dataset", &read_dataset, py::arg("path"), py::arg("n_classes") = 2, py::arg("n_confounders") = 2);
    m.def("write_dataset", &write_dataset, py::arg("path"), py::arg("dataset"));

    // model
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("d_ff", &ModelConfig::d_ff)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("seq_len", &ModelConfig::seq_len)
        .def_readwrite("n_classes", &ModelConfig::n_classes)
        .def_readwrite("seed", &ModelConfig::seed)
        .def("validate", &ModelConfig::validate)
        .def(py::self == py::self);

    py::class_<ModelParams>(m, "ModelParams")
        .def_readonly("config", &ModelParams::config)
        .def_property_readonly("tok_emb", [](const ModelParams& p) { return p.tok_emb; })
        .def_property_readonly("pos_emb", [](const ModelParams& p) { return p.pos_emb; })
        .def_property_readonly("classifier", [](const ModelParams& p) { return p.classifier; })
        .def("digest", [](const ModelParams& p) { return to_hex(model_digest(p)); });

    m.def("init_params", &init_params, py::arg("config"));
    m.def("parameter_count", &parameter_count, py::arg("config"));

    py::class_<InterventionSpec>(m, "InterventionSpec")
        .def_static("none", &InterventionSpec::none)
        .def_static("single_global", &InterventionSpec::single_global, py::arg("direction"))
        .def_static("full_field", &field_spec, py::arg("field"))
        .def_static("subtract", &InterventionSpec::subtract, py::arg("direction"), py::arg("alpha") = 1.0f)
        .def_property_readonly("mode", [](const InterventionSpec& s) { return to_string(s.mode()); })
        .def("describe", &InterventionSpec::describe);

    m.def(
        "forward",
        [](const ModelParams& p, const std::vector<std::uint32_t>& tokens, const InterventionSpec& spec,
           bool capture) -> py::object {
            auto out = forward(p, tokens, spec, capture);
            if (!capture) return py::cast(out.logits);
            return trace_to_dict(*out.trace);
        },
        py::arg("params"), py::arg("tokens"), py::arg("intervention") = InterventionSpec::none(),
        py::arg("capture") = false);
    m.def("classify", &classify, py::arg("logits"));
    m.def("predict", &predict, py::arg("logits"));

    // train
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("beta1", &TrainConfig::beta1)
        .def_readwrite("beta2", &TrainConfig::beta2)
        .def_readwrite("epsilon", &TrainConfig::epsilon)
        .def_readwrite("weight_decay", &TrainConfig::weight_decay)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("shuffle", &TrainConfig::shuffle)
        .def("validate", &TrainConfig::validate);

    py::class_<TrainReport>(m, "TrainReport")
        .def_readonly("epoch_loss", &TrainReport::epoch_loss)
        .def_readonly("epoch_accuracy", &TrainReport::epoch_accuracy)
        .def_readonly("val_group_accuracy", &TrainReport::val_group_accuracy)
        .def_readonly("wall_seconds", &TrainReport::wall_seconds)
        .def("to_json", [](const TrainReport& r) { return to_json(r).dump(); });

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("params", &TrainResult::params)
        .def_readonly("report", &TrainResult::report);

    m.def("train_erm", &train_erm, py::arg("params"), py::arg("train"), py::arg("val"), py::arg("config"),
          py::call_guard<py::gil_scoped_release>());
    m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("params"));
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
    m.def("serialize_checkpoint", [](const ModelParams& p) {
        const auto b = serialize_checkpoint(p);
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
    });
    m.def("deserialize_checkpoint", [](const py::bytes& data) {
        const std::string s = data;
        return deserialize_checkpoint(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    });

    // steering
    py::class_<CandidateVector>(m, "CandidateVector")
        .def_readonly("layer", &CandidateVector::layer)
        .def_readonly("position", &CandidateVector::position)
        .def_readonly("r", &CandidateVector::r)
        .def_readonly("unit", &CandidateVector::unit)
        .def_readonly("norm", &CandidateVector::norm)
        .def_readonly("degenerate", &CandidateVector::degenerate);

    py::class_<LayerScore>(m, "LayerScore")
        .def_readonly("layer", &LayerScore::layer)
        .def_readonly("wga", &LayerScore::wga)
        .def_readonly("aga", &LayerScore::aga);

    py::class_<SweepResult>(m, "SweepResult")
        .def_readonly("profile", &SweepResult::profile)
        .def_readonly("chosen_layer", &SweepResult::chosen_layer)
        .def_readonly("chosen", &SweepResult::chosen);

    py::class_<SteeringField>(m, "SteeringField")
        .def_readonly("n_layers", &SteeringField::n_layers)
        .def_readonly("seq_len", &SteeringField::seq_len)
        .def_readonly("d_model", &SteeringField::d_model)
        .def_readonly("mask", &SteeringField::mask)
        .def("row", [](const SteeringField& f, std::size_t layer, std::size_t t) {
            if (layer < 1 || layer > f.n_layers || t >= f.seq_len) throw py::index_error();
            return Eigen::RowVectorXf(f.row(layer - 1, t));
        }, py::arg("layer"), py::arg("position"));

    m.def("ablate_vector", &ablate_vector, py::arg("x"), py::arg("unit"));
    m.def("subtract_vector", &subtract_vector, py::arg("x"), py::arg("r"), py::arg("alpha") = 1.0f);
    m.def("extract_candidates",
          py::overload_cast<const ModelParams&, const GroupedDataset&, const GroupedDataset&, std::size_t>(
              &extract_candidates),
          py::arg("params"), py::arg("over"), py::arg("under"), py::arg("position") = 0);
    m.def("sweep_single_layer", &sweep_single_layer, py::arg("params"), py::arg("candidates"), py::arg("val"),
          py::call_guard<py::gil_scoped_release>());
    m.def("build_full_field", &build_full_field, py::arg("params"), py::arg("over"), py::arg("under"));

    // eval
    py::class_<GroupAccuracy>(m, "GroupAccuracy")
        .def_readonly("group", &GroupAccuracy::group)
        .def_readonly("y", &GroupAccuracy::y)
        .def_readonly("a", &GroupAccuracy::a)
        .def_readonly("n", &GroupAccuracy::n)
        .def_readonly("correct", &GroupAccuracy::correct)
        .def_readonly("accuracy", &GroupAccuracy::accuracy);

    py::class_<EvalReport>(m, "EvalReport")
        .def_readonly("groups", &EvalReport::groups)
        .def_readonly("wga", &EvalReport::wga)
        .def_readonly("aga", &EvalReport::aga)
        .def_readonly("overall", &EvalReport::overall)
        .def_readonly("intervention", &EvalReport::intervention)
        .def_readonly("dataset_digest", &EvalReport::dataset_digest)
        .def("to_json", [](const EvalReport& r) { return to_json(r).dump(); });

    py::class_<MetricDelta>(m, "MetricDelta")
        .def_readonly("wga", &MetricDelta::wga)
        .def_readonly("aga", &MetricDelta::aga)
        .def_readonly("overall", &MetricDelta::overall)
        .def_readonly("groups", &MetricDelta::groups);

    py::class_<TableRow>(m, "TableRow")
        .def(py::init([](std::string dataset, std::string method, std::string training_required, double worst,
                         double average) {
                 return TableRow{std::move(dataset), std::move(method), std::move(training_required), worst, average};
             }),
             py::arg("dataset"), py::arg("method"), py::arg("training_required"), py::arg("worst"),
             py::arg("average"))
        .def_readonly("dataset", &TableRow::dataset)
        .def_readonly("method", &TableRow::method)
        .def_readonly("training_required", &TableRow::training_required)
        .def_readonly("worst", &TableRow::worst)
        .def_readonly("average", &TableRow::average);

    m.def("group_accuracies", &group_accuracies, py::arg("params"), py::arg("dataset"),
          py::arg("intervention") = InterventionSpec::none(), py::call_guard<py::gil_scoped_release>());
    m.def("compare", &compare, py::arg("baseline"), py::arg("steered"));
    m.def("table_row", &table_row, py::arg("dataset"), py::arg("method"), py::arg("report"),
          py::arg("training_required") = "no");
    m.def("render_table", &render_table, py::arg("rows"));

    // end-to-end
    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_static("from_json", [](const std::string& text) { return run_config_from_json(nlohmann::json::parse(text)); })
        .def_static("load", &load_run_config, py::arg("path"))
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("model", &RunConfig::model)
        .def_readwrite("data", &RunConfig::data)
        .def_readwrite("train", &RunConfig::train)
        .def_readwrite("balanced_test", &RunConfig::balanced_test)
        .def("validate", &RunConfig::validate)
        .def("to_json", [](const RunConfig& c) { return to_json(c).dump(); });

    py::class_<PipelineResult>(m, "PipelineResult")
        .def_readonly("splits", &PipelineResult::splits)
        .def_readonly("trained", &PipelineResult::trained)
        .def_readonly("candidates", &PipelineResult::candidates)
        .def_readonly("sweep", &PipelineResult::sweep)
        .def_readonly("baseline", &PipelineResult::baseline)
        .def_readonly("steered", &PipelineResult::steered);

    m.def("make_splits", &make_splits, py::arg("config"));
    m.def("run_pipeline", &run_pipeline, py::arg("config"), py::call_guard<py::gil_scoped_release>());
}
