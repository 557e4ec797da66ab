#include "stv/config.hpp"

#include "stv/io.hpp"
#include "stv/rng.hpp"

namespace stv {

Orientation parse_orientation(const std::string& text) {
    if (text == "majority_over" || text == "majority") return Orientation::majority_over;
    if (text == "minority_over" || text == "minority") return Orientation::minority_over;
    throw ConfigError("unknown orientation '" + text + "' (expected majority_over or minority_over)");
}

std::string to_string(Orientation orientation) {
    return orientation == Orientation::majority_over ? "majority_over" : "minority_over";
}

BiasConfig RunConfig::data_config() const {
    BiasConfig c = data;
    c.seed = derive_seed(seed, "data");
    return c;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig c = model;
    c.vocab_size = data.vocab_size;
    c.seq_len = data.seq_len;
    c.n_classes = data.n_classes;
    c.seed = derive_seed(seed, "init");
    return c;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig c = train;
    c.seed = derive_seed(seed, "train");
    return c;
}

std::uint64_t RunConfig::split_seed() const { return derive_seed(seed, "split"); }

std::array<double, 3> RunConfig::split_fractions() const {
    const auto n = static_cast<double>(data.total());
    return {static_cast<double>(data.n_train) / n, static_cast<double>(data.n_val) / n,
            1.0 - static_cast<double>(data.n_train) / n - static_cast<double>(data.n_val) / n};
}

std::uint32_t RunConfig::minority_confounder() const {
    if (steering.minority_confounder) return *steering.minority_confounder;
    return steering.target_class == 0 ? 1u : 0u;
}

std::pair<std::uint32_t, std::uint32_t> RunConfig::over_group() const {
    const auto y = steering.target_class;
    return {y, steering.orientation == Orientation::majority_over ? y : minority_confounder()};
}

std::pair<std::uint32_t, std::uint32_t> RunConfig::under_group() const {
    const auto y = steering.target_class;
    return {y, steering.orientation == Orientation::majority_over ? minority_confounder() : y};
}

void RunConfig::validate() const {
    data.validate();
    model_config().validate();
    train.validate();
    if (steering.target_class >= data.n_classes) throw ConfigError("steering class out of range");
    const auto a = minority_confounder();
    if (a >= data.n_confounders || a == steering.target_class)
        throw ConfigError("minority confounder must differ from the class and lie in [0, n_confounders)");
    if (steering.position >= data.seq_len) throw ConfigError("steering position outside the sequence");
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        read_opt(j, "seed", c.seed);
        if (j.contains("model")) {
            const auto& m = j.at("model");
            for (const char* mirrored : {"vocab_size", "seq_len", "n_classes", "seed"})
                if (m.contains(mirrored))
                    throw ConfigError(std::string("model.") + mirrored + " is derived; set it under data/seed instead");
            read_opt(m, "n_layers", c.model.n_layers);
            read_opt(m, "d_model", c.model.d_model);
            read_opt(m, "n_heads", c.model.n_heads);
            read_opt(m, "d_ff", c.model.d_ff);
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            read_opt(d, "n_train", c.data.n_train);
            read_opt(d, "n_val", c.data.n_val);
            read_opt(d, "n_test", c.data.n_test);
            read_opt(d, "rho", c.data.rho);
            read_opt(d, "eta", c.data.eta);
            read_opt(d, "n_classes", c.data.n_classes);
            read_opt(d, "n_confounders", c.data.n_confounders);
            read_opt(d, "vocab_size", c.data.vocab_size);
            read_opt(d, "seq_len", c.data.seq_len);
            read_opt(d, "balanced_test", c.balanced_test);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            read_opt(t, "epochs", c.train.epochs);
            read_opt(t, "batch_size", c.train.batch_size);
            read_opt(t, "learning_rate", c.train.learning_rate);
            read_opt(t, "beta1", c.train.beta1);
            read_opt(t, "beta2", c.train.beta2);
            read_opt(t, "epsilon", c.train.epsilon);
            read_opt(t, "weight_decay", c.train.weight_decay);
            read_opt(t, "shuffle", c.train.shuffle);
        }
        if (j.contains("steering")) {
            const auto& s = j.at("steering");
            if (s.contains("mode")) c.steering.mode = parse_intervention_mode(s.at("mode").get<std::string>());
            read_opt(s, "position", c.steering.position);
            read_opt(s, "class", c.steering.target_class);
            if (s.contains("minority_confounder"))
                c.steering.minority_confounder = s.at("minority_confounder").get<std::uint32_t>();
            if (s.contains("orientation"))
                c.steering.orientation = parse_orientation(s.at("orientation").get<std::string>());
            read_opt(s, "alpha", c.steering.alpha);
            if (s.contains("means_from")) {
                const auto src = s.at("means_from").get<std::string>();
                if (src != "train" && src != "val") throw ConfigError("steering.means_from must be train or val");
                c.steering.use_validation_means = src == "val";
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json steering = {{"mode", to_string(c.steering.mode)},
                               {"position", c.steering.position},
                               {"class", c.steering.target_class},
                               {"orientation", to_string(c.steering.orientation)},
                               {"alpha", c.steering.alpha},
                               {"means_from", c.steering.use_validation_means ? "val" : "train"}};
    if (c.steering.minority_confounder) steering["minority_confounder"] = *c.steering.minority_confounder;
    return {{"seed", c.seed},
            {"model", {{"n_layers", c.model.n_layers}, {"d_model", c.model.d_model}, {"n_heads", c.model.n_heads}, {"d_ff", c.model.d_ff}}},
            {"data",
             {{"n_train", c.data.n_train},
              {"n_val", c.data.n_val},
              {"n_test", c.data.n_test},
              {"rho", c.data.rho},
              {"eta", c.data.eta},
              {"n_classes", c.data.n_classes},
              {"n_confounders", c.data.n_confounders},
              {"vocab_size", c.data.vocab_size},
              {"seq_len", c.data.seq_len},
              {"balanced_test", c.balanced_test}}},
            {"train",
             {{"epochs", c.train.epochs},
              {"batch_size", c.train.batch_size},
              {"learning_rate", c.train.learning_rate},
              {"beta1", c.train.beta1},
              {"beta2", c.train.beta2},
              {"epsilon", c.train.epsilon},
              {"weight_decay", c.train.weight_decay},
              {"shuffle", c.train.shuffle}}},
            {"steering", steering}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

} // namespace stv
