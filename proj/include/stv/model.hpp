#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stv/common.hpp"

namespace stv {

struct Example;

struct ModelConfig {
    std::size_t n_layers = 4;
    std::size_t d_model = 16;
    std::size_t n_heads = 2;
    std::size_t d_ff = 32;
    std::size_t vocab_size = 32;
    std::size_t seq_len = 16;  // includes the CLS slot at position 0
    std::size_t n_classes = 2;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t input_len() const { return seq_len - 1; }

    bool operator==(const ModelConfig&) const = default;
};

// Token id reserved for the CLS embedding row.
inline constexpr std::uint32_t kClsToken = 0;

template <typename S>
struct LayerParams {
    Matrix<S> ln1_gain, ln1_bias;  // [1 x d_model]
    Matrix<S> wq, wk, wv, wo;      // [d_model x d_model]
    Matrix<S> ln2_gain, ln2_bias;  // [1 x d_model]
    Matrix<S> w1;                  // [d_model x d_ff]
    Matrix<S> b1;                  // [1 x d_ff]
    Matrix<S> w2;                  // [d_ff x d_model]
    Matrix<S> b2;                  // [1 x d_model]
};

// Activations are row vectors: X is [seq_len x d_model], a linear map is X * W.
template <typename S>
struct ModelParamsT {
    ModelConfig config;
    Matrix<S> tok_emb;     // [vocab_size x d_model]
    Matrix<S> pos_emb;     // [seq_len x d_model]
    std::vector<LayerParams<S>> layers;
    Matrix<S> classifier;  // [n_classes x d_model]
};

using ModelParams = ModelParamsT<float>;

// Calls f(name, a.tensor, b.tensor, ...) for every parameter tensor of the
// given same-shaped parameter sets, in the fixed checkpoint order.
template <typename F, typename First, typename... Rest>
void visit_tensors(F&& f, First& first, Rest&... rest) {
    f(std::string("tok_emb"), first.tok_emb, rest.tok_emb...);
    f(std::string("pos_emb"), first.pos_emb, rest.pos_emb...);
    for (std::size_t l = 0; l < first.layers.size(); ++l) {
        const std::string p = "layers." + std::to_string(l + 1) + ".";
        f(p + "ln1_gain", first.layers[l].ln1_gain, rest.layers[l].ln1_gain...);
        f(p + "ln1_bias", first.layers[l].ln1_bias, rest.layers[l].ln1_bias...);
        f(p + "wq", first.layers[l].wq, rest.layers[l].wq...);
        f(p + "wk", first.layers[l].wk, rest.layers[l].wk...);
        f(p + "wv", first.layers[l].wv, rest.layers[l].wv...);
        f(p + "wo", first.layers[l].wo, rest.layers[l].wo...);
        f(p + "ln2_gain", first.layers[l].ln2_gain, rest.layers[l].ln2_gain...);
        f(p + "ln2_bias", first.layers[l].ln2_bias, rest.layers[l].ln2_bias...);
        f(p + "w1", first.layers[l].w1, rest.layers[l].w1...);
        f(p + "b1", first.layers[l].b1, rest.layers[l].b1...);
        f(p + "w2", first.layers[l].w2, rest.layers[l].w2...);
        f(p + "b2", first.layers[l].b2, rest.layers[l].b2...);
    }
    f(std::string("classifier"), first.classifier, rest.classifier...);
}

ModelParams init_params(const ModelConfig& config);

template <typename S>
ModelParamsT<S> zeros_like(const ModelConfig& config);

template <typename To, typename From>
ModelParamsT<To> cast_params(const ModelParamsT<From>& params) {
    ModelParamsT<To> out = zeros_like<To>(params.config);
    visit_tensors([](const std::string&, auto& dst, const auto& src) { dst = src.template cast<To>(); },
                  out, params);
    return out;
}

// Throws ShapeError / NumericError when tensors disagree with the config or are not finite.
void check_params(const ModelParams& params);

std::size_t parameter_count(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Hook points and interventions

enum class HookKind { resid_pre, resid_mid, resid_final };

struct HookPoint {
    HookKind kind;
    std::size_t layer = 0;  // 1-based; unused for resid_final

    std::string name() const;
};

// Per-(layer, position) unit directions. Masked rows are degenerate and never applied.
struct SteeringField {
    std::size_t n_layers = 0;
    std::size_t seq_len = 0;
    std::size_t d_model = 0;
    std::vector<float> directions;  // [n_layers x seq_len x d_model], row-major
    std::vector<std::uint8_t> mask; // [n_layers x seq_len], 1 = degenerate

    // layer0 is 0-based here.
    Eigen::Map<const Eigen::RowVectorXf> row(std::size_t layer0, std::size_t t) const {
        return {directions.data() + (layer0 * seq_len + t) * d_model, static_cast<Eigen::Index>(d_model)};
    }
    bool masked(std::size_t layer0, std::size_t t) const { return mask[layer0 * seq_len + t] != 0; }

    // Throws ContractError unless every unmasked row has unit norm (1e-5).
    void validate() const;
};

enum class InterventionMode { none, single_global, full_field, subtract };

std::string to_string(InterventionMode mode);
InterventionMode parse_intervention_mode(const std::string& text);

class InterventionSpec {
public:
    static InterventionSpec none();
    // direction must have unit norm (1e-5); otherwise ContractError.
    static InterventionSpec single_global(VectorF direction);
    static InterventionSpec full_field(std::shared_ptr<const SteeringField> field);
    static InterventionSpec subtract(VectorF direction, float alpha = 1.0f);

    InterventionMode mode() const { return mode_; }
    const VectorF& direction() const;
    const SteeringField& field() const;
    float alpha() const;

    std::string describe() const;

private:
    InterventionMode mode_ = InterventionMode::none;
    std::optional<VectorF> direction_;
    std::shared_ptr<const SteeringField> field_;
    std::optional<float> alpha_;
};

// ---------------------------------------------------------------------------
// Forward pass

// Activations are captured after the intervention at each hook point.
struct ForwardTrace {
    std::vector<MatrixF> resid_pre;  // L entries of [seq_len x d_model]
    std::vector<MatrixF> resid_mid;  // L entries of [seq_len x d_model]
    MatrixF resid_final;             // [seq_len x d_model]
    VectorF logits;

    const MatrixF& at(const HookPoint& hook) const;
};

struct ForwardOutput {
    VectorF logits;
    std::optional<ForwardTrace> trace;
};

// tokens are the T-1 data tokens; CLS is prepended internally.
ForwardOutput forward(const ModelParams& params, std::span<const std::uint32_t> tokens,
                      const InterventionSpec& intervention = InterventionSpec::none(), bool capture = false);

// Numerically stable softmax.
VectorF classify(const VectorF& logits);

std::uint32_t predict(const VectorF& logits);

// ---------------------------------------------------------------------------
// Training path (templated so the gradient checker can run in double)

template <typename S>
using ColVector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Returns -log softmax(logits)[label]; writes p - onehot(label) into grad when given.
template <typename S>
S softmax_cross_entropy(const ColVector<S>& logits, std::uint32_t label, ColVector<S>* grad);

template <typename S>
ColVector<S> forward_logits(const ModelParamsT<S>& params, std::span<const std::uint32_t> tokens,
                            const InterventionSpec& intervention = InterventionSpec::none());

// Cross-entropy loss of one example; accumulates grad_scale * dloss/dparams into grad.
// Writes the argmax class into predicted when given.
template <typename S>
S loss_and_grad(const ModelParamsT<S>& params, std::span<const std::uint32_t> tokens, std::uint32_t label,
                ModelParamsT<S>& grad, S grad_scale,
                const InterventionSpec& intervention = InterventionSpec::none(),
                std::uint32_t* predicted = nullptr);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t coordinates_checked = 0;
};

// Compares analytic gradients of the mean cross-entropy over batch with central
// finite differences, both in double. Samples up to 50 coordinates per tensor
// (all of them for smaller tensors) using seed.
GradCheckResult grad_check(const ModelParams& params, std::span<const Example> batch, double epsilon,
                           std::uint64_t seed = 0);

} // namespace stv
