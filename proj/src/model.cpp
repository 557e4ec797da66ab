#include "stv/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stv/data.hpp"
#include "stv/rng.hpp"

namespace stv {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kUnitTolerance = 1e-5;

template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

void check_unit(const VectorF& v, const char* what) {
    const double norm = v.cast<double>().norm();
    if (!(std::abs(norm - 1.0) <= kUnitTolerance))
        throw ContractError(std::string(what) + " must have unit norm, got " + std::to_string(norm));
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration and parameters

void ModelConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || vocab_size < 1 || n_classes < 1)
        throw ConfigError("model counts must all be >= 1");
    if (d_model % n_heads != 0)
        throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    if (seq_len < 2) throw ConfigError("seq_len must be >= 2 (CLS plus at least one token)");
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (vocab_size < 2) throw ConfigError("vocab_size must leave room for the CLS id and one data id");
}

std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t per_layer = 4 * c.d_model + 4 * c.d_model * c.d_model + 2 * c.d_model * c.d_ff + c.d_ff + c.d_model;
    return c.vocab_size * c.d_model + c.seq_len * c.d_model + c.n_layers * per_layer + c.n_classes * c.d_model;
}

template <typename S>
ModelParamsT<S> zeros_like(const ModelConfig& config) {
    const auto d = static_cast<Eigen::Index>(config.d_model);
    const auto ff = static_cast<Eigen::Index>(config.d_ff);
    ModelParamsT<S> p;
    p.config = config;
    p.tok_emb = Matrix<S>::Zero(static_cast<Eigen::Index>(config.vocab_size), d);
    p.pos_emb = Matrix<S>::Zero(static_cast<Eigen::Index>(config.seq_len), d);
    p.layers.resize(config.n_layers);
    for (auto& l : p.layers) {
        l.ln1_gain = Matrix<S>::Zero(1, d);
        l.ln1_bias = Matrix<S>::Zero(1, d);
        l.wq = Matrix<S>::Zero(d, d);
        l.wk = Matrix<S>::Zero(d, d);
        l.wv = Matrix<S>::Zero(d, d);
        l.wo = Matrix<S>::Zero(d, d);
        l.ln2_gain = Matrix<S>::Zero(1, d);
        l.ln2_bias = Matrix<S>::Zero(1, d);
        l.w1 = Matrix<S>::Zero(d, ff);
        l.b1 = Matrix<S>::Zero(1, ff);
        l.w2 = Matrix<S>::Zero(ff, d);
        l.b2 = Matrix<S>::Zero(1, d);
    }
    p.classifier = Matrix<S>::Zero(static_cast<Eigen::Index>(config.n_classes), d);
    return p;
}

template ModelParamsT<float> zeros_like<float>(const ModelConfig&);
template ModelParamsT<double> zeros_like<double>(const ModelConfig&);

ModelParams init_params(const ModelConfig& config) {
    config.validate();
    ModelParams p = zeros_like<float>(config);
    Rng rng(config.seed);
    auto fill = [&rng](MatrixF& m, std::size_t fan_in) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-scale, scale));
    };
    // Embedding rows are looked up by a one-hot input, so their fan-in is 1.
    fill(p.tok_emb, 1);
    fill(p.pos_emb, 1);
    for (auto& l : p.layers) {
        l.ln1_gain.setOnes();
        l.ln2_gain.setOnes();
        fill(l.wq, config.d_model);
        fill(l.wk, config.d_model);
        fill(l.wv, config.d_model);
        fill(l.wo, config.d_model);
        fill(l.w1, config.d_model);
        fill(l.w2, config.d_ff);
    }
    fill(p.classifier, config.d_model);
    return p;
}

void check_params(const ModelParams& params) {
    params.config.validate();
    const ModelParams shape = zeros_like<float>(params.config);
    if (params.layers.size() != shape.layers.size()) throw ShapeError("layer count does not match config");
    visit_tensors(
        [](const std::string& name, const MatrixF& got, const MatrixF& want) {
            if (got.rows() != want.rows() || got.cols() != want.cols())
                throw ShapeError("tensor " + name + " has shape [" + std::to_string(got.rows()) + " x " +
                                 std::to_string(got.cols()) + "], expected [" + std::to_string(want.rows()) +
                                 " x " + std::to_string(want.cols()) + "]");
            if (!got.allFinite()) throw NumericError("tensor " + name + " has non-finite entries");
        },
        params, shape);
}

// ---------------------------------------------------------------------------
// Hook points and interventions

std::string HookPoint::name() const {
    switch (kind) {
        case HookKind::resid_pre: return "resid_pre(" + std::to_string(layer) + ")";
        case HookKind::resid_mid: return "resid_mid(" + std::to_string(layer) + ")";
        case HookKind::resid_final: return "resid_final";
    }
    return "?";
}

void SteeringField::validate() const {
    if (directions.size() != n_layers * seq_len * d_model || mask.size() != n_layers * seq_len)
        throw ShapeError("steering field buffers do not match its shape");
    for (std::size_t l = 0; l < n_layers; ++l)
        for (std::size_t t = 0; t < seq_len; ++t) {
            if (masked(l, t)) continue;
            const double norm = row(l, t).cast<double>().norm();
            if (!(std::abs(norm - 1.0) <= kUnitTolerance))
                throw ContractError("steering field row (layer " + std::to_string(l + 1) + ", position " +
                                    std::to_string(t) + ") has norm " + std::to_string(norm));
        }
}

std::string to_string(InterventionMode mode) {
    switch (mode) {
        case InterventionMode::none: return "none";
        case InterventionMode::single_global: return "single";
        case InterventionMode::full_field: return "full";
        case InterventionMode::subtract: return "subtract";
    }
    return "?";
}

InterventionMode parse_intervention_mode(const std::string& text) {
    if (text == "none") return InterventionMode::none;
    if (text == "single" || text == "single_global") return InterventionMode::single_global;
    if (text == "full" || text == "full_field") return InterventionMode::full_field;
    if (text == "subtract") return InterventionMode::subtract;
    throw ConfigError("unknown intervention mode '" + text + "' (expected none, single, full or subtract)");
}

InterventionSpec InterventionSpec::none() { return {}; }

InterventionSpec InterventionSpec::single_global(VectorF direction) {
    check_unit(direction, "single_global direction");
    InterventionSpec s;
    s.mode_ = InterventionMode::single_global;
    s.direction_ = std::move(direction);
    return s;
}

InterventionSpec InterventionSpec::full_field(std::shared_ptr<const SteeringField> field) {
    if (!field) throw ContractError("full_field intervention needs a field");
    field->validate();
    InterventionSpec s;
    s.mode_ = InterventionMode::full_field;
    s.field_ = std::move(field);
    return s;
}

InterventionSpec InterventionSpec::subtract(VectorF direction, float alpha) {
    check_unit(direction, "subtract direction");
    if (!std::isfinite(alpha)) throw ContractError("subtract alpha must be finite");
    InterventionSpec s;
    s.mode_ = InterventionMode::subtract;
    s.direction_ = std::move(direction);
    s.alpha_ = alpha;
    return s;
}

const VectorF& InterventionSpec::direction() const {
    if (!direction_) throw ContractError("intervention mode " + to_string(mode_) + " carries no direction");
    return *direction_;
}

const SteeringField& InterventionSpec::field() const {
    if (!field_) throw ContractError("intervention mode " + to_string(mode_) + " carries no field");
    return *field_;
}

float InterventionSpec::alpha() const {
    if (!alpha_) throw ContractError("intervention mode " + to_string(mode_) + " carries no alpha");
    return *alpha_;
}

std::string InterventionSpec::describe() const {
    switch (mode_) {
        case InterventionMode::none: return "none";
        case InterventionMode::single_global: return "single_global";
        case InterventionMode::full_field: return "full_field";
        case InterventionMode::subtract: {
            std::string a = std::to_string(*alpha_);
            return "subtract(alpha=" + a + ")";
        }
    }
    return "?";
}

const MatrixF& ForwardTrace::at(const HookPoint& hook) const {
    switch (hook.kind) {
        case HookKind::resid_pre: return resid_pre.at(hook.layer - 1);
        case HookKind::resid_mid: return resid_mid.at(hook.layer - 1);
        case HookKind::resid_final: return resid_final;
    }
    throw ContractError("bad hook kind");
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

// Applies the intervention to every row of x at one hook point. layer0 is
// 0-based; resid_final passes layer0 = n_layers.
template <typename S>
class Intervener {
public:
    explicit Intervener(const InterventionSpec& spec) : spec_(spec) {
        if (spec.mode() == InterventionMode::single_global || spec.mode() == InterventionMode::subtract)
            dir_ = spec.direction().transpose().template cast<S>();
        if (spec.mode() == InterventionMode::subtract) alpha_ = static_cast<S>(spec.alpha());
    }

    bool active(HookKind kind) const {
        switch (spec_.mode()) {
            case InterventionMode::none: return false;
            case InterventionMode::single_global:
            case InterventionMode::subtract:
            case InterventionMode::full_field: return kind != HookKind::resid_final;
        }
        return false;
    }

    void apply(Matrix<S>& x, HookKind kind, std::size_t layer0) const {
        if (!active(kind)) return;
        switch (spec_.mode()) {
            case InterventionMode::single_global:
                for (Eigen::Index t = 0; t < x.rows(); ++t) {
                    const S c = x.row(t).dot(dir_);
                    x.row(t) -= c * dir_;
                }
                break;
            case InterventionMode::subtract:
                for (Eigen::Index t = 0; t < x.rows(); ++t) x.row(t) -= alpha_ * dir_;
                break;
            case InterventionMode::full_field: {
                const auto& field = spec_.field();
                for (Eigen::Index t = 0; t < x.rows(); ++t) {
                    if (field.masked(layer0, static_cast<std::size_t>(t))) continue;
                    const RowVec<S> r = field.row(layer0, static_cast<std::size_t>(t)).template cast<S>();
                    const S c = x.row(t).dot(r);
                    x.row(t) -= c * r;
                }
                break;
            }
            case InterventionMode::none: break;
        }
    }

    // Ablation is an orthogonal projection P (symmetric), so dL/dx = P dL/dx';
    // subtraction is a shift with identity Jacobian.
    void backward(Matrix<S>& dx, HookKind kind, std::size_t layer0) const {
        if (!active(kind) || spec_.mode() == InterventionMode::subtract) return;
        apply(dx, kind, layer0);
    }

private:
    const InterventionSpec& spec_;
    RowVec<S> dir_;
    S alpha_ = 0;
};

template <typename S>
struct LayerNormCache {
    Matrix<S> xhat;
    Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
};

template <typename S>
Matrix<S> layer_norm(const Matrix<S>& x, const Matrix<S>& gain, const Matrix<S>& bias, LayerNormCache<S>& cache) {
    const Eigen::Index n = x.cols();
    cache.xhat.resize(x.rows(), n);
    cache.rstd.resize(x.rows());
    Matrix<S> out(x.rows(), n);
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const S mean = x.row(t).mean();
        const RowVec<S> centered = x.row(t).array() - mean;
        const S var = centered.squaredNorm() / static_cast<S>(n);
        const S rstd = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
        cache.rstd(t) = rstd;
        cache.xhat.row(t) = centered * rstd;
        out.row(t) = cache.xhat.row(t).cwiseProduct(gain) + bias;
    }
    return out;
}

template <typename S>
Matrix<S> layer_norm_backward(const Matrix<S>& dout, const Matrix<S>& gain, const LayerNormCache<S>& cache,
                              Matrix<S>& dgain, Matrix<S>& dbias) {
    dgain += dout.cwiseProduct(cache.xhat).colwise().sum();
    dbias += dout.colwise().sum();
    const Eigen::Index n = dout.cols();
    Matrix<S> dx(dout.rows(), n);
    for (Eigen::Index t = 0; t < dout.rows(); ++t) {
        const RowVec<S> dxhat = dout.row(t).cwiseProduct(gain);
        const S mean_d = dxhat.mean();
        const S mean_dx = dxhat.dot(cache.xhat.row(t)) / static_cast<S>(n);
        dx.row(t) = cache.rstd(t) * (dxhat.array() - mean_d - cache.xhat.row(t).array() * mean_dx).matrix();
    }
    return dx;
}

template <typename S>
S gelu(S z) {
    constexpr S k0 = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
    constexpr S k1 = static_cast<S>(0.044715);
    return S(0.5) * z * (S(1) + std::tanh(k0 * (z + k1 * z * z * z)));
}

template <typename S>
S gelu_grad(S z) {
    constexpr S k0 = static_cast<S>(0.7978845608028654);
    constexpr S k1 = static_cast<S>(0.044715);
    const S th = std::tanh(k0 * (z + k1 * z * z * z));
    return S(0.5) * (S(1) + th) + S(0.5) * z * (S(1) - th * th) * k0 * (S(1) + S(3) * k1 * z * z);
}

template <typename S>
void softmax_rows(Matrix<S>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const S mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp();
        m.row(r) /= m.row(r).sum();
    }
}

template <typename S>
struct LayerCache {
    Matrix<S> x_in;  // resid_pre after intervention
    LayerNormCache<S> ln1;
    Matrix<S> h, q, k, v;
    std::vector<Matrix<S>> probs;  // per head [T x T]
    Matrix<S> o;
    Matrix<S> x_mid;  // resid_mid after intervention
    LayerNormCache<S> ln2;
    Matrix<S> h2, z, act;
};

template <typename S>
struct ForwardCache {
    std::vector<std::uint32_t> ids;  // CLS + tokens
    std::vector<LayerCache<S>> layers;
    Matrix<S> x_final;
    ColVector<S> logits;
};

void check_tokens(const ModelConfig& c, std::span<const std::uint32_t> tokens) {
    if (tokens.size() != c.input_len())
        throw ShapeError("expected " + std::to_string(c.input_len()) + " tokens, got " +
                         std::to_string(tokens.size()));
    for (auto t : tokens)
        if (t >= c.vocab_size)
            throw ShapeError("token id " + std::to_string(t) + " outside vocabulary of size " +
                             std::to_string(c.vocab_size));
}

template <typename S>
void check_finite(const Matrix<S>& x, HookPoint hook) {
    if (!x.allFinite()) throw NumericError("non-finite activation at " + hook.name());
}

template <typename S>
ColVector<S> run_forward(const ModelParamsT<S>& p, std::span<const std::uint32_t> tokens,
                         const InterventionSpec& spec, ForwardCache<S>& cache, ForwardTrace* trace) {
    const auto& c = p.config;
    check_tokens(c, tokens);
    const auto T = static_cast<Eigen::Index>(c.seq_len);
    const auto dh = static_cast<Eigen::Index>(c.head_dim());
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    const Intervener<S> iv(spec);

    cache.ids.assign(1, kClsToken);
    cache.ids.insert(cache.ids.end(), tokens.begin(), tokens.end());
    Matrix<S> x(T, static_cast<Eigen::Index>(c.d_model));
    for (Eigen::Index t = 0; t < T; ++t) x.row(t) = p.tok_emb.row(cache.ids[t]) + p.pos_emb.row(t);

    cache.layers.resize(c.n_layers);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const auto& w = p.layers[l];
        auto& lc = cache.layers[l];

        iv.apply(x, HookKind::resid_pre, l);
        check_finite(x, {HookKind::resid_pre, l + 1});
        if (trace) trace->resid_pre[l] = x.template cast<float>();
        lc.x_in = x;

        lc.h = layer_norm(x, w.ln1_gain, w.ln1_bias, lc.ln1);
        lc.q.noalias() = lc.h * w.wq;
        lc.k.noalias() = lc.h * w.wk;
        lc.v.noalias() = lc.h * w.wv;
        lc.o.resize(T, x.cols());
        lc.probs.resize(c.n_heads);
        for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
            const auto c0 = static_cast<Eigen::Index>(hd) * dh;
            Matrix<S> scores = (lc.q.middleCols(c0, dh) * lc.k.middleCols(c0, dh).transpose()) * scale;
            softmax_rows(scores);
            lc.o.middleCols(c0, dh).noalias() = scores * lc.v.middleCols(c0, dh);
            lc.probs[hd] = std::move(scores);
        }
        x.noalias() += lc.o * w.wo;

        iv.apply(x, HookKind::resid_mid, l);
        check_finite(x, {HookKind::resid_mid, l + 1});
        if (trace) trace->resid_mid[l] = x.template cast<float>();
        lc.x_mid = x;

        lc.h2 = layer_norm(x, w.ln2_gain, w.ln2_bias, lc.ln2);
        lc.z.noalias() = lc.h2 * w.w1;
        lc.z.rowwise() += w.b1.row(0);
        lc.act = lc.z.unaryExpr([](S v) { return gelu(v); });
        x.noalias() += lc.act * w.w2;
        x.rowwise() += w.b2.row(0);
    }

    iv.apply(x, HookKind::resid_final, c.n_layers);
    check_finite(x, {HookKind::resid_final, 0});
    if (trace) trace->resid_final = x.template cast<float>();
    cache.x_final = x;
    cache.logits = p.classifier * x.row(0).transpose();
    if (!cache.logits.allFinite()) throw NumericError("non-finite logits");
    return cache.logits;
}

template <typename S>
void run_backward(const ModelParamsT<S>& p, const ForwardCache<S>& cache, const InterventionSpec& spec,
                  const ColVector<S>& dlogits, ModelParamsT<S>& g) {
    const auto& c = p.config;
    const auto T = static_cast<Eigen::Index>(c.seq_len);
    const auto dh = static_cast<Eigen::Index>(c.head_dim());
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    const Intervener<S> iv(spec);

    g.classifier.noalias() += dlogits * cache.x_final.row(0);
    Matrix<S> dx = Matrix<S>::Zero(T, static_cast<Eigen::Index>(c.d_model));
    dx.row(0) = (p.classifier.transpose() * dlogits).transpose();
    iv.backward(dx, HookKind::resid_final, c.n_layers);

    for (std::size_t li = c.n_layers; li-- > 0;) {
        const auto& w = p.layers[li];
        auto& gw = g.layers[li];
        const auto& lc = cache.layers[li];

        // MLP sublayer: x_out = x_mid + gelu(LN2(x_mid) W1 + b1) W2 + b2
        gw.w2.noalias() += lc.act.transpose() * dx;
        gw.b2 += dx.colwise().sum();
        Matrix<S> dz = (dx * w.w2.transpose()).cwiseProduct(lc.z.unaryExpr([](S v) { return gelu_grad(v); }));
        gw.w1.noalias() += lc.h2.transpose() * dz;
        gw.b1 += dz.colwise().sum();
        const Matrix<S> dh2 = dz * w.w1.transpose();
        dx += layer_norm_backward(dh2, w.ln2_gain, lc.ln2, gw.ln2_gain, gw.ln2_bias);
        iv.backward(dx, HookKind::resid_mid, li);

        // Attention sublayer: x_mid = x_in + Attn(LN1(x_in)) Wo
        gw.wo.noalias() += lc.o.transpose() * dx;
        const Matrix<S> d_o = dx * w.wo.transpose();
        Matrix<S> dq(T, d_o.cols()), dk(T, d_o.cols()), dv(T, d_o.cols());
        for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
            const auto c0 = static_cast<Eigen::Index>(hd) * dh;
            const auto& a = lc.probs[hd];
            const Matrix<S> d_oh = d_o.middleCols(c0, dh);
            dv.middleCols(c0, dh).noalias() = a.transpose() * d_oh;
            const Matrix<S> da = d_oh * lc.v.middleCols(c0, dh).transpose();
            Matrix<S> ds = a.cwiseProduct(da);
            const ColVector<S> row_dot = ds.rowwise().sum();
            ds -= a.cwiseProduct(row_dot.replicate(1, T));
            ds *= scale;
            dq.middleCols(c0, dh).noalias() = ds * lc.k.middleCols(c0, dh);
            dk.middleCols(c0, dh).noalias() = ds.transpose() * lc.q.middleCols(c0, dh);
        }
        gw.wq.noalias() += lc.h.transpose() * dq;
        gw.wk.noalias() += lc.h.transpose() * dk;
        gw.wv.noalias() += lc.h.transpose() * dv;
        Matrix<S> dh1 = dq * w.wq.transpose();
        dh1.noalias() += dk * w.wk.transpose();
        dh1.noalias() += dv * w.wv.transpose();
        dx += layer_norm_backward(dh1, w.ln1_gain, lc.ln1, gw.ln1_gain, gw.ln1_bias);
        iv.backward(dx, HookKind::resid_pre, li);
    }

    for (Eigen::Index t = 0; t < T; ++t) g.tok_emb.row(cache.ids[t]) += dx.row(t);
    g.pos_emb += dx;
}

} // namespace

// ---------------------------------------------------------------------------
// Public forward API

ForwardOutput forward(const ModelParams& params, std::span<const std::uint32_t> tokens,
                      const InterventionSpec& intervention, bool capture) {
    ForwardCache<float> cache;
    ForwardOutput out;
    if (capture) {
        out.trace.emplace();
        out.trace->resid_pre.resize(params.config.n_layers);
        out.trace->resid_mid.resize(params.config.n_layers);
    }
    out.logits = run_forward(params, tokens, intervention, cache, out.trace ? &*out.trace : nullptr);
    if (out.trace) out.trace->logits = out.logits;
    return out;
}

VectorF classify(const VectorF& logits) {
    if (logits.size() == 0) throw ShapeError("classify needs at least one logit");
    if (!logits.allFinite()) throw NumericError("classify: non-finite logits");
    const float mx = logits.maxCoeff();
    VectorF p = (logits.array() - mx).exp();
    return p / p.sum();
}

std::uint32_t predict(const VectorF& logits) {
    std::uint32_t best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i)
        if (logits(i) > logits(best)) best = static_cast<std::uint32_t>(i);
    return best;
}

template <typename S>
S softmax_cross_entropy(const ColVector<S>& logits, std::uint32_t label, ColVector<S>* grad) {
    if (!logits.allFinite()) throw NumericError("cross_entropy: non-finite logits");
    if (label >= logits.size()) throw ContractError("cross_entropy: label out of range");
    const S mx = logits.maxCoeff();
    const ColVector<S> shifted = logits.array() - mx;
    const S log_z = std::log(shifted.array().exp().sum());
    if (grad) {
        *grad = (shifted.array() - log_z).exp();
        (*grad)(label) -= S(1);
    }
    return log_z - shifted(label);
}

template <typename S>
ColVector<S> forward_logits(const ModelParamsT<S>& params, std::span<const std::uint32_t> tokens,
                            const InterventionSpec& intervention) {
    ForwardCache<S> cache;
    return run_forward(params, tokens, intervention, cache, nullptr);
}

template <typename S>
S loss_and_grad(const ModelParamsT<S>& params, std::span<const std::uint32_t> tokens, std::uint32_t label,
                ModelParamsT<S>& grad, S grad_scale, const InterventionSpec& intervention,
                std::uint32_t* predicted) {
    ForwardCache<S> cache;
    const ColVector<S> logits = run_forward(params, tokens, intervention, cache, nullptr);
    if (predicted) {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < logits.size(); ++i)
            if (logits(i) > logits(best)) best = i;
        *predicted = static_cast<std::uint32_t>(best);
    }
    ColVector<S> dlogits;
    const S loss = softmax_cross_entropy<S>(logits, label, &dlogits);
    dlogits *= grad_scale;
    run_backward(params, cache, intervention, dlogits, grad);
    return loss;
}

template float softmax_cross_entropy<float>(const ColVector<float>&, std::uint32_t, ColVector<float>*);
template double softmax_cross_entropy<double>(const ColVector<double>&, std::uint32_t, ColVector<double>*);
template ColVector<float> forward_logits<float>(const ModelParamsT<float>&, std::span<const std::uint32_t>,
                                                const InterventionSpec&);
template ColVector<double> forward_logits<double>(const ModelParamsT<double>&, std::span<const std::uint32_t>,
                                                  const InterventionSpec&);
template float loss_and_grad<float>(const ModelParamsT<float>&, std::span<const std::uint32_t>, std::uint32_t,
                                    ModelParamsT<float>&, float, const InterventionSpec&,
                                    std::uint32_t*);
template double loss_and_grad<double>(const ModelParamsT<double>&, std::span<const std::uint32_t>, std::uint32_t,
                                      ModelParamsT<double>&, double, const InterventionSpec&,
                                      std::uint32_t*);

// ---------------------------------------------------------------------------
// Gradient check

GradCheckResult grad_check(const ModelParams& params, std::span<const Example> batch, double epsilon,
                           std::uint64_t seed) {
    if (batch.empty()) throw DataError("grad_check needs a nonempty batch");
    if (!(epsilon >= 1e-5 && epsilon <= 1e-3)) throw ContractError("grad_check epsilon must lie in [1e-5, 1e-3]");
    constexpr std::size_t kCoordsPerTensor = 50;
    constexpr double kDenominatorFloor = 1e-6;

    ModelParamsT<double> p = cast_params<double>(params);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    auto mean_loss = [&](const ModelParamsT<double>& q) {
        double total = 0.0;
        for (const auto& ex : batch) total += softmax_cross_entropy<double>(forward_logits(q, ex.tokens), ex.y, nullptr);
        return total * inv_n;
    };

    ModelParamsT<double> analytic = zeros_like<double>(params.config);
    for (const auto& ex : batch) loss_and_grad<double>(p, ex.tokens, ex.y, analytic, inv_n);

    GradCheckResult result;
    Rng rng(seed);
    visit_tensors(
        [&](const std::string& name, Matrix<double>& value, const Matrix<double>& grad) {
            const auto n = static_cast<std::size_t>(value.size());
            std::vector<std::size_t> coords(n);
            std::iota(coords.begin(), coords.end(), 0);
            if (n > kCoordsPerTensor) {
                rng.shuffle(coords.begin(), coords.end());
                coords.resize(kCoordsPerTensor);
                std::sort(coords.begin(), coords.end());
            }
            for (auto i : coords) {
                const double saved = value.data()[i];
                value.data()[i] = saved + epsilon;
                const double up = mean_loss(p);
                value.data()[i] = saved - epsilon;
                const double down = mean_loss(p);
                value.data()[i] = saved;
                const double numeric = (up - down) / (2.0 * epsilon);
                const double exact = grad.data()[i];
                const double rel = std::abs(exact - numeric) /
                                   std::max(std::abs(exact) + std::abs(numeric), kDenominatorFloor);
                if (rel > result.max_rel_error) {
                    result.max_rel_error = rel;
                    result.worst_tensor = name;
                }
                ++result.coordinates_checked;
            }
        },
        p, analytic);
    return result;
}

} // namespace stv
