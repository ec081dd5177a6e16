#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "flowguide/autodiff.hpp"
#include "flowguide/rng.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

// ---------------------------------------------------------------------------
// Time embedding: scalar t in [0,1] -> 2F reals, sin/cos pairs over F
// log-spaced frequencies. Deterministic, no trainable state.
// ---------------------------------------------------------------------------

struct TimeEmbedding {
    std::vector<double> freqs;

    static TimeEmbedding make(std::size_t f_count, double f_max = 256.0) {
        TimeEmbedding e;
        e.freqs.resize(f_count);
        for (std::size_t k = 0; k < f_count; ++k) {
            const double u = f_count > 1 ? static_cast<double>(k) / (f_count - 1) : 0.0;
            e.freqs[k] = std::exp(u * std::log(f_max));
        }
        return e;
    }

    std::size_t dim() const { return 2 * freqs.size(); }

    double max_angular_frequency() const { return 2.0 * M_PI * freqs.back(); }

    void embed_into(double t, double* out) const {
        for (std::size_t k = 0; k < freqs.size(); ++k) {
            const double a = 2.0 * M_PI * freqs[k] * t;
            out[2 * k] = std::sin(a);
            out[2 * k + 1] = std::cos(a);
        }
    }

    // [B] -> [B x 2F]
    Tensor embed(const Tensor& t) const {
        Tensor out({t.numel(), dim()});
        for (std::size_t i = 0; i < t.numel(); ++i) embed_into(t[i], out.data() + i * dim());
        return out;
    }
};

// ---------------------------------------------------------------------------
// Condition inputs. The zero vector is parameter-free and distinct from the
// learnable null embedding; prototype rows and external codes carry their
// values directly.
// ---------------------------------------------------------------------------

struct ZeroVector {};
struct NullEmbedding {
    Tensor value;  // current value of the trainable cond_dim vector
};
struct PrototypeCond {
    Tensor row;
};
struct ExternalCode {
    Tensor code;
};

using ConditionInput = std::variant<ZeroVector, NullEmbedding, PrototypeCond, ExternalCode>;

inline Tensor condition_rows(const ConditionInput& c, std::size_t batch, std::size_t cond_dim) {
    Tensor out({batch, cond_dim});
    const Tensor* src = nullptr;
    if (const auto* n = std::get_if<NullEmbedding>(&c)) src = &n->value;
    if (const auto* p = std::get_if<PrototypeCond>(&c)) src = &p->row;
    if (const auto* e = std::get_if<ExternalCode>(&c)) src = &e->code;
    if (!src) return out;  // ZeroVector
    if (src->numel() != cond_dim)
        throw std::runtime_error("condition: expected dim " + std::to_string(cond_dim) + ", got " +
                                 std::to_string(src->numel()));
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < cond_dim; ++j) out(i, j) = (*src)[j];
    return out;
}

inline Tensor one_hot_code(std::size_t index, std::size_t cond_dim) {
    if (index >= cond_dim)
        throw std::runtime_error("one_hot_code: index " + std::to_string(index) +
                                 " out of range for cond_dim " + std::to_string(cond_dim));
    Tensor code({cond_dim});
    code[index] = 1.0;
    return code;
}

// ---------------------------------------------------------------------------
// Velocity field v(x, t, c): an MLP over [x | time_embed(t) | c] with
// hidden_layers SiLU layers of hidden_width and a linear output head.
// ---------------------------------------------------------------------------

struct VelocityFieldConfig {
    std::size_t data_dim = 2;
    std::size_t hidden_layers = 4;  // L, must be >= 3 so interior layers exist
    std::size_t hidden_width = 256;
    std::size_t cond_dim = 16;
    std::size_t time_freqs = 16;

    std::size_t embed_dim() const { return 2 * time_freqs; }
    std::size_t input_dim() const { return data_dim + embed_dim() + cond_dim; }
};

struct VelocityFieldParams {
    VelocityFieldConfig cfg;
    std::vector<Tensor> weights;  // L+1 matrices
    std::vector<Tensor> biases;   // L+1 vectors
    TimeEmbedding time_embed;

    static VelocityFieldParams init(const VelocityFieldConfig& cfg, Rng& rng) {
        if (cfg.hidden_layers < 3)
            throw std::runtime_error("velocity field: need at least 3 hidden layers, got " +
                                     std::to_string(cfg.hidden_layers));
        VelocityFieldParams p;
        p.cfg = cfg;
        p.time_embed = TimeEmbedding::make(cfg.time_freqs);
        std::size_t in = cfg.input_dim();
        for (std::size_t l = 0; l < cfg.hidden_layers; ++l) {
            Tensor w({in, cfg.hidden_width});
            const double s = std::sqrt(2.0 / static_cast<double>(in));
            for (double& v : w.values()) v = s * rng.normal();
            p.weights.push_back(std::move(w));
            p.biases.push_back(Tensor({cfg.hidden_width}));
            in = cfg.hidden_width;
        }
        Tensor w_out({cfg.hidden_width, cfg.data_dim});
        const double s_out = std::sqrt(1.0 / static_cast<double>(cfg.hidden_width));
        for (double& v : w_out.values()) v = s_out * rng.normal();
        p.weights.push_back(std::move(w_out));
        p.biases.push_back(Tensor({cfg.data_dim}));
        return p;
    }

    std::size_t layer_count() const { return weights.size(); }
};

inline void check_capture_layer(const VelocityFieldConfig& cfg, std::size_t layer) {
    if (layer < 1 || layer > cfg.hidden_layers - 1)
        throw std::runtime_error("capture layer " + std::to_string(layer) +
                                 " out of range [1, " + std::to_string(cfg.hidden_layers - 1) +
                                 "]");
}

struct VelocityOutput {
    Tensor v;
    std::optional<Tensor> feature;  // post-activation of the captured hidden layer
};

// Numeric forward over resolved per-row conditions [B x cond_dim].
inline VelocityOutput velocity_forward_rows(const VelocityFieldParams& p, const Tensor& x,
                                            const Tensor& t, const Tensor& cond,
                                            std::optional<std::size_t> capture_layer = {}) {
    const std::size_t batch = x.shape()[0];
    if (x.rank() != 2 || x.shape()[1] != p.cfg.data_dim)
        throw std::runtime_error("velocity_forward: x shape " + x.shape_str() + " != [Bx" +
                                 std::to_string(p.cfg.data_dim) + "]");
    Tensor tv = t;
    if (t.numel() == 1 && batch > 1) tv = Tensor::filled({batch}, t[0]);
    if (tv.numel() != batch) shape_error("velocity_forward: t per row", x, t);
    for (std::size_t i = 0; i < tv.numel(); ++i)
        if (!(tv[i] >= 0.0 && tv[i] <= 1.0))
            throw std::runtime_error("velocity_forward: t out of [0,1]: " + std::to_string(tv[i]));
    if (capture_layer) check_capture_layer(p.cfg, *capture_layer);

    Tensor h = concat_cols(concat_cols(x, p.time_embed.embed(tv)), cond);
    VelocityOutput out;
    for (std::size_t l = 0; l < p.cfg.hidden_layers; ++l) {
        h = silu_eltwise(add(matmul_nn(h, p.weights[l]), p.biases[l]));
        if (capture_layer && *capture_layer == l + 1) out.feature = h;
    }
    out.v = add(matmul_nn(h, p.weights.back()), p.biases.back());
    return out;
}

inline VelocityOutput velocity_forward(const VelocityFieldParams& p, const Tensor& x,
                                       const Tensor& t, const ConditionInput& c,
                                       std::optional<std::size_t> capture_layer = {}) {
    return velocity_forward_rows(p, x, t, condition_rows(c, x.shape()[0], p.cfg.cond_dim),
                                 capture_layer);
}

// Truncated forward: post-activation of hidden layer `layer`, skipping the
// layers above it.
inline Tensor forward_activations(const VelocityFieldParams& p, const Tensor& x, const Tensor& t,
                                  const ConditionInput& c, std::size_t layer) {
    check_capture_layer(p.cfg, layer);
    const std::size_t batch = x.shape()[0];
    Tensor tv = t;
    if (t.numel() == 1 && batch > 1) tv = Tensor::filled({batch}, t[0]);
    Tensor h = concat_cols(concat_cols(x, p.time_embed.embed(tv)),
                           condition_rows(c, batch, p.cfg.cond_dim));
    for (std::size_t l = 0; l < layer; ++l)
        h = silu_eltwise(add(matmul_nn(h, p.weights[l]), p.biases[l]));
    return h;
}

// Graph forward used in training. Parameter nodes are created by the caller so
// gradients can be routed back to named tensors.
struct VelocityParamNodes {
    std::vector<ad::Value> weights;
    std::vector<ad::Value> biases;
};

inline VelocityParamNodes velocity_param_nodes(const VelocityFieldParams& p,
                                               const std::string& prefix) {
    VelocityParamNodes nodes;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        nodes.weights.push_back(ad::parameter(p.weights[l], prefix + ".w" + std::to_string(l)));
        nodes.biases.push_back(ad::parameter(p.biases[l], prefix + ".b" + std::to_string(l)));
    }
    return nodes;
}

inline ad::Value velocity_graph(const VelocityFieldParams& p, const VelocityParamNodes& nodes,
                                const Tensor& x, const Tensor& t, const ad::Value& cond) {
    ad::Value h = ad::concat(ad::concat(ad::constant(x), ad::constant(p.time_embed.embed(t))), cond);
    for (std::size_t l = 0; l < p.cfg.hidden_layers; ++l)
        h = ad::silu(ad::add(ad::matmul(h, nodes.weights[l]), nodes.biases[l]));
    return ad::add(ad::matmul(h, nodes.weights.back()), nodes.biases.back());
}

// ---------------------------------------------------------------------------
// Adam with bias correction, over an arbitrary named parameter list.
// ---------------------------------------------------------------------------

struct NamedParam {
    std::string name;
    Tensor* value;
    double lr_scale = 1.0;
};

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

inline void adam_step(AdamState& state, std::vector<NamedParam>& params,
                      const std::vector<Tensor>& grads) {
    if (params.size() != grads.size())
        throw std::runtime_error("adam_step: params/grads count mismatch");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Tensor::zeros(p.value->shape()));
            state.v.push_back(Tensor::zeros(p.value->shape()));
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!grads[i].all_finite())
            throw std::runtime_error("adam_step: non-finite gradient for parameter '" +
                                     params[i].name + "'");
        if (!grads[i].same_shape(*params[i].value))
            throw std::runtime_error("adam_step: gradient shape mismatch for '" + params[i].name +
                                     "'");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        Tensor& p = *params[i].value;
        const Tensor& g = grads[i];
        const double lr = state.lr * params[i].lr_scale;
        for (std::size_t j = 0; j < p.numel(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Exponential moving average of the velocity-field parameters.
// ---------------------------------------------------------------------------

struct EmaState {
    double decay = 0.999;
    VelocityFieldParams shadow;

    static EmaState init(const VelocityFieldParams& params, double decay) {
        return EmaState{decay, params};
    }
};

inline void ema_update(EmaState& ema, const VelocityFieldParams& params) {
    const double mu = ema.decay;
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        if (!ema.shadow.weights[l].same_shape(params.weights[l]))
            shape_error("ema_update", ema.shadow.weights[l], params.weights[l]);
        Tensor& sw = ema.shadow.weights[l];
        Tensor& sb = ema.shadow.biases[l];
        const Tensor& w = params.weights[l];
        const Tensor& b = params.biases[l];
        for (std::size_t j = 0; j < sw.numel(); ++j) sw[j] = mu * sw[j] + (1.0 - mu) * w[j];
        for (std::size_t j = 0; j < sb.numel(); ++j) sb[j] = mu * sb[j] + (1.0 - mu) * b[j];
    }
}

}  // namespace flowguide
