#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowguide/autodiff.hpp"
#include "flowguide/datasets.hpp"
#include "flowguide/metrics.hpp"
#include "flowguide/nn.hpp"
#include "flowguide/ot.hpp"
#include "flowguide/paths.hpp"
#include "flowguide/rng.hpp"
#include "flowguide/sampler.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

enum class GuidanceMode { Bootstrap, None };

inline GuidanceMode guidance_mode_from_name(const std::string& name) {
    if (name == "bootstrap") return GuidanceMode::Bootstrap;
    if (name == "none") return GuidanceMode::None;
    throw std::runtime_error("unknown guidance mode '" + name + "' (expected bootstrap or none)");
}

struct TrainConfig {
    std::size_t total_iters = 20000;  // N
    double warmup = 0.5;              // sigma
    double p_drop = 0.15;
    std::size_t batch = 256;
    PathKind path = CvPath{};
    SinkhornConfig sk{};
    double feature_t = 0.2;        // t_s
    std::size_t feature_layer = 2;  // l
    double sk_mask_lo = 0.15;
    double sk_mask_hi = 0.25;
    std::uint64_t seed = 0;

    std::size_t clusters = 8;     // K
    std::size_t feature_dim = 16;  // d; also cond_dim of the network
    std::size_t hidden_layers = 4;
    std::size_t hidden_width = 256;
    std::size_t time_freqs = 16;
    double lr = 1e-3;
    double ema_decay = 0.999;

    GuidanceMode mode = GuidanceMode::Bootstrap;
    // Keeping the EMA tracking after warmup refreshes the feature source as
    // the field improves; freezing it lets the head and prototypes slowly
    // degenerate against a fixed representation.
    bool ema_freeze_after_warmup = false;

    std::size_t eval_interval = 1000;
    std::size_t eval_samples = 1024;
    SamplerConfig sampler{};

    VelocityFieldConfig net_config() const {
        VelocityFieldConfig c;
        c.data_dim = 2;
        c.hidden_layers = hidden_layers;
        c.hidden_width = hidden_width;
        c.cond_dim = feature_dim;
        c.time_freqs = time_freqs;
        return c;
    }

    void validate() const {
        if (!(warmup > 0.0 && warmup < 1.0))
            throw std::runtime_error("config: warmup must lie in (0,1)");
        if (!(p_drop >= 0.0 && p_drop <= 1.0))
            throw std::runtime_error("config: p_drop must lie in [0,1]");
        if (!(sk_mask_lo >= 0.0 && sk_mask_hi <= 1.0 && sk_mask_lo < sk_mask_hi))
            throw std::runtime_error("config: sk mask range must satisfy 0 <= lo < hi <= 1");
        if (batch < 1) throw std::runtime_error("config: batch must be positive");
        if (clusters < 1) throw std::runtime_error("config: clusters must be positive");
        if (eval_interval < 1) throw std::runtime_error("config: eval_interval must be positive");
        if (eval_samples < 3)
            throw std::runtime_error("config: eval_samples must be at least 3");
        check_capture_layer(net_config(), feature_layer);
        if (!(feature_t >= 0.0 && feature_t <= 1.0))
            throw std::runtime_error("config: feature_t must lie in [0,1]");
    }
};

struct StepDiagnostics {
    static constexpr std::size_t kNullCode = static_cast<std::size_t>(-1);
    double loss_d = 0.0;
    double loss_sk = 0.0;
    double sk_weight = 0.0;
    std::string branch;                        // "warmup", "guided" or "unconditional"
    std::vector<std::size_t> condition_codes;  // per example; kNullCode marks the null embedding
};

struct MetricsRow {
    std::size_t iter = 0;
    double loss_d = 0.0;
    double loss_sk = 0.0;
    double sk_weight = 0.0;
    double nmi = 0.0;
    double ari = 0.0;
    double frechet = 0.0;
};

// Everything Algorithm-style training mutates: the velocity field, its EMA
// shadow, the feature head, the prototypes, the null embedding, optimizer
// moments, the iteration counter and the RNG stream.
struct TrainState {
    TrainConfig cfg;
    VelocityFieldParams params;
    EmaState ema;
    FeatureHead head;
    Prototypes protos;
    Tensor null_embedding;  // [1 x cond_dim]
    AdamState adam;
    std::size_t iter = 0;
    Rng rng;
    Standardization standardization;

    // Loss scaling is invisible to Adam for parameters the ramped term alone
    // touches, so the warmup ramp is applied to the head/prototype step size.
    std::vector<NamedParam> named_params(double sk_lr_scale = 1.0) {
        std::vector<NamedParam> out;
        for (std::size_t l = 0; l < params.weights.size(); ++l) {
            out.push_back({"theta.w" + std::to_string(l), &params.weights[l]});
            out.push_back({"theta.b" + std::to_string(l), &params.biases[l]});
        }
        out.push_back({"head.w", &head.w, sk_lr_scale});
        out.push_back({"head.b", &head.b, sk_lr_scale});
        out.push_back({"prototypes", &protos.m, sk_lr_scale});
        out.push_back({"null_embedding", &null_embedding});
        return out;
    }

    ConditionInput null_condition() const { return NullEmbedding{null_embedding}; }
};

inline TrainState make_train_state(const TrainConfig& cfg) {
    cfg.validate();
    Rng init_rng(cfg.seed, 1);
    TrainState s{cfg,
                 VelocityFieldParams::init(cfg.net_config(), init_rng),
                 EmaState{},
                 FeatureHead::init(cfg.hidden_width, cfg.feature_dim, init_rng),
                 Prototypes::init(cfg.clusters, cfg.feature_dim, init_rng),
                 Tensor({1, cfg.feature_dim}),
                 AdamState{},
                 0,
                 Rng(cfg.seed, 2),
                 Standardization{Tensor::zeros({2}), Tensor::filled({2}, 1.0)}};
    s.ema = EmaState::init(s.params, cfg.ema_decay);
    s.adam.lr = cfg.lr;
    return s;
}

namespace detail {

inline Tensor draw_normal(Rng& rng, std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.normal();
    return t;
}

inline Tensor draw_uniform(Rng& rng, std::size_t n) {
    Tensor t({n});
    for (double& v : t.values()) v = rng.uniform();
    return t;
}

}  // namespace detail

// One step of the online training loop: warmup uses the zero-vector condition;
// afterwards each example is conditioned on its nearest prototype from the EMA
// features, or dropped to the null embedding with probability p_drop. The
// Sinkhorn-Knopp loss is computed every step at a timestep drawn from the mask
// interval and ramped by min(iter/(sigma N), 1).
inline StepDiagnostics train_step(TrainState& s, const Tensor& x1) {
    const TrainConfig& cfg = s.cfg;
    const std::size_t b = x1.shape()[0];
    const std::size_t dd = 2;
    const std::size_t cd = cfg.feature_dim;
    const double n_total = static_cast<double>(cfg.total_iters);

    if (!x1.all_finite())
        throw std::runtime_error("train_step: non-finite batch at iteration " +
                                 std::to_string(s.iter));

    StepDiagnostics diag;
    const bool warmup = static_cast<double>(s.iter) / n_total < cfg.warmup;
    diag.sk_weight = std::min(static_cast<double>(s.iter) / (cfg.warmup * n_total), 1.0);
    const bool guided = !warmup && cfg.mode == GuidanceMode::Bootstrap;
    diag.branch = cfg.mode == GuidanceMode::None ? "unconditional" : (warmup ? "warmup" : "guided");

    Tensor noise = detail::draw_normal(s.rng, {b, dd});
    Tensor t = detail::draw_uniform(s.rng, b);

    ad::Value cond_node;
    ad::Value null_node;
    if (guided) {
        std::vector<char> drop(b, 0);
        for (std::size_t i = 0; i < b; ++i) drop[i] = s.rng.bernoulli(cfg.p_drop) ? 1 : 0;
        Tensor feat_noise = detail::draw_normal(s.rng, {b, dd});
        Tensor z = extract_feature(s.ema.shadow, s.head, cfg.path, x1, feat_noise, cfg.feature_t,
                                   cfg.feature_layer);
        Tensor cond_fixed({b, cd});
        Tensor null_sel({b, 1});
        diag.condition_codes.assign(b, StepDiagnostics::kNullCode);
        for (std::size_t i = 0; i < b; ++i) {
            if (drop[i]) {
                null_sel(i, 0) = 1.0;
                continue;
            }
            PrototypeAssignment asg = assign_prototype(s.protos, row(z, i));
            diag.condition_codes[i] = asg.index;
            for (std::size_t j = 0; j < cd; ++j) cond_fixed(i, j) = asg.row[j];
        }
        null_node = ad::parameter(s.null_embedding, "null_embedding");
        cond_node = ad::add(ad::constant(std::move(cond_fixed)),
                            ad::matmul(ad::constant(std::move(null_sel)), null_node));
    } else {
        cond_node = ad::constant(Tensor({b, cd}));
    }

    Tensor x_t = interpolate_rows(cfg.path, x1, noise, t);
    Tensor v_target = target_velocity_rows(cfg.path, x1, noise, t);
    VelocityParamNodes theta = velocity_param_nodes(s.params, "theta");
    ad::Value v = velocity_graph(s.params, theta, x_t, t, cond_node);
    ad::Value loss_d =
        ad::scale(ad::squared_error(v, ad::constant(std::move(v_target))), static_cast<double>(dd));
    diag.loss_d = loss_d->value.item();

    ad::Value total = loss_d;
    ad::Value head_w, head_b, m_node;
    if (cfg.mode == GuidanceMode::Bootstrap) {
        const double t_sk = s.rng.uniform(cfg.sk_mask_lo, cfg.sk_mask_hi);
        Tensor sk_noise = detail::draw_normal(s.rng, {b, dd});
        Tensor acts =
            capture_activations(s.ema.shadow, cfg.path, x1, sk_noise, t_sk, cfg.feature_layer);
        head_w = ad::parameter(s.head.w, "head.w");
        head_b = ad::parameter(s.head.b, "head.b");
        ad::Value z_node = feature_graph(acts, head_w, head_b);
        m_node = ad::parameter(s.protos.m, "prototypes");
        TransportPlan plan = sinkhorn(matmul_nt(s.protos.m, z_node->value), cfg.sk);
        ad::Value loss_sk = sk_loss_graph(plan, m_node, z_node);
        diag.loss_sk = loss_sk->value.item();
        total = ad::add(loss_d, ad::scale(loss_sk, diag.sk_weight));
    }

    if (!std::isfinite(total->value.item()))
        throw std::runtime_error("train_step: non-finite loss at iteration " +
                                 std::to_string(s.iter));

    ad::GradMap grads = ad::backward(total);
    std::vector<NamedParam> named = s.named_params(diag.sk_weight);
    std::vector<ad::Value> nodes;
    for (std::size_t l = 0; l < theta.weights.size(); ++l) {
        nodes.push_back(theta.weights[l]);
        nodes.push_back(theta.biases[l]);
    }
    nodes.push_back(head_w);
    nodes.push_back(head_b);
    nodes.push_back(m_node);
    nodes.push_back(null_node);

    std::vector<Tensor> grad_tensors;
    grad_tensors.reserve(named.size());
    for (std::size_t i = 0; i < named.size(); ++i)
        grad_tensors.push_back(nodes[i] ? ad::grad_or_zero(grads, nodes[i])
                                        : Tensor::zeros(named[i].value->shape()));

    adam_step(s.adam, named, grad_tensors);
    s.protos.renormalize();
    if (warmup || !cfg.ema_freeze_after_warmup) ema_update(s.ema, s.params);
    return diag;
}

// ---------------------------------------------------------------------------
// Evaluation: hard codes of the full training set against ground-truth modes,
// plus a Frechet distance between freshly sampled points and the data.
// Evaluation draws from its own seed-derived streams and never advances the
// training RNG.
// ---------------------------------------------------------------------------

// Integer quotas proportional to counts (largest-remainder rounding).
inline std::vector<std::size_t> proportional_allocation(const std::vector<std::size_t>& counts,
                                                        std::size_t total,
                                                        std::size_t quota_total) {
    const std::size_t k = counts.size();
    std::vector<std::size_t> quota(k, 0);
    if (total == 0 || quota_total == 0) {
        // nothing observed: spread evenly
        for (std::size_t i = 0; i < quota_total; ++i) quota[i % k]++;
        return quota;
    }
    std::vector<std::pair<double, std::size_t>> remainder(k);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double exact = static_cast<double>(counts[i]) * static_cast<double>(quota_total) /
                             static_cast<double>(total);
        quota[i] = static_cast<std::size_t>(exact);
        assigned += quota[i];
        remainder[i] = {exact - static_cast<double>(quota[i]), i};
    }
    std::sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t i = 0; assigned < quota_total; ++i, ++assigned) quota[remainder[i % k].second]++;
    return quota;
}

inline Tensor extract_dataset_features(const VelocityFieldParams& net, const FeatureHead& head,
                                       const PathKind& path, const Tensor& data, double t_s,
                                       std::size_t layer, Rng& rng) {
    const std::size_t n = data.shape()[0];
    const std::size_t chunk = 1024;
    Tensor noise = detail::draw_normal(rng, {n, 2});
    Tensor z_all;
    for (std::size_t lo = 0; lo < n; lo += chunk) {
        const std::size_t hi = std::min(n, lo + chunk);
        Tensor xb({hi - lo, 2});
        Tensor nb({hi - lo, 2});
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                xb(i - lo, j) = data(i, j);
                nb(i - lo, j) = noise(i, j);
            }
        Tensor z = extract_feature(net, head, path, xb, nb, t_s, layer);
        if (lo == 0) z_all = Tensor({n, z.shape()[1]});
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t j = 0; j < z.shape()[1]; ++j) z_all(i, j) = z(i - lo, j);
    }
    return z_all;
}

struct EvalResult {
    double nmi = 0.0;
    double ari = 0.0;
    double frechet = 0.0;
    Labeling codes;
    std::vector<std::size_t> histogram;
};

inline EvalResult evaluate(const TrainState& s, const Tensor& data, const Labeling& gt_labels,
                           std::size_t iter) {
    const TrainConfig& cfg = s.cfg;
    EvalResult out;

    Rng feat_rng(cfg.seed, 0xE0000000ull + iter);
    Tensor z = extract_dataset_features(s.ema.shadow, s.head, cfg.path, data, cfg.feature_t,
                                        cfg.feature_layer, feat_rng);
    TransportPlan plan = sinkhorn(matmul_nt(s.protos.m, z), cfg.sk);
    out.codes = hard_codes(plan);
    out.histogram = assignment_histogram(out.codes, cfg.clusters);
    out.nmi = nmi(out.codes, gt_labels);
    out.ari = ari(out.codes, gt_labels);

    Rng sample_rng(cfg.seed, 0x5A000000ull + iter);
    const std::size_t m = cfg.eval_samples;
    Tensor generated({m, 2});
    if (cfg.mode == GuidanceMode::Bootstrap) {
        // prototype counts follow the observed assignment distribution;
        // largest-remainder allocation avoids multinomial noise in the mixture
        std::vector<std::size_t> quota =
            proportional_allocation(out.histogram, out.codes.size(), m);
        std::vector<std::size_t> proto_of(m, 0);
        for (std::size_t k = 0, at = 0; k < cfg.clusters; ++k)
            for (std::size_t c = 0; c < quota[k]; ++c) proto_of[at++] = k;
        Tensor x_start = detail::draw_normal(sample_rng, {m, 2});
        for (std::size_t k = 0; k < cfg.clusters; ++k) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < m; ++i)
                if (proto_of[i] == k) members.push_back(i);
            if (members.empty()) continue;
            Tensor xs({members.size(), 2});
            for (std::size_t i = 0; i < members.size(); ++i)
                for (std::size_t j = 0; j < 2; ++j) xs(i, j) = x_start(members[i], j);
            IntegrationResult res =
                integrate(s.params, xs, cfg.sampler, ConditionInput(PrototypeCond{row(s.protos.m, k)}),
                          s.null_condition());
            for (std::size_t i = 0; i < members.size(); ++i)
                for (std::size_t j = 0; j < 2; ++j) generated(members[i], j) = res.samples(i, j);
        }
    } else {
        Tensor x_start = detail::draw_normal(sample_rng, {m, 2});
        IntegrationResult res =
            integrate(s.params, x_start, cfg.sampler, std::nullopt, ConditionInput(ZeroVector{}));
        generated = std::move(res.samples);
    }
    out.frechet = frechet_distance(generated, data);
    return out;
}

// ---------------------------------------------------------------------------
// Full training loop. Deterministic given the config seed; logs a baseline row
// at iteration 0 and a row every eval_interval plus the final iteration.
// ---------------------------------------------------------------------------

struct TrainResult {
    TrainState state;
    std::vector<MetricsRow> log;
};

using MetricsCallback = std::function<void(const MetricsRow&)>;

inline TrainResult run_training(const TrainConfig& cfg, const Dataset& dataset,
                                const MetricsCallback& on_row = {}) {
    cfg.validate();
    TrainState s = make_train_state(cfg);
    std::vector<MetricsRow> log;
    if (cfg.total_iters == 0) return {std::move(s), std::move(log)};

    s.standardization = fit_standardization(dataset.samples);
    Tensor data = s.standardization.apply(dataset.samples);
    const std::size_t n = data.shape()[0];

    {
        // baseline row: forward-only probe losses on a throwaway copy
        TrainState probe = s;
        probe.rng = Rng(cfg.seed, 0xBA5E0000ull);
        Tensor batch({std::min<std::size_t>(cfg.batch, n), 2});
        Rng brng(cfg.seed, 0xBA5E0001ull);
        for (std::size_t i = 0; i < batch.shape()[0]; ++i) {
            const std::size_t idx = brng.index(n);
            batch(i, 0) = data(idx, 0);
            batch(i, 1) = data(idx, 1);
        }
        StepDiagnostics d0 = train_step(probe, batch);
        EvalResult e0 = evaluate(s, data, dataset.mode_labels, 0);
        log.push_back({0, d0.loss_d, d0.loss_sk, 0.0, e0.nmi, e0.ari, e0.frechet});
        if (on_row) on_row(log.back());
    }

    for (std::size_t iter = 1; iter < cfg.total_iters; ++iter) {
        s.iter = iter;
        Tensor batch({cfg.batch, 2});
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            const std::size_t idx = s.rng.index(n);
            batch(i, 0) = data(idx, 0);
            batch(i, 1) = data(idx, 1);
        }
        StepDiagnostics diag = train_step(s, batch);
        if (iter % cfg.eval_interval == 0 || iter + 1 == cfg.total_iters) {
            EvalResult e = evaluate(s, data, dataset.mode_labels, iter);
            log.push_back(
                {iter, diag.loss_d, diag.loss_sk, diag.sk_weight, e.nmi, e.ari, e.frechet});
            if (on_row) on_row(log.back());
        }
    }
    return {std::move(s), std::move(log)};
}

// ---------------------------------------------------------------------------
// Offline guidance: fine-tune a pretrained field with one-hot cluster codes,
// dropping to the null embedding with probability p_drop. No Sinkhorn loss;
// only theta and the null embedding are updated.
// ---------------------------------------------------------------------------

inline StepDiagnostics offline_step(TrainState& s, const Tensor& x1,
                                    const std::vector<std::size_t>& batch_labels) {
    const TrainConfig& cfg = s.cfg;
    const std::size_t b = x1.shape()[0];
    const std::size_t cd = cfg.feature_dim;

    StepDiagnostics diag;
    diag.branch = "offline";
    Tensor noise = detail::draw_normal(s.rng, {b, 2});
    Tensor t = detail::draw_uniform(s.rng, b);

    Tensor cond_fixed({b, cd});
    Tensor null_sel({b, 1});
    diag.condition_codes.assign(b, StepDiagnostics::kNullCode);
    for (std::size_t i = 0; i < b; ++i) {
        if (batch_labels[i] >= cfg.clusters)
            throw std::runtime_error("offline: label " + std::to_string(batch_labels[i]) +
                                     " out of range for K=" + std::to_string(cfg.clusters));
        if (s.rng.bernoulli(cfg.p_drop)) {
            null_sel(i, 0) = 1.0;
            continue;
        }
        diag.condition_codes[i] = batch_labels[i];
        cond_fixed(i, batch_labels[i]) = 1.0;
    }
    ad::Value null_node = ad::parameter(s.null_embedding, "null_embedding");
    ad::Value cond_node = ad::add(ad::constant(std::move(cond_fixed)),
                                  ad::matmul(ad::constant(std::move(null_sel)), null_node));

    Tensor x_t = interpolate_rows(cfg.path, x1, noise, t);
    Tensor v_target = target_velocity_rows(cfg.path, x1, noise, t);
    VelocityParamNodes theta = velocity_param_nodes(s.params, "theta");
    ad::Value v = velocity_graph(s.params, theta, x_t, t, cond_node);
    ad::Value loss_d =
        ad::scale(ad::squared_error(v, ad::constant(std::move(v_target))), 2.0);
    diag.loss_d = loss_d->value.item();
    if (!std::isfinite(diag.loss_d))
        throw std::runtime_error("offline: non-finite loss at iteration " + std::to_string(s.iter));

    ad::GradMap grads = ad::backward(loss_d);
    std::vector<NamedParam> named;
    std::vector<ad::Value> nodes;
    for (std::size_t l = 0; l < s.params.weights.size(); ++l) {
        named.push_back({"theta.w" + std::to_string(l), &s.params.weights[l]});
        named.push_back({"theta.b" + std::to_string(l), &s.params.biases[l]});
        nodes.push_back(theta.weights[l]);
        nodes.push_back(theta.biases[l]);
    }
    named.push_back({"null_embedding", &s.null_embedding});
    nodes.push_back(null_node);
    std::vector<Tensor> grad_tensors;
    for (std::size_t i = 0; i < named.size(); ++i)
        grad_tensors.push_back(ad::grad_or_zero(grads, nodes[i]));
    adam_step(s.adam, named, grad_tensors);
    return diag;
}

// Probe loss of a state under given conditions (one-hot labels, or the null
// embedding when labels is null). Uses its own stream so paired comparisons
// see identical noise and timesteps.
inline double conditional_probe_loss(const TrainState& s, const Tensor& data,
                                     const Labeling* labels, std::size_t n_probe,
                                     std::uint64_t stream) {
    const TrainConfig& cfg = s.cfg;
    Rng rng(cfg.seed, stream);
    const std::size_t n = data.shape()[0];
    Tensor xb({n_probe, 2});
    Tensor cond({n_probe, cfg.feature_dim});
    for (std::size_t i = 0; i < n_probe; ++i) {
        const std::size_t idx = rng.index(n);
        xb(i, 0) = data(idx, 0);
        xb(i, 1) = data(idx, 1);
        if (labels) {
            cond(i, (*labels)[idx]) = 1.0;
        } else {
            for (std::size_t j = 0; j < cfg.feature_dim; ++j) cond(i, j) = s.null_embedding[j];
        }
    }
    Tensor noise = detail::draw_normal(rng, {n_probe, 2});
    Tensor t = detail::draw_uniform(rng, n_probe);
    Tensor x_t = interpolate_rows(cfg.path, xb, noise, t);
    Tensor v_target = target_velocity_rows(cfg.path, xb, noise, t);
    Tensor v = velocity_forward_rows(s.params, x_t, t, cond).v;
    double s2 = 0.0;
    for (std::size_t i = 0; i < v.numel(); ++i) {
        const double d = v[i] - v_target[i];
        s2 += d * d;
    }
    return s2 / static_cast<double>(n_probe);
}

struct OfflineResult {
    TrainState state;
    std::vector<MetricsRow> log;
};

inline OfflineResult train_offline(TrainState s, const Dataset& dataset, const Labeling& labels,
                                   const MetricsCallback& on_row = {}) {
    const TrainConfig cfg = s.cfg;
    cfg.validate();
    if (labels.size() != dataset.samples.shape()[0])
        throw std::runtime_error("offline: labels count " + std::to_string(labels.size()) +
                                 " != dataset size " +
                                 std::to_string(dataset.samples.shape()[0]));
    for (std::size_t v : labels)
        if (v >= cfg.clusters)
            throw std::runtime_error("offline: label " + std::to_string(v) +
                                     " out of range for K=" + std::to_string(cfg.clusters));
    if (cfg.clusters > cfg.feature_dim)
        throw std::runtime_error("offline: one-hot codes need clusters <= feature_dim");

    Tensor data = s.standardization.apply(dataset.samples);
    const std::size_t n = data.shape()[0];
    s.adam = AdamState{};
    s.adam.lr = cfg.lr;
    s.rng = Rng(cfg.seed, 3);
    s.iter = 0;

    std::vector<MetricsRow> log;
    if (cfg.total_iters == 0) return {std::move(s), std::move(log)};
    for (std::size_t iter = 1; iter < cfg.total_iters; ++iter) {
        s.iter = iter;
        Tensor batch({cfg.batch, 2});
        std::vector<std::size_t> batch_labels(cfg.batch);
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            const std::size_t idx = s.rng.index(n);
            batch(i, 0) = data(idx, 0);
            batch(i, 1) = data(idx, 1);
            batch_labels[i] = labels[idx];
        }
        StepDiagnostics diag = offline_step(s, batch, batch_labels);
        if (iter % cfg.eval_interval == 0 || iter + 1 == cfg.total_iters) {
            MetricsRow row;
            row.iter = iter;
            row.loss_d = diag.loss_d;
            row.loss_sk = 0.0;
            row.sk_weight = 0.0;
            row.nmi = nmi(labels, dataset.mode_labels);
            row.ari = ari(labels, dataset.mode_labels);

            Rng sample_rng(cfg.seed, 0x0FF1000ull + iter);
            const std::size_t m = cfg.eval_samples;
            std::vector<std::size_t> pick(m);
            for (std::size_t i = 0; i < m; ++i) pick[i] = labels[sample_rng.index(n)];
            Tensor x_start = detail::draw_normal(sample_rng, {m, 2});
            Tensor generated({m, 2});
            for (std::size_t k = 0; k < cfg.clusters; ++k) {
                std::vector<std::size_t> members;
                for (std::size_t i = 0; i < m; ++i)
                    if (pick[i] == k) members.push_back(i);
                if (members.empty()) continue;
                Tensor xs({members.size(), 2});
                for (std::size_t i = 0; i < members.size(); ++i)
                    for (std::size_t j = 0; j < 2; ++j) xs(i, j) = x_start(members[i], j);
                IntegrationResult res = integrate(
                    s.params, xs, cfg.sampler,
                    ConditionInput(ExternalCode{one_hot_code(k, cfg.feature_dim)}),
                    s.null_condition());
                for (std::size_t i = 0; i < members.size(); ++i)
                    for (std::size_t j = 0; j < 2; ++j) generated(members[i], j) = res.samples(i, j);
            }
            row.frechet = frechet_distance(generated, data);
            log.push_back(row);
            if (on_row) on_row(log.back());
        }
    }
    return {std::move(s), std::move(log)};
}

}  // namespace flowguide
