#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowguide/nn.hpp"
#include "flowguide/ot.hpp"
#include "flowguide/paths.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

enum class OdeMethod { Euler, Heun };

inline OdeMethod ode_method_from_name(const std::string& name) {
    if (name == "euler") return OdeMethod::Euler;
    if (name == "heun") return OdeMethod::Heun;
    throw std::runtime_error("unknown ODE method '" + name + "' (expected euler or heun)");
}

struct SamplerConfig {
    std::size_t steps = 50;
    double guidance = 0.4;
    OdeMethod method = OdeMethod::Euler;
};

// Classifier-free guidance: (1+g) v_cond - g v_null.
inline Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_null, double g) {
    if (g < 0.0) throw std::runtime_error("cfg: guidance strength must be >= 0");
    if (g == 0.0) return v_cond;
    return axpy(-g, v_null, scale(v_cond, 1.0 + g));
}

inline Tensor cfg_velocity(const VelocityFieldParams& p, const Tensor& x, const Tensor& t,
                           const ConditionInput& cond, const ConditionInput& null_cond,
                           double g) {
    if (g < 0.0) throw std::runtime_error("cfg: guidance strength must be >= 0");
    Tensor v_c = velocity_forward(p, x, t, cond).v;
    if (g == 0.0) return v_c;
    return cfg_combine(v_c, velocity_forward(p, x, t, null_cond).v, g);
}

struct IntegrationResult {
    Tensor samples;                 // state at t = 0
    std::vector<Tensor> estimates;  // data estimates x - t*v per step, then the final state
};

// Fixed-step integration of dx/dt = field(x, t) from t=1 down to t=0.
inline IntegrationResult integrate_field(const std::function<Tensor(const Tensor&, double)>& field,
                                         const Tensor& x_start, std::size_t steps,
                                         OdeMethod method) {
    if (steps < 1) throw std::runtime_error("integrate: need at least one step");
    const double dt = -1.0 / static_cast<double>(steps);
    IntegrationResult out;
    out.estimates.reserve(steps + 1);
    Tensor x = x_start;
    for (std::size_t i = 0; i < steps; ++i) {
        const double t = 1.0 - static_cast<double>(i) / static_cast<double>(steps);
        Tensor k1 = field(x, t);
        out.estimates.push_back(axpy(-t, k1, x));
        if (method == OdeMethod::Euler) {
            x = axpy(dt, k1, x);
        } else {
            Tensor x_pred = axpy(dt, k1, x);
            Tensor k2 = field(x_pred, t + dt);
            x = axpy(0.5 * dt, k2, axpy(0.5 * dt, k1, x));
        }
        if (!x.all_finite())
            throw std::runtime_error("integrate: non-finite state at step " + std::to_string(i));
    }
    out.estimates.push_back(x);
    out.samples = std::move(x);
    return out;
}

// Conditioned sampling. With a condition present the field is the CFG
// combination; otherwise it is the plain field under `null_cond`.
inline IntegrationResult integrate(const VelocityFieldParams& p, const Tensor& x_start,
                                   const SamplerConfig& cfg,
                                   const std::optional<ConditionInput>& cond,
                                   const ConditionInput& null_cond) {
    auto field = [&](const Tensor& x, double t) {
        Tensor tv = Tensor::scalar(t);
        if (cond) return cfg_velocity(p, x, tv, *cond, null_cond, cfg.guidance);
        return velocity_forward(p, x, tv, null_cond).v;
    };
    return integrate_field(field, x_start, cfg.steps, cfg.method);
}

// Query-conditioned sampling: noise the query to t_s, take its nearest
// prototype, then integrate conditioned on that prototype.
struct QuerySampleResult {
    std::size_t prototype_index;
    IntegrationResult result;
};

inline QuerySampleResult sample_by_query(const VelocityFieldParams& p,
                                         const VelocityFieldParams& feature_net,
                                         const FeatureHead& head, const Prototypes& protos,
                                         const PathKind& path, double t_s, std::size_t layer,
                                         const Tensor& query, const Tensor& query_noise,
                                         const Tensor& x_start, const SamplerConfig& cfg,
                                         const ConditionInput& null_cond) {
    Tensor q({1, query.numel()});
    for (std::size_t j = 0; j < query.numel(); ++j) q(0, j) = query[j];
    Tensor qn({1, query.numel()});
    for (std::size_t j = 0; j < query.numel(); ++j) qn(0, j) = query_noise[j];
    Tensor z = extract_feature(feature_net, head, path, q, qn, t_s, layer);
    PrototypeAssignment asg = assign_prototype(protos, row(z, 0));
    IntegrationResult res =
        integrate(p, x_start, cfg, ConditionInput(PrototypeCond{asg.row}), null_cond);
    return {asg.index, std::move(res)};
}

}  // namespace flowguide
