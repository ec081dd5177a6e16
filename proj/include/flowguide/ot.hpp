#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "flowguide/autodiff.hpp"
#include "flowguide/nn.hpp"
#include "flowguide/paths.hpp"
#include "flowguide/rng.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

// K x B transport plan with row marginals 1/K and column marginals 1/B.
using TransportPlan = Tensor;

// lambda controls plan sharpness (kernel exp(lambda * scores)). Near-hard
// plans are what lets the equipartition constraint keep prototypes apart;
// smooth plans let prototypes and features contract onto a single direction.
struct SinkhornConfig {
    double lambda = 200.0;
    int iters = 3;
    double convergence_tol = 0.0;  // > 0 stops early once column marginals are within tol
};

struct Prototypes {
    Tensor m;  // [K x d], rows kept unit-norm

    static Prototypes init(std::size_t k, std::size_t d, Rng& rng) {
        Prototypes p;
        p.m = Tensor({k, d});
        for (double& v : p.m.values()) v = rng.normal();
        p.renormalize();
        return p;
    }

    std::size_t count() const { return m.shape()[0]; }
    std::size_t dim() const { return m.shape()[1]; }

    void renormalize() { m = l2_normalize_rows(m); }
};

// Single affine layer mapping captured hidden activations to unit-norm
// d-dimensional features.
struct FeatureHead {
    Tensor w;  // [hidden_width x d]
    Tensor b;  // [d]

    static FeatureHead init(std::size_t in_width, std::size_t d, Rng& rng) {
        FeatureHead h;
        h.w = Tensor({in_width, d});
        const double s = std::sqrt(1.0 / static_cast<double>(in_width));
        for (double& v : h.w.values()) v = s * rng.normal();
        h.b = Tensor({d});
        return h;
    }

    Tensor apply(const Tensor& activations) const {
        return l2_normalize_rows(add(matmul_nn(activations, w), b));
    }
};

namespace detail {

inline double logsumexp(const double* vals, std::size_t n, std::size_t stride) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, vals[i * stride]);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(vals[i * stride] - mx);
    return mx + std::log(s);
}

}  // namespace detail

// Entropic transport plan via alternating renormalization of exp(lambda*scores)
// toward uniform marginals, run in the log domain. The final step is a row
// normalization, so row sums hold exactly.
inline TransportPlan sinkhorn(const Tensor& scores, const SinkhornConfig& cfg) {
    if (scores.rank() != 2)
        throw std::runtime_error("sinkhorn: scores must be [KxB], got " + scores.shape_str());
    if (cfg.lambda <= 0.0) throw std::runtime_error("sinkhorn: lambda must be positive");
    if (cfg.iters < 1) throw std::runtime_error("sinkhorn: need at least one iteration");
    if (!scores.all_finite()) throw std::runtime_error("sinkhorn: non-finite scores");

    const std::size_t k = scores.shape()[0], b = scores.shape()[1];
    Tensor logk = scale(scores, cfg.lambda);
    std::vector<double> u(k, 0.0), v(b, 0.0);
    std::vector<double> buf(std::max(k, b));
    const double log_rk = std::log(1.0 / static_cast<double>(k));
    const double log_cb = std::log(1.0 / static_cast<double>(b));

    for (int it = 0; it < cfg.iters; ++it) {
        for (std::size_t j = 0; j < b; ++j) {
            for (std::size_t i = 0; i < k; ++i) buf[i] = logk(i, j) + u[i];
            const double lse = detail::logsumexp(buf.data(), k, 1);
            if (!std::isfinite(lse))
                throw std::runtime_error("sinkhorn: column " + std::to_string(j) + " has no mass");
            v[j] = log_cb - lse;
        }
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < b; ++j) buf[j] = logk(i, j) + v[j];
            const double lse = detail::logsumexp(buf.data(), b, 1);
            if (!std::isfinite(lse))
                throw std::runtime_error("sinkhorn: row " + std::to_string(i) + " has no mass");
            u[i] = log_rk - lse;
        }
        if (cfg.convergence_tol > 0.0) {
            double worst = 0.0;
            for (std::size_t j = 0; j < b; ++j) {
                double cs = 0.0;
                for (std::size_t i = 0; i < k; ++i) cs += std::exp(logk(i, j) + u[i] + v[j]);
                worst = std::max(worst, std::abs(cs - 1.0 / static_cast<double>(b)));
            }
            if (worst < cfg.convergence_tol) break;
        }
    }

    TransportPlan plan({k, b});
    for (std::size_t i = 0; i < k; ++i) {
        double rs = 0.0;
        for (std::size_t j = 0; j < b; ++j) {
            plan(i, j) = std::exp(logk(i, j) + u[i] + v[j]);
            rs += plan(i, j);
        }
        const double target = 1.0 / static_cast<double>(k);
        for (std::size_t j = 0; j < b; ++j) plan(i, j) *= target / rs;
    }
    return plan;
}

// Dual-Sinkhorn divergence <P, -M Z^T>_F with P treated as a constant.
inline double sk_loss(const TransportPlan& plan, const Tensor& prototypes, const Tensor& z) {
    Tensor scores = matmul_nt(prototypes, z);  // [K x B]
    if (!plan.same_shape(scores)) shape_error("sk_loss", plan, scores);
    return -dot(plan, scores);
}

// Graph form: gradient flows to the prototypes and, through Z, to the feature
// head; the plan is a constant. Uses <P, M Z^T> = <M, P Z>.
inline ad::Value sk_loss_graph(const TransportPlan& plan, const ad::Value& prototypes,
                               const ad::Value& z) {
    ad::Value pz = ad::matmul(ad::constant(plan), z);
    return ad::scale(ad::sum(ad::mul(pz, prototypes)), -1.0);
}

struct PrototypeAssignment {
    std::size_t index;
    Tensor row;
};

// argmax_m m^T z, ties broken by lowest index.
inline PrototypeAssignment assign_prototype(const Prototypes& protos, const Tensor& z) {
    if (z.numel() != protos.dim()) shape_error("assign_prototype", protos.m, z);
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < protos.count(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < protos.dim(); ++j) s += protos.m(i, j) * z[j];
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return {best, row(protos.m, best)};
}

// Column argmax of the plan; ties broken by lowest cluster index.
inline std::vector<std::size_t> hard_codes(const TransportPlan& plan) {
    if (plan.rank() != 2)
        throw std::runtime_error("hard_codes: plan must be [KxB], got " + plan.shape_str());
    const std::size_t k = plan.shape()[0], b = plan.shape()[1];
    std::vector<std::size_t> labels(b, 0);
    for (std::size_t j = 0; j < b; ++j) {
        double best = plan(0, j);
        std::size_t arg = 0;
        for (std::size_t i = 1; i < k; ++i)
            if (plan(i, j) > best) {
                best = plan(i, j);
                arg = i;
            }
        labels[j] = arg;
    }
    return labels;
}

// Features for guidance: forward the noised batch through the (EMA) network
// with the zero-vector condition, capture layer `layer`, apply the head and
// L2-normalize. Numeric, hence detached: no gradient reaches the network.
inline Tensor extract_feature(const VelocityFieldParams& net, const FeatureHead& head,
                              const PathKind& path, const Tensor& x_batch, const Tensor& noise,
                              double t_s, std::size_t layer) {
    Tensor x_ts = interpolate(path, x_batch, noise, t_s);
    return head.apply(forward_activations(net, x_ts, Tensor::scalar(t_s), ZeroVector{}, layer));
}

// Captured activations only (constant input to the differentiable head).
inline Tensor capture_activations(const VelocityFieldParams& net, const PathKind& path,
                                  const Tensor& x_batch, const Tensor& noise, double t_s,
                                  std::size_t layer) {
    Tensor x_ts = interpolate(path, x_batch, noise, t_s);
    return forward_activations(net, x_ts, Tensor::scalar(t_s), ZeroVector{}, layer);
}

inline ad::Value feature_graph(const Tensor& activations, const ad::Value& head_w,
                               const ad::Value& head_b) {
    return ad::l2_normalize_rows(
        ad::add(ad::matmul(ad::constant(activations), head_w), head_b));
}

// ---------------------------------------------------------------------------
// Offline clustering: Lloyd's algorithm with farthest-point seeding.
// ---------------------------------------------------------------------------

struct KmeansResult {
    Tensor centroids;  // [K x d]
    std::vector<std::size_t> labels;
};

inline KmeansResult kmeans(const Tensor& features, std::size_t k, std::size_t iters,
                           std::uint64_t seed) {
    if (features.rank() != 2)
        throw std::runtime_error("kmeans: features must be [Nxd], got " + features.shape_str());
    const std::size_t n = features.shape()[0], d = features.shape()[1];
    if (n < k)
        throw std::runtime_error("kmeans: need at least k=" + std::to_string(k) + " points, got " +
                                 std::to_string(n));
    if (iters < 1) throw std::runtime_error("kmeans: need at least one iteration");

    Rng rng(seed, 77);
    Tensor centroids({k, d});
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    std::size_t pick = rng.index(n);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t j = 0; j < d; ++j) centroids(c, j) = features(pick, j);
        if (c + 1 == k) break;
        std::size_t far = 0;
        double far_d2 = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = features(i, j) - centroids(c, j);
                d2 += diff * diff;
            }
            min_d2[i] = std::min(min_d2[i], d2);
            if (min_d2[i] > far_d2) {
                far_d2 = min_d2[i];
                far = i;
            }
        }
        pick = far;
    }

    std::vector<std::size_t> labels(n, 0);
    for (std::size_t it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t c = 0; c < k; ++c) {
                double d2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = features(i, j) - centroids(c, j);
                    d2 += diff * diff;
                }
                if (d2 < best) {
                    best = d2;
                    arg = c;
                }
            }
            labels[i] = arg;
        }
        Tensor sums({k, d});
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            counts[labels[i]]++;
            for (std::size_t j = 0; j < d; ++j) sums(labels[i], j) += features(i, j);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // re-seed an empty cluster to the point farthest from all centroids
                std::size_t far = 0;
                double far_d2 = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double nearest = std::numeric_limits<double>::infinity();
                    for (std::size_t c2 = 0; c2 < k; ++c2) {
                        double d2 = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                            const double diff = features(i, j) - centroids(c2, j);
                            d2 += diff * diff;
                        }
                        nearest = std::min(nearest, d2);
                    }
                    if (nearest > far_d2) {
                        far_d2 = nearest;
                        far = i;
                    }
                }
                for (std::size_t j = 0; j < d; ++j) centroids(c, j) = features(far, j);
            } else {
                for (std::size_t j = 0; j < d; ++j)
                    centroids(c, j) = sums(c, j) / static_cast<double>(counts[c]);
            }
        }
    }
    // final assignment against the last centroids
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t c = 0; c < k; ++c) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = features(i, j) - centroids(c, j);
                d2 += diff * diff;
            }
            if (d2 < best) {
                best = d2;
                arg = c;
            }
        }
        labels[i] = arg;
    }
    return {std::move(centroids), std::move(labels)};
}

}  // namespace flowguide
