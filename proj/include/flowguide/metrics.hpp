#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowguide/tensor.hpp"

namespace flowguide {

using Labeling = std::vector<std::size_t>;

namespace detail {

struct Contingency {
    std::size_t ka = 0, kb = 0, n = 0;
    std::vector<std::size_t> joint;  // ka x kb
    std::vector<std::size_t> ra, rb;

    static Contingency build(const Labeling& a, const Labeling& b) {
        if (a.size() != b.size())
            throw std::runtime_error("labelings differ in length: " + std::to_string(a.size()) +
                                     " vs " + std::to_string(b.size()));
        Contingency c;
        c.n = a.size();
        for (std::size_t v : a) c.ka = std::max(c.ka, v + 1);
        for (std::size_t v : b) c.kb = std::max(c.kb, v + 1);
        c.joint.assign(c.ka * c.kb, 0);
        c.ra.assign(c.ka, 0);
        c.rb.assign(c.kb, 0);
        for (std::size_t i = 0; i < c.n; ++i) {
            c.joint[a[i] * c.kb + b[i]]++;
            c.ra[a[i]]++;
            c.rb[b[i]]++;
        }
        return c;
    }
};

inline double entropy(const std::vector<std::size_t>& counts, std::size_t n) {
    double h = 0.0;
    for (std::size_t c : counts)
        if (c > 0) {
            const double p = static_cast<double>(c) / static_cast<double>(n);
            h -= p * std::log(p);
        }
    return h;
}

inline double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace detail

// Normalized mutual information I(a;b) / sqrt(H(a) H(b)). Both entropies zero
// is defined as 1; exactly one zero entropy is 0.
inline double nmi(const Labeling& a, const Labeling& b) {
    if (a.empty()) throw std::runtime_error("nmi: empty labelings");
    auto c = detail::Contingency::build(a, b);
    const double ha = detail::entropy(c.ra, c.n);
    const double hb = detail::entropy(c.rb, c.n);
    if (ha == 0.0 && hb == 0.0) return 1.0;
    if (ha == 0.0 || hb == 0.0) return 0.0;
    double mi = 0.0;
    for (std::size_t i = 0; i < c.ka; ++i)
        for (std::size_t j = 0; j < c.kb; ++j) {
            const std::size_t nij = c.joint[i * c.kb + j];
            if (nij == 0) continue;
            const double pij = static_cast<double>(nij) / static_cast<double>(c.n);
            const double pi = static_cast<double>(c.ra[i]) / static_cast<double>(c.n);
            const double pj = static_cast<double>(c.rb[j]) / static_cast<double>(c.n);
            mi += pij * std::log(pij / (pi * pj));
        }
    return mi / std::sqrt(ha * hb);
}

// Adjusted Rand index from the contingency table.
inline double ari(const Labeling& a, const Labeling& b) {
    if (a.size() < 2) throw std::runtime_error("ari: need at least 2 samples");
    auto c = detail::Contingency::build(a, b);
    double index = 0.0;
    for (std::size_t v : c.joint) index += detail::choose2(static_cast<double>(v));
    double sum_a = 0.0, sum_b = 0.0;
    for (std::size_t v : c.ra) sum_a += detail::choose2(static_cast<double>(v));
    for (std::size_t v : c.rb) sum_b += detail::choose2(static_cast<double>(v));
    const double pairs = detail::choose2(static_cast<double>(c.n));
    const double expected = sum_a * sum_b / pairs;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;  // both partitions trivial
    return (index - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Gaussian-fit Frechet distance over 2-D sample sets.
// ---------------------------------------------------------------------------

struct GaussianSummary {
    Tensor mean;  // [2]
    Tensor cov;   // [2 x 2], symmetric PSD
};

inline GaussianSummary gaussian_summary(const Tensor& samples) {
    if (samples.rank() != 2 || samples.shape()[1] != 2)
        throw std::runtime_error("gaussian_summary: need [Nx2] samples, got " +
                                 samples.shape_str());
    const std::size_t n = samples.shape()[0];
    if (n < 3)
        throw std::runtime_error("gaussian_summary: need at least 3 samples, got " +
                                 std::to_string(n));
    GaussianSummary g;
    g.mean = Tensor({2});
    for (std::size_t i = 0; i < n; ++i) {
        g.mean[0] += samples(i, 0);
        g.mean[1] += samples(i, 1);
    }
    g.mean[0] /= static_cast<double>(n);
    g.mean[1] /= static_cast<double>(n);
    g.cov = Tensor({2, 2});
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = samples(i, 0) - g.mean[0];
        const double dy = samples(i, 1) - g.mean[1];
        g.cov(0, 0) += dx * dx;
        g.cov(0, 1) += dx * dy;
        g.cov(1, 1) += dy * dy;
    }
    const double denom = static_cast<double>(n - 1);
    g.cov(0, 0) /= denom;
    g.cov(0, 1) /= denom;
    g.cov(1, 1) /= denom;
    g.cov(1, 0) = g.cov(0, 1);
    return g;
}

// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with the 2x2 square-root
// trace in closed form: tr sqrt(C) = sqrt(tr C + 2 sqrt(det C)).
inline double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
    const double dm0 = a.mean[0] - b.mean[0];
    const double dm1 = a.mean[1] - b.mean[1];
    const double mean_term = dm0 * dm0 + dm1 * dm1;

    const double tr_a = a.cov(0, 0) + a.cov(1, 1);
    const double tr_b = b.cov(0, 0) + b.cov(1, 1);
    double det_a = a.cov(0, 0) * a.cov(1, 1) - a.cov(0, 1) * a.cov(1, 0);
    double det_b = b.cov(0, 0) * b.cov(1, 1) - b.cov(0, 1) * b.cov(1, 0);
    const double scale = std::max({1.0, tr_a * tr_a, tr_b * tr_b});
    if (det_a < -1e-9 * scale || det_b < -1e-9 * scale)
        throw std::runtime_error("frechet_distance: covariance is not PSD");
    det_a = std::max(0.0, det_a);
    det_b = std::max(0.0, det_b);

    // tr(Sa Sb) for 2x2 symmetric matrices
    double tr_ab = a.cov(0, 0) * b.cov(0, 0) + 2.0 * a.cov(0, 1) * b.cov(0, 1) +
                   a.cov(1, 1) * b.cov(1, 1);
    double inner = tr_ab + 2.0 * std::sqrt(det_a * det_b);
    if (inner < -1e-9 * scale)
        throw std::runtime_error("frechet_distance: product matrix is not PSD");
    inner = std::max(0.0, inner);

    const double fd = mean_term + tr_a + tr_b - 2.0 * std::sqrt(inner);
    return std::max(0.0, fd);
}

inline double frechet_distance(const Tensor& samples_a, const Tensor& samples_b) {
    return frechet_distance(gaussian_summary(samples_a), gaussian_summary(samples_b));
}

inline std::vector<std::size_t> assignment_histogram(const Labeling& labels, std::size_t k) {
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t v : labels) {
        if (v >= k)
            throw std::runtime_error("assignment_histogram: label " + std::to_string(v) +
                                     " out of range for K=" + std::to_string(k));
        counts[v]++;
    }
    return counts;
}

}  // namespace flowguide
