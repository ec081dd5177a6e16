#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowguide/metrics.hpp"
#include "flowguide/rng.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

struct Dataset {
    Tensor samples;  // [N x 2]
    Labeling mode_labels;
    std::string name;
    std::uint64_t seed = 0;
    std::size_t modes = 1;
};

namespace detail {

// cos/sin of a fraction of a full turn; quarter turns come out exact.
inline void unit_circle_point(double turns, double& c, double& s) {
    const double t = turns - std::floor(turns);
    const double quarter = t * 4.0;
    const double qr = std::round(quarter);
    if (quarter == qr) {
        static const double table[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
        const int q = static_cast<int>(qr) % 4;
        c = table[q][0];
        s = table[q][1];
        return;
    }
    c = std::cos(2.0 * M_PI * t);
    s = std::sin(2.0 * M_PI * t);
}

}  // namespace detail

// `modes` isotropic Gaussian blobs on a circle of the given radius.
inline Dataset make_ring(std::size_t modes, std::size_t n_per_mode, double radius,
                         double noise_std, std::uint64_t seed) {
    if (modes < 1) throw std::runtime_error("make_ring: need at least one mode");
    if (noise_std < 0.0) throw std::runtime_error("make_ring: negative noise_std");
    Rng rng(seed, 11);
    Dataset d;
    d.name = "ring" + std::to_string(modes);
    d.seed = seed;
    d.modes = modes;
    const std::size_t n = modes * n_per_mode;
    d.samples = Tensor({n, 2});
    d.mode_labels.resize(n);
    std::size_t idx = 0;
    for (std::size_t k = 0; k < modes; ++k) {
        double cx, cy;
        detail::unit_circle_point(static_cast<double>(k) / static_cast<double>(modes), cx, cy);
        for (std::size_t i = 0; i < n_per_mode; ++i, ++idx) {
            d.samples(idx, 0) = radius * cx + noise_std * rng.normal();
            d.samples(idx, 1) = radius * cy + noise_std * rng.normal();
            d.mode_labels[idx] = k;
        }
    }
    return d;
}

// Two interleaved half circles: moon 0 on the unit circle at the origin
// (upper half), moon 1 on a unit circle centered at (1, 0.5) (lower half).
inline Dataset make_moons(std::size_t n, double noise_std, std::uint64_t seed) {
    if (noise_std < 0.0) throw std::runtime_error("make_moons: negative noise_std");
    Rng rng(seed, 12);
    Dataset d;
    d.name = "moons";
    d.seed = seed;
    d.modes = 2;
    d.samples = Tensor({n, 2});
    d.mode_labels.resize(n);
    const std::size_t n0 = (n + 1) / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const double theta = M_PI * rng.uniform();
        double x, y;
        if (i < n0) {
            x = std::cos(theta);
            y = std::sin(theta);
            d.mode_labels[i] = 0;
        } else {
            x = 1.0 - std::cos(theta);
            y = 0.5 - std::sin(theta);
            d.mode_labels[i] = 1;
        }
        d.samples(i, 0) = x + noise_std * rng.normal();
        d.samples(i, 1) = y + noise_std * rng.normal();
    }
    return d;
}

// 4x4 board over [-2,2)^2; the 8 cells with even (i+j) parity are populated
// uniformly, and the label is the cell's index among those 8.
inline Dataset make_checkerboard(std::size_t n, std::uint64_t seed) {
    Rng rng(seed, 13);
    Dataset d;
    d.name = "checkerboard";
    d.seed = seed;
    d.modes = 8;
    d.samples = Tensor({n, 2});
    d.mode_labels.resize(n);
    struct Cell {
        int i, j;
    };
    std::vector<Cell> active;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            if ((i + j) % 2 == 0) active.push_back({i, j});
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t c = rng.index(active.size());
        d.samples(s, 0) = -2.0 + active[c].i + rng.uniform();
        d.samples(s, 1) = -2.0 + active[c].j + rng.uniform();
        d.mode_labels[s] = c;
    }
    return d;
}

inline Dataset make_dataset(const std::string& name, std::size_t n, double noise_std,
                            std::uint64_t seed) {
    if (name == "ring8") return make_ring(8, n / 8, 1.0, noise_std, seed);
    if (name == "moons") return make_moons(n, noise_std, seed);
    if (name == "checkerboard") return make_checkerboard(n, seed);
    throw std::runtime_error("unknown dataset '" + name +
                             "' (expected ring8, moons or checkerboard)");
}

// ---------------------------------------------------------------------------
// Standardization to zero mean, unit per-axis variance.
// ---------------------------------------------------------------------------

struct Standardization {
    Tensor mean;  // [2]
    Tensor std;   // [2]

    Tensor apply(const Tensor& samples) const {
        Tensor out = samples;
        for (std::size_t i = 0; i < out.shape()[0]; ++i)
            for (std::size_t j = 0; j < 2; ++j) out(i, j) = (out(i, j) - mean[j]) / std[j];
        return out;
    }

    Tensor invert(const Tensor& samples) const {
        Tensor out = samples;
        for (std::size_t i = 0; i < out.shape()[0]; ++i)
            for (std::size_t j = 0; j < 2; ++j) out(i, j) = out(i, j) * std[j] + mean[j];
        return out;
    }
};

inline Standardization fit_standardization(const Tensor& samples) {
    if (samples.rank() != 2 || samples.shape()[1] != 2)
        throw std::runtime_error("fit_standardization: need [Nx2], got " + samples.shape_str());
    const std::size_t n = samples.shape()[0];
    Standardization s;
    s.mean = Tensor({2});
    s.std = Tensor({2});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 2; ++j) s.mean[j] += samples(i, j);
    for (std::size_t j = 0; j < 2; ++j) s.mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            const double diff = samples(i, j) - s.mean[j];
            s.std[j] += diff * diff;
        }
    for (std::size_t j = 0; j < 2; ++j) {
        s.std[j] = std::sqrt(s.std[j] / static_cast<double>(n));
        if (s.std[j] <= 0.0) s.std[j] = 1.0;
    }
    return s;
}

}  // namespace flowguide
