#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>

#include "flowguide/tensor.hpp"

namespace flowguide {

// Probability paths between data (t=0) and noise (t=1):
//   cv: x_t = (1-t) x_data + t x_noise
//   vp: x_t = a_t x_data + sqrt(1-a_t^2) x_noise,  a_t = exp(-beta t / 2)
//   ve: x_t = x_data + a_t x_noise,                a_t = alpha_max^t - 1
struct CvPath {};
struct VpPath {
    double beta = 10.0;
};
struct VePath {
    double alpha_max = 100.0;
};

using PathKind = std::variant<CvPath, VpPath, VePath>;

struct PathCoeffs {
    double data;   // coefficient of x_data
    double noise;  // coefficient of x_noise
};

inline void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0))
        throw std::runtime_error("path: t must lie in [0,1], got " + std::to_string(t));
}

inline PathCoeffs path_coeffs(const PathKind& path, double t) {
    check_time(t);
    if (std::holds_alternative<CvPath>(path)) return {1.0 - t, t};
    if (const VpPath* vp = std::get_if<VpPath>(&path)) {
        const double a = std::exp(-0.5 * vp->beta * t);
        return {a, std::sqrt(std::max(0.0, 1.0 - a * a))};
    }
    const VePath& ve = std::get<VePath>(path);
    return {1.0, std::pow(ve.alpha_max, t) - 1.0};
}

// d/dt of the interpolation coefficients. The vp noise coefficient
// beta a^2 / (2 sqrt(1-a^2)) is singular at t=0 for beta > 0.
inline PathCoeffs path_velocity_coeffs(const PathKind& path, double t) {
    check_time(t);
    if (std::holds_alternative<CvPath>(path)) return {-1.0, 1.0};
    if (const VpPath* vp = std::get_if<VpPath>(&path)) {
        const double a = std::exp(-0.5 * vp->beta * t);
        const double numer = vp->beta * a * a;
        const double denom2 = 1.0 - a * a;
        double dnoise;
        if (denom2 <= 0.0) {
            if (numer == 0.0)
                dnoise = 0.0;
            else
                throw std::runtime_error("vp path: target velocity is singular at t=0");
        } else {
            dnoise = 0.5 * numer / std::sqrt(denom2);
        }
        return {-0.5 * vp->beta * a, dnoise};
    }
    const VePath& ve = std::get<VePath>(path);
    return {0.0, std::log(ve.alpha_max) * std::pow(ve.alpha_max, t)};
}

namespace detail {

inline Tensor combine(const PathCoeffs& c, const Tensor& x_data, const Tensor& x_noise) {
    Tensor out = x_data;
    const double* pn = x_noise.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = c.data * po[i] + c.noise * pn[i];
    return out;
}

}  // namespace detail

inline Tensor interpolate(const PathKind& path, const Tensor& x_data, const Tensor& x_noise,
                          double t) {
    if (!x_data.same_shape(x_noise)) shape_error("interpolate", x_data, x_noise);
    return detail::combine(path_coeffs(path, t), x_data, x_noise);
}

inline Tensor target_velocity(const PathKind& path, const Tensor& x_data, const Tensor& x_noise,
                              double t) {
    if (!x_data.same_shape(x_noise)) shape_error("target_velocity", x_data, x_noise);
    return detail::combine(path_velocity_coeffs(path, t), x_data, x_noise);
}

// Row-wise variants with one timestep per batch row.
inline Tensor interpolate_rows(const PathKind& path, const Tensor& x_data, const Tensor& x_noise,
                               const Tensor& t) {
    if (!x_data.same_shape(x_noise)) shape_error("interpolate", x_data, x_noise);
    if (t.numel() != x_data.shape()[0]) shape_error("interpolate: t per row", x_data, t);
    Tensor out = x_data;
    const std::size_t c = x_data.shape()[1];
    for (std::size_t i = 0; i < x_data.shape()[0]; ++i) {
        const PathCoeffs pc = path_coeffs(path, t[i]);
        for (std::size_t j = 0; j < c; ++j)
            out(i, j) = pc.data * x_data(i, j) + pc.noise * x_noise(i, j);
    }
    return out;
}

inline Tensor target_velocity_rows(const PathKind& path, const Tensor& x_data,
                                   const Tensor& x_noise, const Tensor& t) {
    if (!x_data.same_shape(x_noise)) shape_error("target_velocity", x_data, x_noise);
    if (t.numel() != x_data.shape()[0]) shape_error("target_velocity: t per row", x_data, t);
    Tensor out = x_data;
    const std::size_t c = x_data.shape()[1];
    for (std::size_t i = 0; i < x_data.shape()[0]; ++i) {
        const PathCoeffs pc = path_velocity_coeffs(path, t[i]);
        for (std::size_t j = 0; j < c; ++j)
            out(i, j) = pc.data * x_data(i, j) + pc.noise * x_noise(i, j);
    }
    return out;
}

inline std::string path_name(const PathKind& path) {
    if (std::holds_alternative<CvPath>(path)) return "cv";
    if (std::holds_alternative<VpPath>(path)) return "vp";
    return "ve";
}

inline PathKind path_from_name(const std::string& name, double vp_beta, double ve_alpha_max) {
    if (name == "cv") return CvPath{};
    if (name == "vp") return VpPath{vp_beta};
    if (name == "ve") return VePath{ve_alpha_max};
    throw std::runtime_error("unknown path '" + name + "' (expected vp, ve or cv)");
}

}  // namespace flowguide
