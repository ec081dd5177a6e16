#include <doctest.h>

#include <cmath>

#include "flowguide/paths.hpp"
#include "flowguide/rng.hpp"

using namespace flowguide;

namespace {

Tensor rand_tensor(Rng& rng, std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("constant-velocity path hits both endpoints exactly") {
    Rng rng(1);
    Tensor d = rand_tensor(rng, {3, 2});
    Tensor n = rand_tensor(rng, {3, 2});
    Tensor at0 = interpolate(CvPath{}, d, n, 0.0);
    Tensor at1 = interpolate(CvPath{}, d, n, 1.0);
    for (std::size_t i = 0; i < d.numel(); ++i) {
        CHECK(at0[i] == d[i]);
        CHECK(at1[i] == n[i]);
    }
}

TEST_CASE("vp path at t=0 returns the data exactly") {
    Rng rng(2);
    Tensor d = rand_tensor(rng, {4, 2});
    Tensor n = rand_tensor(rng, {4, 2});
    Tensor at0 = interpolate(VpPath{10.0}, d, n, 0.0);
    for (std::size_t i = 0; i < d.numel(); ++i) CHECK(at0[i] == d[i]);
}

TEST_CASE("ve path at t=0 returns the data exactly") {
    Rng rng(3);
    Tensor d = rand_tensor(rng, {4, 2});
    Tensor n = rand_tensor(rng, {4, 2});
    Tensor at0 = interpolate(VePath{100.0}, d, n, 0.0);
    for (std::size_t i = 0; i < d.numel(); ++i) CHECK(at0[i] == d[i]);
}

TEST_CASE("constant-velocity target is noise - data for every t") {
    Rng rng(4);
    Tensor d = rand_tensor(rng, {2, 2});
    Tensor n = rand_tensor(rng, {2, 2});
    for (double t : {0.0, 0.25, 0.5, 0.99, 1.0}) {
        Tensor v = target_velocity(CvPath{}, d, n, t);
        for (std::size_t i = 0; i < d.numel(); ++i) CHECK(v[i] == n[i] - d[i]);
    }
}

TEST_CASE("target velocity matches central differences of the interpolant") {
    Rng rng(5);
    Tensor d = rand_tensor(rng, {3, 2});
    Tensor n = rand_tensor(rng, {3, 2});
    const double h = 1e-5;
    for (const PathKind& path : {PathKind(CvPath{}), PathKind(VpPath{10.0}), PathKind(VePath{100.0})}) {
        for (int k = 1; k <= 20; ++k) {
            const double t = static_cast<double>(k) / 21.0;
            Tensor v = target_velocity(path, d, n, t);
            Tensor hi = interpolate(path, d, n, t + h);
            Tensor lo = interpolate(path, d, n, t - h);
            for (std::size_t i = 0; i < d.numel(); ++i) {
                const double fd = (hi[i] - lo[i]) / (2.0 * h);
                INFO(path_name(path) << " t=" << t);
                CHECK(std::abs(v[i] - fd) < 1e-6);
            }
        }
    }
}

TEST_CASE("ve velocity magnitude at t=0 is ln(alpha_max) * |noise|") {
    Rng rng(6);
    Tensor d = rand_tensor(rng, {5, 2});
    Tensor n = rand_tensor(rng, {5, 2});
    Tensor v = target_velocity(VePath{100.0}, d, n, 0.0);
    for (std::size_t i = 0; i < n.numel(); ++i)
        CHECK(v[i] == doctest::Approx(std::log(100.0) * n[i]).epsilon(1e-12));
}

TEST_CASE("vp target velocity is singular at t=0 for beta > 0") {
    Rng rng(7);
    Tensor d = rand_tensor(rng, {2, 2});
    Tensor n = rand_tensor(rng, {2, 2});
    CHECK_THROWS_AS(target_velocity(VpPath{10.0}, d, n, 0.0), std::runtime_error);
    // with beta = 0 the noise coefficient's numerator vanishes too: analytic limit 0
    Tensor v = target_velocity(VpPath{0.0}, d, n, 0.0);
    for (std::size_t i = 0; i < v.numel(); ++i) CHECK(v[i] == 0.0);
}

TEST_CASE("interpolate rejects t outside [0,1]") {
    Tensor d({1, 2});
    Tensor n({1, 2});
    CHECK_THROWS_AS(interpolate(CvPath{}, d, n, -0.1), std::runtime_error);
    CHECK_THROWS_AS(interpolate(VePath{}, d, n, 1.5), std::runtime_error);
}

TEST_CASE("property: interpolate is affine in data and noise at fixed t") {
    Rng rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor d1 = rand_tensor(rng, {2, 2});
        Tensor d2 = rand_tensor(rng, {2, 2});
        Tensor n1 = rand_tensor(rng, {2, 2});
        Tensor n2 = rand_tensor(rng, {2, 2});
        const double a = rng.uniform(), t = rng.uniform(0.05, 0.95);
        for (const PathKind& path :
             {PathKind(CvPath{}), PathKind(VpPath{10.0}), PathKind(VePath{100.0})}) {
            Tensor mix_d = axpy(1.0 - a, d2, scale(d1, a));
            Tensor mix_n = axpy(1.0 - a, n2, scale(n1, a));
            Tensor lhs = interpolate(path, mix_d, mix_n, t);
            Tensor rhs = axpy(1.0 - a, interpolate(path, d2, n2, t),
                              scale(interpolate(path, d1, n1, t), a));
            for (std::size_t i = 0; i < lhs.numel(); ++i)
                CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("per-row interpolation matches the scalar version") {
    Rng rng(9);
    Tensor d = rand_tensor(rng, {4, 2});
    Tensor n = rand_tensor(rng, {4, 2});
    Tensor t({4}, {0.1, 0.4, 0.6, 0.9});
    Tensor rows = interpolate_rows(VpPath{10.0}, d, n, t);
    Tensor vrows = target_velocity_rows(VpPath{10.0}, d, n, t);
    for (std::size_t i = 0; i < 4; ++i) {
        Tensor di({1, 2}, {d(i, 0), d(i, 1)});
        Tensor ni({1, 2}, {n(i, 0), n(i, 1)});
        Tensor xi = interpolate(VpPath{10.0}, di, ni, t[i]);
        Tensor vi = target_velocity(VpPath{10.0}, di, ni, t[i]);
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(rows(i, j) == xi(0, j));
            CHECK(vrows(i, j) == vi(0, j));
        }
    }
}

TEST_CASE("path selection by config key") {
    CHECK(path_name(path_from_name("vp", 10, 100)) == "vp");
    CHECK(path_name(path_from_name("ve", 10, 100)) == "ve");
    CHECK(path_name(path_from_name("cv", 10, 100)) == "cv");
    CHECK_THROWS_AS(path_from_name("bogus", 10, 100), std::runtime_error);
}
