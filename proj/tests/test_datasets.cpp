#include <doctest.h>

#include <cmath>

#include "flowguide/datasets.hpp"

using namespace flowguide;

TEST_CASE("ring with zero noise places modes exactly on the axes") {
    Dataset d = make_ring(4, 3, 1.0, 0.0, 7);
    const double expect[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    for (std::size_t i = 0; i < 12; ++i) {
        const std::size_t k = d.mode_labels[i];
        CHECK(d.samples(i, 0) == expect[k][0]);
        CHECK(d.samples(i, 1) == expect[k][1]);
    }
}

TEST_CASE("generators are deterministic per seed") {
    for (const char* name : {"ring8", "moons", "checkerboard"}) {
        Dataset a = make_dataset(name, 64, 0.05, 123);
        Dataset b = make_dataset(name, 64, 0.05, 123);
        Dataset c = make_dataset(name, 64, 0.05, 124);
        REQUIRE(a.samples.numel() == b.samples.numel());
        for (std::size_t i = 0; i < a.samples.numel(); ++i) CHECK(a.samples[i] == b.samples[i]);
        CHECK(a.mode_labels == b.mode_labels);
        bool any_diff = false;
        for (std::size_t i = 0; i < a.samples.numel(); ++i)
            if (a.samples[i] != c.samples[i]) any_diff = true;
        CHECK(any_diff);
    }
}

TEST_CASE("ring per-mode sample means stay within the standard-error bound") {
    const double noise = 0.2;
    const std::size_t per_mode = 400;
    Dataset d = make_ring(8, per_mode, 1.0, noise, 99);
    const double bound = 3.0 * noise / std::sqrt(static_cast<double>(per_mode));
    for (std::size_t k = 0; k < 8; ++k) {
        double mx = 0.0, my = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < d.samples.shape()[0]; ++i)
            if (d.mode_labels[i] == k) {
                mx += d.samples(i, 0);
                my += d.samples(i, 1);
                ++count;
            }
        mx /= static_cast<double>(count);
        my /= static_cast<double>(count);
        const double cx = std::cos(2.0 * M_PI * static_cast<double>(k) / 8.0);
        const double cy = std::sin(2.0 * M_PI * static_cast<double>(k) / 8.0);
        CHECK(std::abs(mx - cx) < bound);
        CHECK(std::abs(my - cy) < bound);
    }
}

TEST_CASE("noiseless moons lie on unit half-circles after de-offsetting") {
    Dataset d = make_moons(200, 0.0, 5);
    for (std::size_t i = 0; i < 200; ++i) {
        double x = d.samples(i, 0);
        double y = d.samples(i, 1);
        if (d.mode_labels[i] == 1) {
            x -= 1.0;
            y -= 0.5;
        }
        CHECK(std::abs(std::sqrt(x * x + y * y) - 1.0) < 1e-9);
    }
}

TEST_CASE("checkerboard samples land in the cell their label names") {
    Dataset d = make_checkerboard(500, 2);
    std::vector<std::pair<int, int>> active;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            if ((i + j) % 2 == 0) active.push_back({i, j});
    for (std::size_t s = 0; s < 500; ++s) {
        const int ci = static_cast<int>(std::floor(d.samples(s, 0) + 2.0));
        const int cj = static_cast<int>(std::floor(d.samples(s, 1) + 2.0));
        CHECK((ci + cj) % 2 == 0);
        CHECK(active[d.mode_labels[s]] == std::make_pair(ci, cj));
    }
}

TEST_CASE("labels partition the samples") {
    Dataset d = make_dataset("ring8", 80, 0.1, 3);
    CHECK(d.mode_labels.size() == d.samples.shape()[0]);
    for (std::size_t v : d.mode_labels) CHECK(v < d.modes);
    CHECK(d.samples.all_finite());
}

TEST_CASE("standardization gives zero mean and unit variance") {
    Dataset d = make_dataset("moons", 300, 0.1, 11);
    Standardization s = fit_standardization(d.samples);
    Tensor z = s.apply(d.samples);
    for (std::size_t j = 0; j < 2; ++j) {
        double mean = 0.0, var = 0.0;
        for (std::size_t i = 0; i < 300; ++i) mean += z(i, j);
        mean /= 300.0;
        for (std::size_t i = 0; i < 300; ++i) var += (z(i, j) - mean) * (z(i, j) - mean);
        var /= 300.0;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(std::abs(var - 1.0) < 1e-9);
    }
    Tensor back = s.invert(z);
    for (std::size_t i = 0; i < back.numel(); ++i)
        CHECK(back[i] == doctest::Approx(d.samples[i]).epsilon(1e-12));
}

TEST_CASE("unknown dataset name is rejected") {
    CHECK_THROWS_AS(make_dataset("spiral", 10, 0.1, 0), std::runtime_error);
}
