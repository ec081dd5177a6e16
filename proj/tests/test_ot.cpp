#include <doctest.h>

#include <cmath>
#include <vector>

#include "flowguide/ot.hpp"
#include "flowguide/paths.hpp"
#include "flowguide/rng.hpp"

using namespace flowguide;

namespace {

Tensor rand_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = scale * rng.normal();
    return t;
}

// Independent Sinkhorn oracle: linear-domain fixed-point iteration on the
// scaling vectors, run until both marginals are within tol.
Tensor sinkhorn_fixed_point_oracle(const Tensor& scores, double lambda, double tol,
                                   int max_iters = 100000) {
    const std::size_t k = scores.shape()[0], b = scores.shape()[1];
    double mx = scores[0];
    for (std::size_t i = 0; i < scores.numel(); ++i) mx = std::max(mx, scores[i]);
    Tensor kernel({k, b});
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < b; ++j) kernel(i, j) = std::exp(lambda * (scores(i, j) - mx));
    std::vector<double> u(k, 1.0), v(b, 1.0);
    const double rk = 1.0 / static_cast<double>(k), cb = 1.0 / static_cast<double>(b);
    for (int it = 0; it < max_iters; ++it) {
        for (std::size_t j = 0; j < b; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += kernel(i, j) * u[i];
            v[j] = cb / s;
        }
        for (std::size_t i = 0; i < k; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < b; ++j) s += kernel(i, j) * v[j];
            u[i] = rk / s;
        }
        double worst = 0.0;
        for (std::size_t j = 0; j < b; ++j) {
            double cs = 0.0;
            for (std::size_t i = 0; i < k; ++i) cs += u[i] * kernel(i, j) * v[j];
            worst = std::max(worst, std::abs(cs - cb));
        }
        for (std::size_t i = 0; i < k; ++i) {
            double rs = 0.0;
            for (std::size_t j = 0; j < b; ++j) rs += u[i] * kernel(i, j) * v[j];
            worst = std::max(worst, std::abs(rs - rk));
        }
        if (worst < tol) break;
    }
    Tensor p({k, b});
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < b; ++j) p(i, j) = u[i] * kernel(i, j) * v[j];
    return p;
}

}  // namespace

TEST_CASE("sinkhorn: constant scores give the uniform plan") {
    for (auto [k, b] : std::vector<std::pair<std::size_t, std::size_t>>{{2, 2}, {3, 5}, {1, 7}}) {
        Tensor scores = Tensor::filled({k, b}, 0.37);
        TransportPlan p = sinkhorn(scores, SinkhornConfig{20.0, 3});
        const double expect = 1.0 / static_cast<double>(k * b);
        for (std::size_t i = 0; i < p.numel(); ++i) {
            CHECK(p[i] == p[0]);  // perfectly symmetric
            CHECK(std::abs(p[i] - expect) < 1e-15);
        }
    }
}

TEST_CASE("sinkhorn: large lambda concentrates on the diagonal") {
    Tensor scores({2, 2}, {1, 0, 0, 1});
    TransportPlan p = sinkhorn(scores, SinkhornConfig{100.0, 3});
    CHECK(std::abs(p(0, 0) - 0.5) < 1e-6);
    CHECK(std::abs(p(1, 1) - 0.5) < 1e-6);
    CHECK(std::abs(p(0, 1)) < 1e-6);
    CHECK(std::abs(p(1, 0)) < 1e-6);
}

TEST_CASE("sinkhorn: 500 iterations match the fixed-point oracle") {
    Rng rng(5);
    Tensor scores({3, 4});
    for (double& v : scores.values()) v = rng.uniform(-1.0, 1.0);
    TransportPlan p = sinkhorn(scores, SinkhornConfig{5.0, 500});
    Tensor oracle = sinkhorn_fixed_point_oracle(scores, 5.0, 1e-12);
    for (std::size_t i = 0; i < p.numel(); ++i) CHECK(std::abs(p[i] - oracle[i]) < 1e-8);
}

TEST_CASE("sinkhorn invariants: marginals and positivity") {
    Rng rng(6);
    Tensor scores({4, 9});
    for (double& v : scores.values()) v = rng.uniform(-1.0, 1.0);
    TransportPlan p = sinkhorn(scores, SinkhornConfig{10.0, 500});
    for (std::size_t i = 0; i < 4; ++i) {
        double rs = 0.0;
        for (std::size_t j = 0; j < 9; ++j) {
            CHECK(p(i, j) > 0.0);
            rs += p(i, j);
        }
        CHECK(std::abs(rs - 0.25) < 1e-12);  // exact row normalization up to rounding
    }
    for (std::size_t j = 0; j < 9; ++j) {
        double cs = 0.0;
        for (std::size_t i = 0; i < 4; ++i) cs += p(i, j);
        CHECK(std::abs(cs - 1.0 / 9.0) < 1e-6);
    }
}

TEST_CASE("sinkhorn: column marginals approach 1/B monotonically in KL") {
    Rng rng(61);
    Tensor scores({5, 8});
    for (double& v : scores.values()) v = rng.uniform(-1.0, 1.0);
    double prev = 1e300;
    for (int iters : {1, 2, 4, 8, 16}) {
        TransportPlan p = sinkhorn(scores, SinkhornConfig{8.0, iters});
        double kl = 0.0;
        for (std::size_t j = 0; j < 8; ++j) {
            double cs = 0.0;
            for (std::size_t i = 0; i < 5; ++i) cs += p(i, j);
            kl += (1.0 / 8.0) * std::log((1.0 / 8.0) / cs);
        }
        CHECK(kl <= prev + 1e-12);
        prev = kl;
    }
}

TEST_CASE("sinkhorn: shift invariance of the normalized kernel") {
    Rng rng(7);
    Tensor scores({3, 6});
    for (double& v : scores.values()) v = rng.uniform(-1.0, 1.0);
    TransportPlan p1 = sinkhorn(scores, SinkhornConfig{20.0, 3});
    TransportPlan p2 = sinkhorn(add(scores, Tensor::scalar(3.7)), SinkhornConfig{20.0, 3});
    for (std::size_t i = 0; i < p1.numel(); ++i) CHECK(std::abs(p1[i] - p2[i]) < 1e-12);
}

TEST_CASE("sinkhorn rejects bad inputs") {
    Tensor scores({2, 2}, {0, 0, 0, 0});
    CHECK_THROWS_AS(sinkhorn(scores, SinkhornConfig{-1.0, 3}), std::runtime_error);
    CHECK_THROWS_AS(sinkhorn(scores, SinkhornConfig{1.0, 0}), std::runtime_error);
    Tensor bad({2, 2}, {0, 0, 0, std::nan("")});
    CHECK_THROWS_AS(sinkhorn(bad, SinkhornConfig{1.0, 3}), std::runtime_error);
}

TEST_CASE("sk_loss: uniform plan over constant scores gives -s") {
    const double s = 0.42;
    // all prototype/feature cosines equal s
    Tensor m({3, 4});
    Tensor z({5, 4});
    for (std::size_t i = 0; i < 3; ++i) m(i, 0) = 1.0;
    for (std::size_t i = 0; i < 5; ++i) {
        z(i, 0) = s;
        z(i, 1) = std::sqrt(1.0 - s * s);
    }
    TransportPlan p = Tensor::filled({3, 5}, 1.0 / 15.0);
    CHECK(sk_loss(p, m, z) == doctest::Approx(-s).epsilon(1e-12));
}

TEST_CASE("sk_loss: perfectly aligned prototypes give -1") {
    Rng rng(8);
    Prototypes protos = Prototypes::init(4, 6, rng);
    Tensor z = protos.m;  // z rows equal prototype rows
    TransportPlan p({4, 4});
    for (std::size_t i = 0; i < 4; ++i) p(i, i) = 0.25;
    CHECK(sk_loss(p, protos.m, z) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("sk_loss: matches the brute-force double loop") {
    Rng rng(9);
    Tensor m = rand_tensor(rng, {4, 5});
    Tensor z = rand_tensor(rng, {6, 5});
    Tensor p({4, 6});
    for (double& v : p.values()) v = rng.uniform();
    double brute = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            double mz = 0.0;
            for (std::size_t d = 0; d < 5; ++d) mz += m(i, d) * z(j, d);
            brute += p(i, j) * (-mz);
        }
    CHECK(sk_loss(p, m, z) == doctest::Approx(brute).epsilon(1e-12));
}

TEST_CASE("sk_loss graph value equals the numeric loss and differentiates") {
    Rng rng(10);
    Tensor m = l2_normalize_rows(rand_tensor(rng, {3, 4}));
    Tensor acts = rand_tensor(rng, {5, 7});
    Tensor hw = rand_tensor(rng, {7, 4}, 0.3);
    Tensor hb = rand_tensor(rng, {4}, 0.1);

    auto head_w = ad::parameter(hw, "head.w");
    auto head_b = ad::parameter(hb, "head.b");
    auto m_node = ad::parameter(m, "prototypes");
    auto z_node = feature_graph(acts, head_w, head_b);
    TransportPlan plan = sinkhorn(matmul_nt(m, z_node->value), SinkhornConfig{20.0, 3});
    auto loss = sk_loss_graph(plan, m_node, z_node);
    CHECK(loss->value.item() == doctest::Approx(sk_loss(plan, m, z_node->value)).epsilon(1e-12));

    // finite differences with the plan held constant (the training-loss contract)
    auto build = [&](const std::vector<ad::Value>& ps) {
        auto z = feature_graph(acts, ps[0], ps[1]);
        return sk_loss_graph(plan, ps[2], z);
    };
    CHECK(ad::grad_check(build, {hw, hb, m}, 1e-6) < 1e-4);
}

TEST_CASE("sk_loss decreases after one small gradient step on the prototypes") {
    Rng rng(11);
    Prototypes protos = Prototypes::init(3, 5, rng);
    Tensor z = l2_normalize_rows(rand_tensor(rng, {8, 5}));
    TransportPlan plan = sinkhorn(matmul_nt(protos.m, z), SinkhornConfig{10.0, 3});
    const double before = sk_loss(plan, protos.m, z);
    // dL/dM = -P Z; step M toward the plan-weighted feature means
    Tensor pz = matmul_nn(plan, z);
    Tensor stepped = axpy(0.05, pz, protos.m);
    CHECK(sk_loss(plan, stepped, z) < before);
}

TEST_CASE("assign_prototype basics and brute-force agreement") {
    Prototypes protos;
    protos.m = Tensor({2, 3}, {1, 0, 0, 0, 1, 0});
    Tensor e1({3}, {1, 0, 0});
    CHECK(assign_prototype(protos, e1).index == 0);

    // equidistant tie goes to the lowest index
    Tensor mid({3}, {std::sqrt(0.5), std::sqrt(0.5), 0});
    CHECK(assign_prototype(protos, mid).index == 0);

    Rng rng(12);
    Prototypes p5 = Prototypes::init(5, 4, rng);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor z = l2_normalize_rows(rand_tensor(rng, {1, 4}));
        Tensor zr = row(z, 0);
        std::size_t best = 0;
        double best_s = -1e300;
        for (std::size_t i = 0; i < 5; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) s += p5.m(i, j) * zr[j];
            if (s > best_s) {
                best_s = s;
                best = i;
            }
        }
        CHECK(assign_prototype(p5, zr).index == best);
    }
}

TEST_CASE("assign_prototype is invariant to positive rescaling before normalization") {
    Rng rng(13);
    Prototypes protos = Prototypes::init(6, 4, rng);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor raw = rand_tensor(rng, {1, 4});
        Tensor scaled = scale(raw, rng.uniform(0.1, 10.0));
        auto a = assign_prototype(protos, row(l2_normalize_rows(raw), 0));
        auto b = assign_prototype(protos, row(l2_normalize_rows(scaled), 0));
        CHECK(a.index == b.index);
    }
}

TEST_CASE("hard_codes basics and brute-force agreement") {
    TransportPlan diag({2, 2}, {0.4, 0.1, 0.1, 0.4});
    auto labels = hard_codes(diag);
    CHECK(labels == std::vector<std::size_t>{0, 1});

    TransportPlan uniform = Tensor::filled({3, 4}, 1.0 / 12.0);
    for (std::size_t v : hard_codes(uniform)) CHECK(v == 0);  // ties go low

    Rng rng(14);
    TransportPlan p({3, 8});
    for (double& v : p.values()) v = rng.uniform();
    auto got = hard_codes(p);
    for (std::size_t j = 0; j < 8; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < 3; ++i)
            if (p(i, j) > p(best, j)) best = i;
        CHECK(got[j] == best);
        CHECK(got[j] < 3);
    }
}

TEST_CASE("extract_feature: unit rows, stop-gradient, and ema agreement") {
    Rng rng(15);
    VelocityFieldConfig cfg;
    cfg.hidden_layers = 3;
    cfg.hidden_width = 12;
    cfg.cond_dim = 4;
    cfg.time_freqs = 4;
    auto params = VelocityFieldParams::init(cfg, rng);
    FeatureHead head = FeatureHead::init(12, 4, rng);
    Tensor x = rand_tensor(rng, {6, 2});
    Tensor noise = rand_tensor(rng, {6, 2});

    Tensor z = extract_feature(params, head, CvPath{}, x, noise, 0.2, 2);
    for (std::size_t i = 0; i < 6; ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < 4; ++j) n2 += z(i, j) * z(i, j);
        CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-9);
    }

    // after an ema update with mu = 0 the shadow equals the live parameters
    EmaState ema = EmaState::init(params, 0.0);
    VelocityFieldParams moved = params;
    for (double& v : moved.weights[1].values()) v += 0.25;
    ema_update(ema, moved);
    Tensor z_shadow = extract_feature(ema.shadow, head, CvPath{}, x, noise, 0.2, 2);
    Tensor z_live = extract_feature(moved, head, CvPath{}, x, noise, 0.2, 2);
    for (std::size_t i = 0; i < z_shadow.numel(); ++i) CHECK(z_shadow[i] == z_live[i]);
}

TEST_CASE("kmeans: two separated pairs recover the pair means exactly") {
    Tensor pts({4, 2}, {0.0, 0.0, 0.2, 0.0, 10.0, 10.0, 10.2, 10.0});
    KmeansResult r = kmeans(pts, 2, 20, 0);
    CHECK(r.labels[0] == r.labels[1]);
    CHECK(r.labels[2] == r.labels[3]);
    CHECK(r.labels[0] != r.labels[2]);
    for (std::size_t c = 0; c < 2; ++c) {
        const bool low = std::abs(r.centroids(c, 0) - 0.1) < 1e-12;
        const bool high = std::abs(r.centroids(c, 0) - 10.1) < 1e-12;
        CHECK((low || high));
        CHECK(std::abs(r.centroids(c, 1) - (low ? 0.0 : 10.0)) < 1e-12);
    }
}

TEST_CASE("kmeans: K=1 returns the global mean") {
    Rng rng(16);
    Tensor pts = rand_tensor(rng, {9, 3});
    KmeansResult r = kmeans(pts, 1, 5, 3);
    for (std::size_t j = 0; j < 3; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 9; ++i) mean += pts(i, j);
        mean /= 9.0;
        CHECK(r.centroids(0, j) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("kmeans: objective is non-increasing and matches an independent Lloyd run") {
    Rng rng(17);
    // three well-separated blobs of 10 points
    Tensor pts({30, 2});
    const double centers[3][2] = {{0, 0}, {8, 0}, {0, 8}};
    for (std::size_t i = 0; i < 30; ++i) {
        const std::size_t c = i / 10;
        pts(i, 0) = centers[c][0] + 0.3 * rng.normal();
        pts(i, 1) = centers[c][1] + 0.3 * rng.normal();
    }

    auto objective = [&](const KmeansResult& r) {
        double s = 0.0;
        for (std::size_t i = 0; i < 30; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                const double d = pts(i, j) - r.centroids(r.labels[i], j);
                s += d * d;
            }
        return s;
    };

    double prev = 1e300;
    for (std::size_t iters = 1; iters <= 6; ++iters) {
        const double obj = objective(kmeans(pts, 3, iters, 9));
        CHECK(obj <= prev + 1e-9);
        prev = obj;
    }

    // independent straight-line Lloyd reference from the data means of the
    // true blobs; on separated blobs both converge to the same partition
    Tensor cent({3, 2});
    for (std::size_t c = 0; c < 3; ++c) {
        cent(c, 0) = centers[c][0];
        cent(c, 1) = centers[c][1];
    }
    std::vector<std::size_t> ref(30);
    for (int it = 0; it < 10; ++it) {
        for (std::size_t i = 0; i < 30; ++i) {
            double best = 1e300;
            for (std::size_t c = 0; c < 3; ++c) {
                double d2 = 0.0;
                for (std::size_t j = 0; j < 2; ++j) {
                    const double d = pts(i, j) - cent(c, j);
                    d2 += d * d;
                }
                if (d2 < best) {
                    best = d2;
                    ref[i] = c;
                }
            }
        }
        Tensor sums({3, 2});
        std::size_t counts[3] = {0, 0, 0};
        for (std::size_t i = 0; i < 30; ++i) {
            counts[ref[i]]++;
            for (std::size_t j = 0; j < 2; ++j) sums(ref[i], j) += pts(i, j);
        }
        for (std::size_t c = 0; c < 3; ++c)
            if (counts[c])
                for (std::size_t j = 0; j < 2; ++j)
                    cent(c, j) = sums(c, j) / static_cast<double>(counts[c]);
    }
    KmeansResult mine = kmeans(pts, 3, 20, 9);
    // same partition up to label permutation
    std::size_t perm[3];
    for (std::size_t c = 0; c < 3; ++c) perm[mine.labels[c * 10]] = ref[c * 10];
    for (std::size_t i = 0; i < 30; ++i) CHECK(perm[mine.labels[i]] == ref[i]);
}

TEST_CASE("kmeans rejects fewer points than clusters") {
    Tensor pts({2, 2});
    CHECK_THROWS_AS(kmeans(pts, 3, 5, 0), std::runtime_error);
}

TEST_CASE("prototypes stay unit-norm after renormalization") {
    Rng rng(18);
    Prototypes protos = Prototypes::init(7, 5, rng);
    for (double& v : protos.m.values()) v *= 3.7;
    protos.renormalize();
    for (std::size_t i = 0; i < 7; ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < 5; ++j) n2 += protos.m(i, j) * protos.m(i, j);
        CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-9);
    }
}
