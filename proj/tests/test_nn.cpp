#include <doctest.h>

#include <cmath>

#include "flowguide/nn.hpp"
#include "flowguide/rng.hpp"

using namespace flowguide;

namespace {

VelocityFieldConfig small_config() {
    VelocityFieldConfig c;
    c.data_dim = 2;
    c.hidden_layers = 3;
    c.hidden_width = 16;
    c.cond_dim = 4;
    c.time_freqs = 4;
    return c;
}

Tensor rand_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = scale * rng.normal();
    return t;
}

}  // namespace

TEST_CASE("zero-initialized final layer outputs zero velocity for any input") {
    Rng rng(1);
    auto p = VelocityFieldParams::init(small_config(), rng);
    p.weights.back() = Tensor({16, 2});
    p.biases.back() = Tensor({2});
    Tensor x = rand_tensor(rng, {5, 2});
    Tensor t({5}, {0.1, 0.3, 0.5, 0.7, 0.9});
    Tensor v = velocity_forward(p, x, t, ZeroVector{}).v;
    for (std::size_t i = 0; i < v.numel(); ++i) CHECK(v[i] == 0.0);
}

TEST_CASE("zero vector and a nonzero null embedding produce different outputs") {
    Rng rng(2);
    auto p = VelocityFieldParams::init(small_config(), rng);
    // give the output layer generic weights so conditions reach the output
    p.weights.back() = rand_tensor(rng, {16, 2});
    Tensor x = rand_tensor(rng, {3, 2});
    Tensor t = Tensor::filled({3}, 0.4);
    Tensor null_value = rand_tensor(rng, {4});
    Tensor v0 = velocity_forward(p, x, t, ZeroVector{}).v;
    Tensor vn = velocity_forward(p, x, t, NullEmbedding{null_value}).v;
    double diff = 0.0;
    for (std::size_t i = 0; i < v0.numel(); ++i) diff += std::abs(v0[i] - vn[i]);
    CHECK(diff > 1e-8);
}

TEST_CASE("zero-valued external code is bit-identical to the zero vector") {
    Rng rng(3);
    auto p = VelocityFieldParams::init(small_config(), rng);
    p.weights.back() = rand_tensor(rng, {16, 2});
    Tensor x = rand_tensor(rng, {3, 2});
    Tensor t = Tensor::filled({3}, 0.25);
    Tensor v0 = velocity_forward(p, x, t, ZeroVector{}).v;
    Tensor vz = velocity_forward(p, x, t, ExternalCode{Tensor({4})}).v;
    for (std::size_t i = 0; i < v0.numel(); ++i) CHECK(v0[i] == vz[i]);
}

TEST_CASE("captured feature equals truncated recomputation") {
    Rng rng(4);
    auto p = VelocityFieldParams::init(small_config(), rng);
    Tensor x = rand_tensor(rng, {4, 2});
    Tensor t = Tensor::filled({4}, 0.2);
    for (std::size_t layer = 1; layer <= p.cfg.hidden_layers - 1; ++layer) {
        auto out = velocity_forward(p, x, t, ZeroVector{}, layer);
        REQUIRE(out.feature.has_value());
        Tensor trunc = forward_activations(p, x, t, ZeroVector{}, layer);
        for (std::size_t i = 0; i < trunc.numel(); ++i) CHECK((*out.feature)[i] == trunc[i]);
    }
}

TEST_CASE("capture layer bounds are enforced") {
    Rng rng(5);
    auto p = VelocityFieldParams::init(small_config(), rng);
    Tensor x = rand_tensor(rng, {2, 2});
    Tensor t = Tensor::filled({2}, 0.5);
    CHECK_THROWS_AS(velocity_forward(p, x, t, ZeroVector{}, 0), std::runtime_error);
    CHECK_THROWS_AS(velocity_forward(p, x, t, ZeroVector{}, p.cfg.hidden_layers),
                    std::runtime_error);
}

TEST_CASE("fewer than three hidden layers is rejected") {
    VelocityFieldConfig c = small_config();
    c.hidden_layers = 2;
    Rng rng(6);
    CHECK_THROWS_AS(VelocityFieldParams::init(c, rng), std::runtime_error);
}

TEST_CASE("t outside [0,1] is rejected") {
    Rng rng(7);
    auto p = VelocityFieldParams::init(small_config(), rng);
    Tensor x = rand_tensor(rng, {1, 2});
    CHECK_THROWS_AS(velocity_forward(p, x, Tensor::scalar(1.2), ZeroVector{}), std::runtime_error);
}

TEST_CASE("property: forward is batch-equivariant under row permutation") {
    Rng rng(8);
    auto p = VelocityFieldParams::init(small_config(), rng);
    p.weights.back() = rand_tensor(rng, {16, 2});
    Tensor x = rand_tensor(rng, {6, 2});
    Tensor t({6});
    for (double& v : t.values()) v = rng.uniform();
    Tensor v = velocity_forward(p, x, t, ZeroVector{}).v;

    std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
    Tensor xp({6, 2});
    Tensor tp({6});
    for (std::size_t i = 0; i < 6; ++i) {
        tp[i] = t[perm[i]];
        for (std::size_t j = 0; j < 2; ++j) xp(i, j) = x(perm[i], j);
    }
    Tensor vp = velocity_forward(p, xp, tp, ZeroVector{}).v;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 2; ++j) CHECK(vp(i, j) == v(perm[i], j));
}

TEST_CASE("graph forward agrees with the numeric forward") {
    Rng rng(9);
    auto p = VelocityFieldParams::init(small_config(), rng);
    p.weights.back() = rand_tensor(rng, {16, 2});
    Tensor x = rand_tensor(rng, {4, 2});
    Tensor t({4}, {0.9, 0.1, 0.5, 0.3});
    Tensor cond = rand_tensor(rng, {4, 4});
    Tensor v_num = velocity_forward_rows(p, x, t, cond).v;
    VelocityParamNodes nodes = velocity_param_nodes(p, "theta");
    ad::Value v_graph = velocity_graph(p, nodes, x, t, ad::constant(cond));
    for (std::size_t i = 0; i < v_num.numel(); ++i) CHECK(v_num[i] == v_graph->value[i]);
}

TEST_CASE("full velocity-field loss on a batch of 8 passes the gradient check") {
    Rng rng(12);
    auto p = VelocityFieldParams::init(small_config(), rng);
    p.weights.back() = rand_tensor(rng, {16, 2}, 0.4);
    Tensor x = rand_tensor(rng, {8, 2});
    Tensor t({8});
    for (double& v : t.values()) v = rng.uniform();
    Tensor cond = rand_tensor(rng, {8, 4}, 0.5);
    Tensor target = rand_tensor(rng, {8, 2});

    std::vector<Tensor> params;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        params.push_back(p.weights[l]);
        params.push_back(p.biases[l]);
    }
    auto build = [&](const std::vector<ad::Value>& ps) {
        VelocityParamNodes nodes;
        for (std::size_t l = 0; l < p.weights.size(); ++l) {
            nodes.weights.push_back(ps[2 * l]);
            nodes.biases.push_back(ps[2 * l + 1]);
        }
        ad::Value v = velocity_graph(p, nodes, x, t, ad::constant(cond));
        return ad::scale(ad::squared_error(v, ad::constant(target)), 2.0);
    };
    CHECK(ad::grad_check(build, params, 1e-5) < 1e-4);
}

TEST_CASE("time embedding is Lipschitz up to 2 pi f_max") {
    TimeEmbedding e = TimeEmbedding::make(16);
    const double bound = e.max_angular_frequency();
    Rng rng(10);
    for (int rep = 0; rep < 200; ++rep) {
        const double t1 = rng.uniform(), t2 = rng.uniform();
        Tensor a = e.embed(Tensor({1}, {t1}));
        Tensor b = e.embed(Tensor({1}, {t2}));
        for (std::size_t i = 0; i < a.numel(); ++i)
            CHECK(std::abs(a[i] - b[i]) <= bound * std::abs(t1 - t2) + 1e-12);
    }
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    Tensor w({3}, {1.0, -2.0, 0.5});
    AdamState st;
    st.lr = 0.1;
    std::vector<NamedParam> params = {{"w", &w}};
    std::vector<Tensor> grads = {Tensor({3})};
    adam_step(st, params, grads);
    adam_step(st, params, grads);
    CHECK(w[0] == 1.0);
    CHECK(w[1] == -2.0);
    CHECK(w[2] == 0.5);
}

TEST_CASE("adam: first step moves by about lr") {
    for (double g : {0.5, -3.0, 100.0}) {
        Tensor w = Tensor::scalar(1.0);
        AdamState st;
        st.lr = 1e-3;
        std::vector<NamedParam> params = {{"w", &w}};
        std::vector<Tensor> grads = {Tensor::scalar(g)};
        adam_step(st, params, grads);
        const double step = 1.0 - w.item();
        CHECK(std::abs(step) == doctest::Approx(st.lr).epsilon(1e-6));
        CHECK(step * g > 0.0);  // moves against the gradient
    }
}

TEST_CASE("adam: two steps match a straight-line reference implementation") {
    Tensor w = Tensor::scalar(0.0);
    AdamState st;
    st.lr = 0.01;
    std::vector<NamedParam> params = {{"w", &w}};
    adam_step(st, params, {Tensor::scalar(1.0)});
    adam_step(st, params, {Tensor::scalar(1.0)});

    // reference: textbook Adam unrolled by hand
    double m = 0, v = 0, x = 0;
    const double b1 = 0.9, b2 = 0.999, lr = 0.01, eps = 1e-8;
    for (int t = 1; t <= 2; ++t) {
        const double g = 1.0;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        x -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    CHECK(std::abs(w.item() - x) < 1e-12);
}

TEST_CASE("adam: NaN gradient is rejected with the parameter name") {
    Tensor w = Tensor::scalar(0.0);
    AdamState st;
    std::vector<NamedParam> params = {{"theta.w2", &w}};
    try {
        adam_step(st, params, {Tensor::scalar(std::nan(""))});
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("theta.w2") != std::string::npos);
    }
}

TEST_CASE("ema update follows mu * shadow + (1-mu) * params") {
    Rng rng(11);
    auto p = VelocityFieldParams::init(small_config(), rng);

    SUBCASE("mu = 1 freezes the shadow") {
        EmaState ema = EmaState::init(p, 1.0);
        VelocityFieldParams moved = p;
        for (double& v : moved.weights[0].values()) v += 1.0;
        ema_update(ema, moved);
        for (std::size_t i = 0; i < p.weights[0].numel(); ++i)
            CHECK(ema.shadow.weights[0][i] == p.weights[0][i]);
    }

    SUBCASE("mu = 0 copies the parameters") {
        EmaState ema = EmaState::init(p, 0.0);
        VelocityFieldParams moved = p;
        for (double& v : moved.weights[0].values()) v += 1.0;
        ema_update(ema, moved);
        for (std::size_t i = 0; i < p.weights[0].numel(); ++i)
            CHECK(ema.shadow.weights[0][i] == moved.weights[0][i]);
    }

    SUBCASE("mu = 0.999 from 0 toward 1 gives 0.001") {
        EmaState ema = EmaState::init(p, 0.999);
        for (double& v : ema.shadow.weights[0].values()) v = 0.0;
        VelocityFieldParams ones = p;
        for (double& v : ones.weights[0].values()) v = 1.0;
        ema_update(ema, ones);
        for (std::size_t i = 0; i < ema.shadow.weights[0].numel(); ++i)
            CHECK(ema.shadow.weights[0][i] == doctest::Approx(0.001).epsilon(1e-12));
    }
}
