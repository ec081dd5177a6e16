#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "flowguide/tensor.hpp"

namespace flowguide::ad {

enum class Op {
    Constant,
    Parameter,
    Add,
    Mul,
    MatMul,
    Concat,
    Sum,
    Mean,
    SquaredError,
    Tanh,
    Silu,
    Scale,
    L2NormRows,
};

// One vertex of the (acyclic) computation graph. Values are computed eagerly
// at construction and are immutable afterwards; `cache` holds whatever the
// backward pass of the op wants precomputed (sigmoids, row norms).
struct Node {
    Tensor value;
    Op op = Op::Constant;
    std::vector<std::shared_ptr<Node>> parents;
    bool needs_grad = false;
    std::uint64_t id = 0;
    std::string name;
    double factor = 0.0;
    Tensor cache;
};

using Value = std::shared_ptr<Node>;

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
}

inline Value make_node(Tensor value, Op op, std::vector<Value> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = op;
    n->parents = std::move(parents);
    n->id = next_node_id();
    for (const auto& p : n->parents)
        if (p->needs_grad) n->needs_grad = true;
    return n;
}

inline Value constant(Tensor v) { return make_node(std::move(v), Op::Constant, {}); }

inline Value parameter(Tensor v, std::string name) {
    auto n = make_node(std::move(v), Op::Parameter, {});
    n->needs_grad = true;
    n->name = std::move(name);
    return n;
}

inline Value add(const Value& a, const Value& b) {
    return make_node(add(a->value, b->value), Op::Add, {a, b});
}

inline Value mul(const Value& a, const Value& b) {
    return make_node(mul(a->value, b->value), Op::Mul, {a, b});
}

inline Value matmul(const Value& a, const Value& b) {
    return make_node(matmul_nn(a->value, b->value), Op::MatMul, {a, b});
}

inline Value concat(const Value& a, const Value& b) {
    return make_node(concat_cols(a->value, b->value), Op::Concat, {a, b});
}

inline Value sum(const Value& a) {
    return make_node(Tensor::scalar(sum_all(a->value)), Op::Sum, {a});
}

inline Value mean(const Value& a) {
    return make_node(Tensor::scalar(sum_all(a->value) / static_cast<double>(a->value.numel())),
                     Op::Mean, {a});
}

inline Value squared_error(const Value& a, const Value& b) {
    if (!a->value.same_shape(b->value)) shape_error("squared_error", a->value, b->value);
    double s = 0.0;
    const double* pa = a->value.data();
    const double* pb = b->value.data();
    for (std::size_t i = 0; i < a->value.numel(); ++i) {
        const double d = pa[i] - pb[i];
        s += d * d;
    }
    return make_node(Tensor::scalar(s / static_cast<double>(a->value.numel())), Op::SquaredError,
                     {a, b});
}

inline Value tanh(const Value& a) {
    return make_node(tanh_eltwise(a->value), Op::Tanh, {a});
}

inline Value silu(const Value& a) {
    Tensor sig = sigmoid_eltwise(a->value);
    Tensor out = mul(a->value, sig);
    auto n = make_node(std::move(out), Op::Silu, {a});
    n->cache = std::move(sig);
    return n;
}

inline Value scale(const Value& a, double s) {
    auto n = make_node(flowguide::scale(a->value, s), Op::Scale, {a});
    n->factor = s;
    return n;
}

inline Value l2_normalize_rows(const Value& a) {
    const Tensor& x = a->value;
    Tensor out = flowguide::l2_normalize_rows(x);
    Tensor norms({x.shape()[0]});
    for (std::size_t i = 0; i < x.shape()[0]; ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < x.shape()[1]; ++j) n2 += x(i, j) * x(i, j);
        norms[i] = std::sqrt(n2);
    }
    auto n = make_node(std::move(out), Op::L2NormRows, {a});
    n->cache = std::move(norms);
    return n;
}

// Value at the root. Forward evaluation happens eagerly at graph construction;
// every node carries its cached value.
inline const Tensor& forward(const Value& root) { return root->value; }

using GradMap = std::unordered_map<std::uint64_t, Tensor>;

namespace detail {

// Reduce an upstream gradient of `a op b` back to b's shape when b was
// broadcast (scalar or row vector) against a.
inline Tensor reduce_to_shape(const Tensor& grad, const Tensor& like) {
    if (grad.same_shape(like)) return grad;
    if (like.numel() == 1) {
        Tensor out = like;
        out[0] = sum_all(grad);
        for (std::size_t i = 1; i < out.numel(); ++i) out[i] = 0.0;
        return out;
    }
    Tensor cs = col_sums(grad);
    if (like.rank() == 2) return Tensor({1, like.shape()[1]}, std::vector<double>(cs.data(), cs.data() + cs.numel()));
    return cs;
}

inline void accumulate(GradMap& grads, const Value& node, Tensor g) {
    auto it = grads.find(node->id);
    if (it == grads.end())
        grads.emplace(node->id, std::move(g));
    else
        it->second = flowguide::add(it->second, g);
}

inline std::vector<Value> topo_order(const Value& root) {
    std::vector<Value> order;
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<Value, std::size_t>> stack;
    if (!root->needs_grad) return order;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        bool descended = false;
        while (next < node->parents.size()) {
            const Value& p = node->parents[next++];
            if (p->needs_grad && !seen.count(p.get())) {
                seen.insert(p.get());
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && next >= stack.back().first->parents.size()) {
            order.push_back(stack.back().first);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace detail

// Reverse-mode differentiation from a scalar root. Returns gradients keyed by
// node id for every Parameter leaf reachable through grad-requiring edges.
inline GradMap backward(const Value& root) {
    if (root->value.numel() != 1)
        throw std::runtime_error("backward: root must be a scalar, got " + root->value.shape_str());
    GradMap adjoint;
    if (!root->needs_grad) return adjoint;

    std::vector<Value> order = detail::topo_order(root);
    adjoint.emplace(root->id, Tensor::filled(root->value.shape(), 1.0));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Value& node = *it;
        if (node->op == Op::Parameter || node->op == Op::Constant) continue;
        auto git = adjoint.find(node->id);
        if (git == adjoint.end()) continue;
        const Tensor g = std::move(git->second);
        const auto& ps = node->parents;
        auto push = [&](const Value& p, Tensor pg) {
            if (p->needs_grad) detail::accumulate(adjoint, p, std::move(pg));
        };
        switch (node->op) {
            case Op::Constant:
            case Op::Parameter:
                break;
            case Op::Add:
                push(ps[0], g);
                push(ps[1], detail::reduce_to_shape(g, ps[1]->value));
                break;
            case Op::Mul:
                push(ps[0], broadcast_apply("mul", g, ps[1]->value,
                                            [](double x, double y) { return x * y; }));
                push(ps[1], detail::reduce_to_shape(mul(g, ps[0]->value), ps[1]->value));
                break;
            case Op::MatMul:
                push(ps[0], matmul_nt(g, ps[1]->value));
                push(ps[1], matmul_tn(ps[0]->value, g));
                break;
            case Op::Concat: {
                const std::size_t m = node->value.shape()[0];
                const std::size_t ca = ps[0]->value.shape()[1];
                const std::size_t cb = ps[1]->value.shape()[1];
                Tensor ga({m, ca});
                Tensor gb({m, cb});
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < ca; ++j) ga(i, j) = g(i, j);
                    for (std::size_t j = 0; j < cb; ++j) gb(i, j) = g(i, ca + j);
                }
                push(ps[0], std::move(ga));
                push(ps[1], std::move(gb));
                break;
            }
            case Op::Sum:
                push(ps[0], Tensor::filled(ps[0]->value.shape(), g.item()));
                break;
            case Op::Mean:
                push(ps[0], Tensor::filled(ps[0]->value.shape(),
                                           g.item() / static_cast<double>(ps[0]->value.numel())));
                break;
            case Op::SquaredError: {
                const double c = 2.0 * g.item() / static_cast<double>(ps[0]->value.numel());
                Tensor diff = sub(ps[0]->value, ps[1]->value);
                push(ps[0], flowguide::scale(diff, c));
                push(ps[1], flowguide::scale(diff, -c));
                break;
            }
            case Op::Tanh: {
                Tensor d = node->value;
                double* pd = d.data();
                const double* pg = g.data();
                for (std::size_t i = 0; i < d.numel(); ++i) pd[i] = pg[i] * (1.0 - pd[i] * pd[i]);
                push(ps[0], std::move(d));
                break;
            }
            case Op::Silu: {
                // d/dx x*sig(x) = sig(x) * (1 + x*(1 - sig(x)))
                Tensor d = node->cache;
                double* pd = d.data();
                const double* px = ps[0]->value.data();
                const double* pg = g.data();
                for (std::size_t i = 0; i < d.numel(); ++i)
                    pd[i] = pg[i] * pd[i] * (1.0 + px[i] * (1.0 - pd[i]));
                push(ps[0], std::move(d));
                break;
            }
            case Op::Scale:
                push(ps[0], flowguide::scale(g, node->factor));
                break;
            case Op::L2NormRows: {
                const Tensor& y = node->value;
                const Tensor& norms = node->cache;
                Tensor d = g;
                const std::size_t m = y.shape()[0], c = y.shape()[1];
                for (std::size_t i = 0; i < m; ++i) {
                    double yg = 0.0;
                    for (std::size_t j = 0; j < c; ++j) yg += y(i, j) * g(i, j);
                    for (std::size_t j = 0; j < c; ++j) d(i, j) = (g(i, j) - y(i, j) * yg) / norms[i];
                }
                push(ps[0], std::move(d));
                break;
            }
        }
    }

    GradMap result;
    for (const auto& node : order)
        if (node->op == Op::Parameter) {
            auto git = adjoint.find(node->id);
            if (git != adjoint.end()) result.emplace(node->id, std::move(git->second));
        }
    return result;
}

inline const Tensor* find_grad(const GradMap& grads, const Value& param) {
    auto it = grads.find(param->id);
    return it == grads.end() ? nullptr : &it->second;
}

inline Tensor grad_or_zero(const GradMap& grads, const Value& param) {
    const Tensor* g = find_grad(grads, param);
    return g ? *g : Tensor::zeros(param->value.shape());
}

// Central-difference gradient check. `build` must deterministically construct
// a scalar graph from the given parameter nodes. Zero-gradient coordinates
// fall back to absolute error through the max(1, |analytic|) denominator.
inline double grad_check(const std::function<Value(const std::vector<Value>&)>& build,
                         std::vector<Tensor> params, double eps) {
    if (eps <= 0.0) throw std::runtime_error("grad_check: eps must be positive");
    auto eval = [&](const std::vector<Tensor>& ps) {
        std::vector<Value> nodes;
        nodes.reserve(ps.size());
        for (std::size_t i = 0; i < ps.size(); ++i)
            nodes.push_back(parameter(ps[i], "p" + std::to_string(i)));
        return std::pair<Value, std::vector<Value>>(build(nodes), std::move(nodes));
    };

    auto [root, nodes] = eval(params);
    GradMap grads = backward(root);

    double max_rel = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor analytic = grad_or_zero(grads, nodes[i]);
        for (std::size_t j = 0; j < params[i].numel(); ++j) {
            const double orig = params[i][j];
            params[i][j] = orig + eps;
            const double f_plus = eval(params).first->value.item();
            params[i][j] = orig - eps;
            const double f_minus = eval(params).first->value.item();
            params[i][j] = orig;
            const double fd = (f_plus - f_minus) / (2.0 * eps);
            const double a = analytic[j];
            const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace flowguide::ad
