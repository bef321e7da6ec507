#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "odesr/expr/tree.hpp"

namespace odesr {

// Value plus partial derivatives with respect to a set of seeded inputs.
struct DualVector {
    double value { 0.0 };
    std::vector<double> partials;
};

namespace detail {
    inline std::vector<double>& value_scratch()
    {
        thread_local std::vector<double> buf;
        return buf;
    }
    inline std::vector<double>& grad_scratch()
    {
        thread_local std::vector<double> buf;
        return buf;
    }
} // namespace detail

// Plain evaluation of f(state, theta). Division is unprotected; IEEE
// non-finite results are returned as they are.
inline double evaluate(ExpressionTree const& tree, std::span<double const> state, std::span<double const> theta)
{
    auto const nodes = tree.nodes();
    auto const n = nodes.size();
    auto& val = detail::value_scratch();
    if (val.size() < n) {
        val.resize(n);
    }
    for (std::size_t k = n; k-- > 0;) {
        auto const& nd = nodes[k];
        switch (nd.op) {
        case Op::Variable: val[k] = state[nd.index]; break;
        case Op::Parameter: val[k] = theta[nd.index]; break;
        case Op::Constant: val[k] = nd.value; break;
        case Op::Add: val[k] = val[k + 1] + val[k + 1 + nodes[k + 1].length]; break;
        case Op::Sub: val[k] = val[k + 1] - val[k + 1 + nodes[k + 1].length]; break;
        case Op::Mul: val[k] = val[k + 1] * val[k + 1 + nodes[k + 1].length]; break;
        case Op::Div: val[k] = val[k + 1] / val[k + 1 + nodes[k + 1].length]; break;
        case Op::Pow: val[k] = std::pow(val[k + 1], val[k + 1 + nodes[k + 1].length]); break;
        case Op::Sin: val[k] = std::sin(val[k + 1]); break;
        case Op::Cos: val[k] = std::cos(val[k + 1]); break;
        }
    }
    return val[0];
}

// How the inputs of a forward-mode sweep are seeded.
//
// `state_seed` is a row-major D x width matrix: the tangent of state variable j
// is row j (empty span = states are constants). Parameter slot p gets the unit
// tangent at column `parameter_offset + p` when `seed_parameters` is set.
struct Seeding {
    std::size_t width { 0 };
    std::span<double const> state_seed {};
    bool seed_parameters { true };
    std::size_t parameter_offset { 0 };
};

// Forward-mode sweep. Writes the root tangent (length seeding.width) into
// `out` and returns the value.
inline double evaluate_forward(ExpressionTree const& tree, std::span<double const> state, std::span<double const> theta,
    Seeding const& seeding, std::span<double> out)
{
    auto const nodes = tree.nodes();
    auto const n = nodes.size();
    auto const w = seeding.width;
    auto& val = detail::value_scratch();
    auto& grad = detail::grad_scratch();
    if (val.size() < n) {
        val.resize(n);
    }
    if (grad.size() < n * w) {
        grad.resize(n * w);
    }
    double* g = grad.data();
    auto row = [&](std::size_t k) { return g + k * w; };

    for (std::size_t k = n; k-- > 0;) {
        auto const& nd = nodes[k];
        double* gk = row(k);
        switch (nd.op) {
        case Op::Variable: {
            val[k] = state[nd.index];
            if (seeding.state_seed.empty()) {
                std::fill(gk, gk + w, 0.0);
            } else {
                double const* s = seeding.state_seed.data() + nd.index * w;
                std::copy(s, s + w, gk);
            }
            break;
        }
        case Op::Parameter: {
            val[k] = theta[nd.index];
            std::fill(gk, gk + w, 0.0);
            if (seeding.seed_parameters) {
                gk[seeding.parameter_offset + nd.index] = 1.0;
            }
            break;
        }
        case Op::Constant: {
            val[k] = nd.value;
            std::fill(gk, gk + w, 0.0);
            break;
        }
        case Op::Add: {
            auto a = k + 1, b = k + 1 + nodes[k + 1].length;
            val[k] = val[a] + val[b];
            double const *ga = row(a), *gb = row(b);
            for (std::size_t i = 0; i < w; ++i) gk[i] = ga[i] + gb[i];
            break;
        }
        case Op::Sub: {
            auto a = k + 1, b = k + 1 + nodes[k + 1].length;
            val[k] = val[a] - val[b];
            double const *ga = row(a), *gb = row(b);
            for (std::size_t i = 0; i < w; ++i) gk[i] = ga[i] - gb[i];
            break;
        }
        case Op::Mul: {
            auto a = k + 1, b = k + 1 + nodes[k + 1].length;
            double va = val[a], vb = val[b];
            val[k] = va * vb;
            double const *ga = row(a), *gb = row(b);
            for (std::size_t i = 0; i < w; ++i) gk[i] = ga[i] * vb + va * gb[i];
            break;
        }
        case Op::Div: {
            auto a = k + 1, b = k + 1 + nodes[k + 1].length;
            double vb = val[b];
            double v = val[a] / vb;
            val[k] = v;
            double const *ga = row(a), *gb = row(b);
            for (std::size_t i = 0; i < w; ++i) gk[i] = (ga[i] - v * gb[i]) / vb;
            break;
        }
        case Op::Pow: {
            auto a = k + 1, b = k + 1 + nodes[k + 1].length;
            double va = val[a], vb = val[b];
            double v = std::pow(va, vb);
            val[k] = v;
            double da = vb * std::pow(va, vb - 1.0);
            double db = v * std::log(va);
            double const *ga = row(a), *gb = row(b);
            for (std::size_t i = 0; i < w; ++i) {
                // an input with zero tangent contributes nothing, even where its factor is not finite
                gk[i] = (ga[i] == 0.0 ? 0.0 : da * ga[i]) + (gb[i] == 0.0 ? 0.0 : db * gb[i]);
            }
            break;
        }
        case Op::Sin: {
            auto a = k + 1;
            double c = std::cos(val[a]);
            val[k] = std::sin(val[a]);
            double const* ga = row(a);
            for (std::size_t i = 0; i < w; ++i) gk[i] = c * ga[i];
            break;
        }
        case Op::Cos: {
            auto a = k + 1;
            double s = -std::sin(val[a]);
            val[k] = std::cos(val[a]);
            double const* ga = row(a);
            for (std::size_t i = 0; i < w; ++i) gk[i] = s * ga[i];
            break;
        }
        }
    }
    std::copy(g, g + w, out.begin());
    return val[0];
}

// Value and exact partials with respect to every parameter slot of theta.
inline DualVector evaluate_with_gradient(ExpressionTree const& tree, std::span<double const> state, std::span<double const> theta)
{
    DualVector r;
    r.partials.assign(theta.size(), 0.0);
    Seeding s { theta.size(), {}, true, 0 };
    r.value = evaluate_forward(tree, state, theta, s, r.partials);
    return r;
}

// Value and partials with respect to the state variables (columns 0..D-1)
// followed by the parameters (columns D..D+P-1).
inline DualVector evaluate_with_full_gradient(ExpressionTree const& tree, std::span<double const> state, std::span<double const> theta)
{
    auto const d = state.size();
    auto const w = d + theta.size();
    std::vector<double> seed(d * w, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        seed[j * w + j] = 1.0;
    }
    DualVector r;
    r.partials.assign(w, 0.0);
    Seeding s { w, seed, true, d };
    r.value = evaluate_forward(tree, state, theta, s, r.partials);
    return r;
}

} // namespace odesr
