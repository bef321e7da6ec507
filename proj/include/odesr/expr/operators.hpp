#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "odesr/expr/creation.hpp"
#include "odesr/expr/tree.hpp"
#include "odesr/random.hpp"

namespace odesr {

// Replaces a uniformly chosen subtree of `a` by a uniformly chosen subtree of
// `b`. Falls back to a copy of `a` when no attempt satisfies the limits.
inline ExpressionTree subtree_crossover(ExpressionTree const& a, ExpressionTree const& b, Rng& rng,
    TreeLimits const& limits = {}, int max_attempts = 10)
{
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        auto i = uniform_index(rng, a.length());
        auto j = uniform_index(rng, b.length());
        auto const grown = a.length() - a[i].length + b[j].length;
        if (grown > limits.max_length) {
            continue;
        }
        if (a.level_of(i) - 1 + b.depth_of(j) > limits.max_depth) {
            continue;
        }
        auto branch = b.subtree(j);
        return a.replace_subtree(i, branch);
    }
    return a;
}

enum class MutationKind {
    ReplaceBranch,
    ShiftAllParameters,
    ShiftOneParameter,
    ChangeFunction,
};

inline constexpr MutationKind all_mutation_kinds[] = {
    MutationKind::ReplaceBranch,
    MutationKind::ShiftAllParameters,
    MutationKind::ShiftOneParameter,
    MutationKind::ChangeFunction,
};

inline OdeSystemModel mutate(OdeSystemModel const& model, Rng& rng, MutationKind kind,
    Grammar const& grammar = {}, TreeLimits const& limits = {})
{
    std::normal_distribution<double> noise(0.0, 1.0);
    auto const dim = model.dimension();

    switch (kind) {
    case MutationKind::ReplaceBranch: {
        auto t = uniform_index(rng, dim);
        auto const& tree = model.tree(t);
        auto i = uniform_index(rng, tree.length());
        auto const rest = tree.length() - tree[i].length;
        auto const room = limits.max_length > rest ? limits.max_length - rest : 1;
        auto const level = tree.level_of(i);
        auto const depth_room = limits.max_depth >= level ? limits.max_depth - level + 1 : 1;
        auto target = 1 + uniform_index(rng, room);
        auto branch = create_random_tree(rng, grammar, dim, target, depth_room);
        OdeSystemModel out = model;
        out.set_tree(t, tree.replace_subtree(i, branch.nodes()));
        return out;
    }
    case MutationKind::ShiftAllParameters: {
        std::vector<double> theta(model.theta().begin(), model.theta().end());
        for (auto& v : theta) {
            v += noise(rng);
        }
        OdeSystemModel out = model;
        out.set_theta(theta);
        return out;
    }
    case MutationKind::ShiftOneParameter: {
        if (model.parameter_count() == 0) {
            return model;
        }
        std::vector<double> theta(model.theta().begin(), model.theta().end());
        theta[uniform_index(rng, theta.size())] += noise(rng);
        OdeSystemModel out = model;
        out.set_theta(theta);
        return out;
    }
    case MutationKind::ChangeFunction: {
        auto t = uniform_index(rng, dim);
        auto const& tree = model.tree(t);
        std::vector<std::size_t> functions;
        for (std::size_t k = 0; k < tree.length(); ++k) {
            if (is_function(tree[k].op)) {
                functions.push_back(k);
            }
        }
        if (functions.empty()) {
            return mutate(model, rng, MutationKind::ShiftOneParameter, grammar, limits);
        }
        auto k = functions[uniform_index(rng, functions.size())];
        std::vector<Op> alternatives;
        for (auto f : grammar.functions) {
            if (f != tree[k].op && arity(f) == arity(tree[k].op)) {
                alternatives.push_back(f);
            }
        }
        if (alternatives.empty()) {
            return mutate(model, rng, MutationKind::ShiftOneParameter, grammar, limits);
        }
        ExpressionTree changed = tree;
        changed[k].op = alternatives[uniform_index(rng, alternatives.size())];
        OdeSystemModel out = model;
        out.set_tree(t, std::move(changed));
        return out;
    }
    }
    return model;
}

inline OdeSystemModel mutate(OdeSystemModel const& model, Rng& rng, Grammar const& grammar = {}, TreeLimits const& limits = {})
{
    auto kind = all_mutation_kinds[uniform_index(rng, std::size(all_mutation_kinds))];
    return mutate(model, rng, kind, grammar, limits);
}

} // namespace odesr
