#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "odesr/expr/tree.hpp"
#include "odesr/random.hpp"

namespace odesr {

inline Node random_terminal(Rng& rng, Grammar const& grammar, std::size_t dimension)
{
    if (dimension > 0 && bernoulli(rng, grammar.variable_probability)) {
        return Node::variable(static_cast<std::uint32_t>(uniform_index(rng, dimension)));
    }
    return Node::parameter(uniform_real(rng, grammar.parameter_min, grammar.parameter_max));
}

// PTC2: expand randomly chosen open slots with functions while the length
// budget allows, then close every remaining slot with a terminal.
inline ExpressionTree create_random_tree(Rng& rng, Grammar const& grammar, std::size_t dimension,
    std::size_t target_length, std::size_t max_depth)
{
    struct Proto {
        Node node;
        std::vector<std::size_t> children;
    };
    struct Slot {
        std::size_t parent;
        std::size_t level;
    };

    std::vector<Proto> protos;
    std::vector<Slot> open;
    std::size_t final_length = 1;

    std::vector<Op> fitting;
    auto pick_function = [&](std::size_t level) -> std::optional<Op> {
        if (level >= max_depth) {
            return std::nullopt;
        }
        fitting.clear();
        for (auto f : grammar.functions) {
            if (final_length + static_cast<std::size_t>(arity(f)) <= target_length) {
                fitting.push_back(f);
            }
        }
        if (fitting.empty()) {
            return std::nullopt;
        }
        return fitting[uniform_index(rng, fitting.size())];
    };

    auto place = [&](std::optional<std::size_t> parent, std::size_t level, std::optional<Op> f) {
        auto idx = protos.size();
        if (f) {
            protos.push_back({ Node::function(*f), {} });
            final_length += static_cast<std::size_t>(arity(*f));
            for (int c = 0; c < arity(*f); ++c) {
                open.push_back({ idx, level + 1 });
            }
        } else {
            protos.push_back({ random_terminal(rng, grammar, dimension), {} });
        }
        if (parent) {
            protos[*parent].children.push_back(idx);
        }
    };

    place(std::nullopt, 1, pick_function(1));
    while (!open.empty()) {
        auto s = uniform_index(rng, open.size());
        Slot slot = open[s];
        open[s] = open.back();
        open.pop_back();
        place(slot.parent, slot.level, pick_function(slot.level));
    }

    // linearize to prefix order
    std::vector<Node> nodes;
    nodes.reserve(protos.size());
    std::vector<std::size_t> stack { 0 };
    while (!stack.empty()) {
        auto k = stack.back();
        stack.pop_back();
        nodes.push_back(protos[k].node);
        for (auto it = protos[k].children.rbegin(); it != protos[k].children.rend(); ++it) {
            stack.push_back(*it);
        }
    }
    return ExpressionTree(std::move(nodes));
}

} // namespace odesr
