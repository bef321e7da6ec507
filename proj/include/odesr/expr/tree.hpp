#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "odesr/expr/node.hpp"

namespace odesr {

// Raised for malformed trees. These are programming errors, never fitness cases.
class StructuralError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct TreeLimits {
    std::size_t max_length { 25 };
    std::size_t max_depth { 8 };
};

// Prefix-ordered expression. Node i's children start at i + 1; the second
// child of a binary node starts at i + 1 + nodes[i + 1].length.
class ExpressionTree {
public:
    ExpressionTree() = default;

    explicit ExpressionTree(std::vector<Node> nodes)
        : nodes_(std::move(nodes))
    {
        update_lengths();
    }

    [[nodiscard]] std::span<Node const> nodes() const noexcept { return nodes_; }
    [[nodiscard]] std::span<Node> nodes() noexcept { return nodes_; }
    [[nodiscard]] Node const& operator[](std::size_t i) const { return nodes_[i]; }
    [[nodiscard]] Node& operator[](std::size_t i) { return nodes_[i]; }
    [[nodiscard]] std::size_t length() const noexcept { return nodes_.size(); }
    [[nodiscard]] bool empty() const noexcept { return nodes_.empty(); }

    [[nodiscard]] std::size_t first_child(std::size_t i) const noexcept { return i + 1; }
    [[nodiscard]] std::size_t second_child(std::size_t i) const noexcept { return i + 1 + nodes_[i + 1].length; }

    // Recomputes subtree lengths; throws StructuralError if the prefix sequence
    // does not describe exactly one expression.
    void update_lengths()
    {
        if (nodes_.empty()) {
            throw StructuralError("empty expression tree");
        }
        if (nodes_.size() > 0xFFFF) {
            throw StructuralError("expression tree too long");
        }
        std::vector<std::uint16_t> stack;
        stack.reserve(nodes_.size());
        for (std::size_t k = nodes_.size(); k-- > 0;) {
            auto& n = nodes_[k];
            int a = arity(n.op);
            if (static_cast<int>(stack.size()) < a) {
                throw StructuralError("malformed prefix sequence: missing operands for " + std::string(op_name(n.op)));
            }
            std::uint16_t len = 1;
            for (int c = 0; c < a; ++c) {
                len = static_cast<std::uint16_t>(len + stack.back());
                stack.pop_back();
            }
            n.length = len;
            stack.push_back(len);
        }
        if (stack.size() != 1) {
            throw StructuralError("malformed prefix sequence: " + std::to_string(stack.size()) + " roots");
        }
    }

    // Depth of the whole tree (a single node has depth 1).
    [[nodiscard]] std::size_t depth() const { return nodes_.empty() ? 0 : depth_of(0); }

    [[nodiscard]] std::size_t depth_of(std::size_t i) const
    {
        // depth of subtree rooted at i, iterating its prefix range with a level stack
        std::size_t best = 0;
        std::vector<std::pair<int, std::size_t>> open; // remaining children, level
        std::size_t const end = i + nodes_[i].length;
        for (std::size_t k = i; k < end; ++k) {
            std::size_t level = open.empty() ? 1 : open.back().second + 1;
            best = std::max(best, level);
            if (!open.empty() && --open.back().first == 0) {
                open.pop_back();
            }
            int a = arity(nodes_[k].op);
            if (a > 0) {
                open.emplace_back(a, level);
            }
        }
        return best;
    }

    // Level of node i counted from the root (root = 1).
    [[nodiscard]] std::size_t level_of(std::size_t i) const
    {
        std::size_t level = 1;
        std::size_t k = 0;
        while (k != i) {
            // descend into the child whose range contains i
            std::size_t c = k + 1;
            while (!(i >= c && i < c + nodes_[c].length)) {
                c += nodes_[c].length;
            }
            k = c;
            ++level;
        }
        return level;
    }

    [[nodiscard]] std::vector<Node> subtree(std::size_t i) const
    {
        return { nodes_.begin() + static_cast<std::ptrdiff_t>(i), nodes_.begin() + static_cast<std::ptrdiff_t>(i + nodes_[i].length) };
    }

    // Returns a copy with the subtree at i replaced by `branch`.
    [[nodiscard]] ExpressionTree replace_subtree(std::size_t i, std::span<Node const> branch) const
    {
        std::vector<Node> out;
        out.reserve(nodes_.size() - nodes_[i].length + branch.size());
        out.insert(out.end(), nodes_.begin(), nodes_.begin() + static_cast<std::ptrdiff_t>(i));
        out.insert(out.end(), branch.begin(), branch.end());
        out.insert(out.end(), nodes_.begin() + static_cast<std::ptrdiff_t>(i + nodes_[i].length), nodes_.end());
        return ExpressionTree(std::move(out));
    }

    [[nodiscard]] bool within(TreeLimits const& limits) const
    {
        return length() <= limits.max_length && depth() <= limits.max_depth;
    }

    [[nodiscard]] std::size_t parameter_count() const
    {
        return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](Node const& n) { return n.op == Op::Parameter; }));
    }

    bool operator==(ExpressionTree const&) const = default;

private:
    std::vector<Node> nodes_;
};

// A system of D right-hand sides sharing one flat parameter vector. Parameter
// slots are numbered in order of appearance (tree 0 first, prefix order), so
// every slot is used by exactly one node.
class OdeSystemModel {
public:
    OdeSystemModel() = default;

    explicit OdeSystemModel(std::vector<ExpressionTree> trees)
        : trees_(std::move(trees))
    {
        renumber();
    }

    [[nodiscard]] std::size_t dimension() const noexcept { return trees_.size(); }
    [[nodiscard]] std::span<ExpressionTree const> trees() const noexcept { return trees_; }
    [[nodiscard]] ExpressionTree const& tree(std::size_t i) const { return trees_[i]; }
    [[nodiscard]] std::span<double const> theta() const noexcept { return theta_; }
    [[nodiscard]] std::size_t parameter_count() const noexcept { return theta_.size(); }

    // Replaces tree i and renumbers parameter slots.
    void set_tree(std::size_t i, ExpressionTree tree)
    {
        trees_.at(i) = std::move(tree);
        renumber();
    }

    void set_theta(std::span<double const> theta)
    {
        if (theta.size() != theta_.size()) {
            throw StructuralError("parameter vector size mismatch: expected " + std::to_string(theta_.size()) + ", got " + std::to_string(theta.size()));
        }
        std::copy(theta.begin(), theta.end(), theta_.begin());
        for (auto& t : trees_) {
            for (auto& n : t.nodes()) {
                if (n.op == Op::Parameter) {
                    n.value = theta_[n.index];
                }
            }
        }
    }

    // Throws StructuralError unless every tree is well formed, every variable
    // index is below `dim`, and parameter slots are a permutation of 0..P-1.
    void validate(std::size_t dim) const
    {
        if (trees_.empty()) {
            throw StructuralError("model has no equations");
        }
        if (trees_.size() != dim) {
            throw StructuralError("model dimension " + std::to_string(trees_.size()) + " does not match data dimension " + std::to_string(dim));
        }
        std::vector<bool> seen(theta_.size(), false);
        for (auto const& t : trees_) {
            ExpressionTree copy = t;
            copy.update_lengths();
            if (!(copy == t)) {
                throw StructuralError("stale subtree lengths");
            }
            for (auto const& n : t.nodes()) {
                if (n.op == Op::Variable && n.index >= dim) {
                    throw StructuralError("variable index out of range");
                }
                if (n.op == Op::Parameter) {
                    if (n.index >= theta_.size() || seen[n.index]) {
                        throw StructuralError("invalid or shared parameter slot");
                    }
                    seen[n.index] = true;
                }
            }
        }
        if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
            throw StructuralError("unused parameter slot");
        }
    }

    bool operator==(OdeSystemModel const&) const = default;

private:
    void renumber()
    {
        theta_.clear();
        for (auto& t : trees_) {
            for (auto& n : t.nodes()) {
                if (n.op == Op::Parameter) {
                    n.index = static_cast<std::uint32_t>(theta_.size());
                    theta_.push_back(n.value);
                }
            }
        }
    }

    std::vector<ExpressionTree> trees_;
    std::vector<double> theta_;
};

} // namespace odesr
