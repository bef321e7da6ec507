#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace odesr {

enum class Op : std::uint8_t {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Pow, // optional grammar extension, a^b
    Variable,
    Parameter,
    Constant,
};

constexpr int arity(Op op) noexcept
{
    switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Pow:
        return 2;
    case Op::Sin:
    case Op::Cos:
        return 1;
    default:
        return 0;
    }
}

constexpr bool is_function(Op op) noexcept { return arity(op) > 0; }
constexpr bool is_terminal(Op op) noexcept { return arity(op) == 0; }

constexpr std::string_view op_name(Op op) noexcept
{
    switch (op) {
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Pow: return "pow";
    case Op::Variable: return "var";
    case Op::Parameter: return "param";
    case Op::Constant: return "const";
    }
    return "?";
}

// One symbol of a prefix-encoded expression. `length` is the size of the
// subtree rooted here (including this node). For Parameter nodes `value`
// holds the current parameter value and `index` its slot in the model's
// flat parameter vector.
struct Node {
    Op op { Op::Constant };
    std::uint16_t length { 1 };
    std::uint32_t index { 0 };
    double value { 0.0 };

    static Node function(Op op) { return Node { op, 1, 0, 0.0 }; }
    static Node variable(std::uint32_t i) { return Node { Op::Variable, 1, i, 0.0 }; }
    static Node parameter(double v, std::uint32_t slot = 0) { return Node { Op::Parameter, 1, slot, v }; }
    static Node constant(double v) { return Node { Op::Constant, 1, 0, v }; }

    bool operator==(Node const&) const = default;
};

// The function and terminal symbols a run may use.
struct Grammar {
    std::vector<Op> functions { Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Sin, Op::Cos };
    // Probability that a terminal slot becomes a state variable rather than a parameter.
    double variable_probability { 0.5 };
    double parameter_min { -2.0 };
    double parameter_max { 2.0 };

    [[nodiscard]] bool allows(Op op) const
    {
        if (is_terminal(op)) {
            return op != Op::Constant;
        }
        for (auto f : functions) {
            if (f == op) {
                return true;
            }
        }
        return false;
    }

    // Default function set plus the power primitive.
    static Grammar with_power()
    {
        Grammar g;
        g.functions.push_back(Op::Pow);
        return g;
    }
};

} // namespace odesr
