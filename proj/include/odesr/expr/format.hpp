#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "odesr/expr/tree.hpp"

namespace odesr {

// Text form of a model:
//
//   dy1/dt = (-1.3999999999999999 * y1)
//   dy2/dt = ((1.3999999999999999 * y1) - (4.2000000000000002 * y2))
//   theta = -1.3999999999999999, 1.3999999999999999, 4.2000000000000002
//
// Numeric literals are trainable parameters, numbered in order of appearance.
// Frozen constants are written as const(<value>). Lines starting with '#' are
// comments.

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, std::size_t column, std::string const& what)
        : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what)
        , line_(line)
        , column_(column)
    {
    }
    [[nodiscard]] std::size_t line() const noexcept { return line_; }
    [[nodiscard]] std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

inline std::string format_number(double v)
{
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    // Shortest representation that reads back to the same double.
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::vector<std::string> default_variable_names(std::size_t dim)
{
    std::vector<std::string> names;
    for (std::size_t i = 0; i < dim; ++i) {
        names.push_back("y" + std::to_string(i + 1));
    }
    return names;
}

namespace detail {
    inline void write_infix(std::ostream& os, ExpressionTree const& tree, std::size_t k, std::vector<std::string> const& names)
    {
        auto const& n = tree[k];
        auto binary = [&](char const* sym) {
            os << '(';
            write_infix(os, tree, tree.first_child(k), names);
            os << ' ' << sym << ' ';
            write_infix(os, tree, tree.second_child(k), names);
            os << ')';
        };
        switch (n.op) {
        case Op::Add: binary("+"); break;
        case Op::Sub: binary("-"); break;
        case Op::Mul: binary("*"); break;
        case Op::Div: binary("/"); break;
        case Op::Pow:
            os << "pow(";
            write_infix(os, tree, tree.first_child(k), names);
            os << ", ";
            write_infix(os, tree, tree.second_child(k), names);
            os << ')';
            break;
        case Op::Sin:
        case Op::Cos:
            os << op_name(n.op) << '(';
            write_infix(os, tree, tree.first_child(k), names);
            os << ')';
            break;
        case Op::Variable: os << names.at(n.index); break;
        case Op::Parameter: os << format_number(n.value); break;
        case Op::Constant: os << "const(" << format_number(n.value) << ')'; break;
        }
    }
} // namespace detail

inline std::string to_infix(ExpressionTree const& tree, std::vector<std::string> const& names)
{
    std::ostringstream os;
    detail::write_infix(os, tree, 0, names);
    return os.str();
}

inline std::string serialize(OdeSystemModel const& model, std::vector<std::string> names = {})
{
    if (names.empty()) {
        names = default_variable_names(model.dimension());
    }
    std::ostringstream os;
    for (std::size_t i = 0; i < model.dimension(); ++i) {
        os << 'd' << names.at(i) << "/dt = " << to_infix(model.tree(i), names) << '\n';
    }
    os << "theta =";
    for (std::size_t p = 0; p < model.parameter_count(); ++p) {
        os << (p == 0 ? " " : ", ") << format_number(model.theta()[p]);
    }
    os << '\n';
    return os.str();
}

namespace detail {
    // Recursive-descent parser for one right-hand side. Produces prefix nodes
    // directly: binary operators are emitted as the operator followed by both
    // operand sequences.
    class ExprParser {
    public:
        ExprParser(std::string_view text, std::size_t line, std::size_t column_offset, std::vector<std::string> const& names)
            : text_(text)
            , line_(line)
            , offset_(column_offset)
            , names_(names)
        {
        }

        std::vector<Node> parse()
        {
            auto nodes = parse_sum();
            skip_ws();
            if (pos_ < text_.size()) {
                fail(pos_, "unexpected '" + std::string(1, text_[pos_]) + "'");
            }
            return nodes;
        }

    private:
        [[noreturn]] void fail(std::size_t at, std::string const& msg) const
        {
            throw ParseError(line_, offset_ + at + 1, msg);
        }

        void skip_ws()
        {
            while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
                ++pos_;
            }
        }

        bool accept(char c)
        {
            skip_ws();
            if (pos_ < text_.size() && text_[pos_] == c) {
                ++pos_;
                return true;
            }
            return false;
        }

        void expect_close(std::size_t open_at, std::string_view what)
        {
            skip_ws();
            if (pos_ >= text_.size()) {
                fail(open_at, "unclosed '" + std::string(what) + "('");
            }
            if (text_[pos_] != ')') {
                fail(pos_, "expected ')' to close '" + std::string(what) + "(' opened at column " + std::to_string(offset_ + open_at + 1));
            }
            ++pos_;
        }

        static std::vector<Node> combine(Op op, std::vector<Node> a, std::vector<Node> b)
        {
            std::vector<Node> out;
            out.reserve(1 + a.size() + b.size());
            out.push_back(Node::function(op));
            out.insert(out.end(), a.begin(), a.end());
            out.insert(out.end(), b.begin(), b.end());
            return out;
        }

        std::vector<Node> parse_sum()
        {
            auto lhs = parse_product();
            for (;;) {
                if (accept('+')) {
                    lhs = combine(Op::Add, std::move(lhs), parse_product());
                } else if (accept('-')) {
                    lhs = combine(Op::Sub, std::move(lhs), parse_product());
                } else {
                    return lhs;
                }
            }
        }

        std::vector<Node> parse_product()
        {
            auto lhs = parse_primary();
            for (;;) {
                if (accept('*')) {
                    lhs = combine(Op::Mul, std::move(lhs), parse_primary());
                } else if (accept('/')) {
                    lhs = combine(Op::Div, std::move(lhs), parse_primary());
                } else {
                    return lhs;
                }
            }
        }

        std::optional<double> try_number(bool negative)
        {
            auto start = pos_;
            if (text_.substr(pos_, 3) == "nan" || text_.substr(pos_, 3) == "inf") {
                auto after = pos_ + 3;
                if (after >= text_.size() || !(std::isalnum(static_cast<unsigned char>(text_[after])) || text_[after] == '_')) {
                    pos_ = after;
                    double v = text_[start] == 'n' ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
                    return negative ? -v : v;
                }
            }
            if (pos_ >= text_.size() || !(std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) {
                return std::nullopt;
            }
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
            if (ec != std::errc()) {
                fail(start, "invalid number");
            }
            pos_ = static_cast<std::size_t>(ptr - text_.data());
            return negative ? -v : v;
        }

        std::vector<Node> parse_primary()
        {
            skip_ws();
            if (pos_ >= text_.size()) {
                fail(pos_, "expected expression, found end of line");
            }
            auto start = pos_;
            char c = text_[pos_];
            if (c == '(') {
                ++pos_;
                auto inner = parse_sum();
                expect_close(start, "");
                return inner;
            }
            if (c == '-') {
                ++pos_;
                skip_ws();
                if (auto v = try_number(true)) {
                    return { Node::parameter(*v) };
                }
                fail(start, "unary minus is only supported on numeric literals");
            }
            if (auto v = try_number(false)) {
                return { Node::parameter(*v) };
            }
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
                    ++pos_;
                }
                std::string ident(text_.substr(start, pos_ - start));
                skip_ws();
                if (pos_ < text_.size() && text_[pos_] == '(') {
                    return parse_call(ident, start);
                }
                for (std::size_t i = 0; i < names_.size(); ++i) {
                    if (names_[i] == ident) {
                        return { Node::variable(static_cast<std::uint32_t>(i)) };
                    }
                }
                fail(start, "unknown variable '" + ident + "'");
            }
            fail(start, "unexpected '" + std::string(1, c) + "'");
        }

        std::vector<Node> parse_call(std::string const& name, std::size_t start)
        {
            auto open = pos_;
            ++pos_; // '('
            skip_ws();
            if (pos_ >= text_.size()) {
                fail(open, "unclosed '" + name + "('");
            }
            if (name == "sin" || name == "cos") {
                auto arg = parse_sum();
                expect_close(open, name);
                std::vector<Node> out { Node::function(name == "sin" ? Op::Sin : Op::Cos) };
                out.insert(out.end(), arg.begin(), arg.end());
                return out;
            }
            if (name == "pow") {
                auto a = parse_sum();
                if (!accept(',')) {
                    if (pos_ >= text_.size()) {
                        fail(open, "unclosed 'pow('");
                    }
                    fail(pos_, "expected ',' in pow");
                }
                auto b = parse_sum();
                expect_close(open, name);
                return combine(Op::Pow, std::move(a), std::move(b));
            }
            if (name == "const") {
                skip_ws();
                bool neg = false;
                if (pos_ < text_.size() && text_[pos_] == '-') {
                    neg = true;
                    ++pos_;
                }
                auto v = try_number(neg);
                if (!v) {
                    fail(pos_, "expected number in const()");
                }
                expect_close(open, name);
                return { Node::constant(*v) };
            }
            fail(start, "unknown function '" + name + "'");
        }

        std::string_view text_;
        std::size_t line_;
        std::size_t offset_;
        std::vector<std::string> const& names_;
        std::size_t pos_ { 0 };
    };

    inline std::string_view trim(std::string_view s)
    {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
            s.remove_prefix(1);
        }
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
            s.remove_suffix(1);
        }
        return s;
    }
} // namespace detail

struct ParsedModel {
    OdeSystemModel model;
    std::vector<std::string> variable_names;
};

inline ParsedModel deserialize_with_names(std::string_view text)
{
    struct Equation {
        std::size_t line;
        std::size_t rhs_column;
        std::string rhs;
    };
    std::vector<Equation> equations;
    std::vector<std::string> names;
    std::optional<std::vector<double>> theta;

    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = text.substr(start, end - start);
        ++line_no;
        start = end + 1;
        auto trimmed = detail::trim(line);
        if (trimmed.empty() || trimmed.front() == '#') {
            if (end == text.size()) {
                break;
            }
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError(line_no, 1, "expected '='");
        }
        auto lhs = detail::trim(line.substr(0, eq));
        auto rhs_col = eq + 1;
        if (lhs == "theta") {
            std::vector<double> values;
            std::size_t p = eq + 1;
            while (p < line.size()) {
                auto comma = line.find(',', p);
                if (comma == std::string_view::npos) {
                    comma = line.size();
                }
                auto item = detail::trim(line.substr(p, comma - p));
                if (!item.empty()) {
                    std::string s(item);
                    std::vector<std::string> none;
                    detail::ExprParser num(s, line_no, p, none);
                    auto nodes = num.parse();
                    if (nodes.size() != 1 || nodes[0].op != Op::Parameter) {
                        throw ParseError(line_no, p + 1, "theta entries must be numbers");
                    }
                    values.push_back(nodes[0].value);
                }
                p = comma + 1;
            }
            theta = std::move(values);
        } else {
            if (lhs.size() < 5 || lhs.front() != 'd' || lhs.substr(lhs.size() - 3) != "/dt") {
                throw ParseError(line_no, 1, "left-hand side must look like d<var>/dt");
            }
            auto name = lhs.substr(1, lhs.size() - 4);
            for (char c : name) {
                if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) {
                    throw ParseError(line_no, 2, "invalid variable name '" + std::string(name) + "'");
                }
            }
            names.emplace_back(name);
            equations.push_back({ line_no, rhs_col, std::string(line.substr(eq + 1)) });
        }
        if (end == text.size()) {
            break;
        }
    }
    if (equations.empty()) {
        throw ParseError(line_no, 1, "no equations found");
    }

    std::vector<ExpressionTree> trees;
    for (auto const& e : equations) {
        detail::ExprParser parser(e.rhs, e.line, e.rhs_column, names);
        trees.emplace_back(parser.parse());
    }
    OdeSystemModel model(std::move(trees));
    if (theta) {
        if (theta->size() != model.parameter_count()) {
            throw ParseError(line_no, 1, "theta lists " + std::to_string(theta->size()) + " values but the equations contain " + std::to_string(model.parameter_count()) + " parameters");
        }
        model.set_theta(*theta);
    }
    return { std::move(model), std::move(names) };
}

inline OdeSystemModel deserialize(std::string_view text)
{
    return deserialize_with_names(text).model;
}

} // namespace odesr
