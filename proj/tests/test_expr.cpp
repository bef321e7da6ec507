#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "odesr/expr/creation.hpp"
#include "odesr/expr/eval.hpp"
#include "odesr/expr/format.hpp"
#include "odesr/expr/operators.hpp"
#include "odesr/expr/tree.hpp"
#include "odesr/problems.hpp"

#include "oracles.hpp"

using namespace odesr;

namespace {

ExpressionTree make(std::vector<Node> nodes) { return ExpressionTree(std::move(nodes)); }

Node add() { return Node::function(Op::Add); }
Node mul() { return Node::function(Op::Mul); }
Node var(std::uint32_t i) { return Node::variable(i); }
Node par(double v) { return Node::parameter(v); }


OdeSystemModel random_model(Rng& rng, std::size_t dim, Grammar const& g = {})
{
    std::vector<ExpressionTree> trees;
    for (std::size_t i = 0; i < dim; ++i) {
        trees.push_back(create_random_tree(rng, g, dim, 3 + uniform_index(rng, 23), 8));
    }
    return OdeSystemModel(std::move(trees));
}

std::map<std::pair<int, double>, int> node_multiset(ExpressionTree const& t)
{
    std::map<std::pair<int, double>, int> m;
    for (auto const& n : t.nodes()) {
        double key = n.op == Op::Variable ? n.index : n.value;
        ++m[{ static_cast<int>(n.op), key }];
    }
    return m;
}

bool grammar_closed(ExpressionTree const& t, Grammar const& g, std::size_t dim)
{
    for (auto const& n : t.nodes()) {
        if (!g.allows(n.op) || (n.op == Op::Variable && n.index >= dim)) {
            return false;
        }
    }
    return true;
}

} // namespace

TEST(Evaluate, ChemicalReactionFirstEquation)
{
    auto t = make({ mul(), Node::constant(-1.4), var(0) });
    std::vector<double> state { 0.1, 0.0, 0.0 };
    EXPECT_NEAR(evaluate(t, state, {}), -0.14, 1e-15);
}

TEST(Evaluate, Identity)
{
    std::vector<double> state { 7.0 };
    EXPECT_EQ(evaluate(make({ var(0) }), state, {}), 7.0);
}

TEST(Evaluate, SinPlusCosOfZero)
{
    OdeSystemModel m({ make({ add(), Node::function(Op::Sin), par(0.0), Node::function(Op::Cos), par(0.0) }) });
    // two parameter nodes get two slots, both zero
    std::vector<double> theta { 0.0, 0.0 };
    EXPECT_EQ(evaluate(m.tree(0), std::vector<double> {}, theta), 1.0);
}

TEST(Evaluate, UnprotectedDivisionPropagatesInfinity)
{
    auto t = make({ Node::function(Op::Div), Node::constant(1.0), var(0) });
    std::vector<double> state { 0.0 };
    EXPECT_TRUE(std::isinf(evaluate(t, state, {})));
}

TEST(Gradient, ProductRule)
{
    OdeSystemModel m({ make({ mul(), par(2.0), var(0) }) });
    std::vector<double> state { 3.0 };
    auto g = evaluate_with_gradient(m.tree(0), state, m.theta());
    EXPECT_EQ(g.value, 6.0);
    ASSERT_EQ(g.partials.size(), 1u);
    EXPECT_EQ(g.partials[0], 3.0);
}

TEST(Gradient, SinAtZero)
{
    OdeSystemModel m({ make({ Node::function(Op::Sin), par(0.0) }) });
    auto g = evaluate_with_gradient(m.tree(0), std::vector<double> {}, m.theta());
    EXPECT_EQ(g.value, 0.0);
    EXPECT_EQ(g.partials[0], 1.0);
}

TEST(Gradient, MatchesCentralDifferencesOnRandomTrees)
{
    auto check = oracle::compare_gradients_on_random_trees(42, 100);
    EXPECT_EQ(check.checked, 100);
    EXPECT_LE(check.worst, 1e-6) << check.worst_case;
}

TEST(Gradient, FullGradientCoversStates)
{
    // f = p0 * x0 * x1 + sin(x1)
    OdeSystemModel m({ make({ add(), mul(), mul(), par(1.5), var(0), var(1), Node::function(Op::Sin), var(1) }) });
    std::vector<double> state { 2.0, 0.5 };
    auto g = evaluate_with_full_gradient(m.tree(0), state, m.theta());
    ASSERT_EQ(g.partials.size(), 3u);
    EXPECT_DOUBLE_EQ(g.partials[0], 1.5 * 0.5);
    EXPECT_DOUBLE_EQ(g.partials[1], 1.5 * 2.0 + std::cos(0.5));
    EXPECT_DOUBLE_EQ(g.partials[2], 2.0 * 0.5);
}

TEST(Creation, TargetOneGivesSingleTerminal)
{
    Rng rng(1);
    for (int k = 0; k < 200; ++k) {
        auto t = create_random_tree(rng, Grammar {}, 2, 1, 8);
        ASSERT_EQ(t.length(), 1u);
        EXPECT_TRUE(is_terminal(t[0].op));
    }
}

TEST(Creation, LengthDistributionAroundTarget)
{
    Rng rng(7);
    double total = 0.0;
    std::size_t longest = 0;
    int const samples = 10000;
    for (int k = 0; k < samples; ++k) {
        auto t = create_random_tree(rng, Grammar {}, 3, 15, 8);
        total += static_cast<double>(t.length());
        longest = std::max(longest, t.length());
        ASSERT_LE(t.depth(), 8u);
    }
    double mean = total / samples;
    EXPECT_GE(mean, 10.0);
    EXPECT_LE(mean, 20.0);
    EXPECT_LE(longest, 25u);
}

TEST(Creation, RespectsDepthLimit)
{
    Rng rng(3);
    for (int k = 0; k < 2000; ++k) {
        auto t = create_random_tree(rng, Grammar {}, 2, 25, 4);
        ASSERT_LE(t.depth(), 4u);
        ASSERT_LE(t.length(), 25u);
    }
}

TEST(Creation, SampledTreesRoundTrip)
{
    Rng rng(11);
    for (int k = 0; k < 1000; ++k) {
        auto m = random_model(rng, 2);
        ASSERT_EQ(deserialize(serialize(m)), m) << serialize(m);
    }
}

TEST(Crossover, TerminalParentTakesSubtreeOfOther)
{
    Rng rng(5);
    auto a = make({ var(0) });
    auto b = make({ add(), mul(), par(1.0), var(1), Node::function(Op::Sin), var(0) });
    for (int k = 0; k < 200; ++k) {
        auto child = subtree_crossover(a, b, rng);
        bool found = false;
        for (std::size_t j = 0; j < b.length(); ++j) {
            if (std::ranges::equal(child.nodes(), b.subtree(j))) {
                found = true;
            }
        }
        EXPECT_TRUE(found);
    }
}

TEST(Crossover, RespectsLimitsOverManyTrials)
{
    Rng rng(9);
    TreeLimits limits;
    for (int k = 0; k < 10000; ++k) {
        auto a = create_random_tree(rng, Grammar {}, 3, 3 + uniform_index(rng, 23), 8);
        auto b = create_random_tree(rng, Grammar {}, 3, 3 + uniform_index(rng, 23), 8);
        auto child = subtree_crossover(a, b, rng, limits);
        ASSERT_LE(child.length(), 25u);
        ASSERT_LE(child.depth(), 8u);
        ASSERT_TRUE(grammar_closed(child, Grammar {}, 3));
        ExpressionTree copy = child;
        copy.update_lengths();
        ASSERT_EQ(copy, child);
    }
}

TEST(Crossover, IdenticalParentsStayWithinNodeMultiset)
{
    Rng rng(13);
    for (int k = 0; k < 1000; ++k) {
        auto a = create_random_tree(rng, Grammar {}, 2, 3 + uniform_index(rng, 10), 8);
        auto child = subtree_crossover(a, a, rng);
        auto parent_set = node_multiset(a);
        for (auto const& [key, count] : node_multiset(child)) {
            // the grafted subtree may duplicate nodes, but only symbols already present
            ASSERT_TRUE(parent_set.contains(key));
            (void)count;
        }
    }
}

TEST(Mutation, ShiftAllParametersKeepsStructure)
{
    Rng rng(17);
    OdeSystemModel m({ make({ add(), par(1.0), mul(), par(2.0), var(0) }) });
    auto out = mutate(m, rng, MutationKind::ShiftAllParameters);
    ASSERT_EQ(out.parameter_count(), 2u);
    EXPECT_NE(out.theta()[0], 1.0);
    EXPECT_NE(out.theta()[1], 2.0);
    auto const& a = m.tree(0);
    auto const& b = out.tree(0);
    ASSERT_EQ(a.length(), b.length());
    for (std::size_t k = 0; k < a.length(); ++k) {
        EXPECT_EQ(a[k].op, b[k].op);
        EXPECT_EQ(a[k].index, b[k].index);
    }
}

TEST(Mutation, ShiftAllParametersNoiseIsStandardNormal)
{
    Rng rng(19);
    OdeSystemModel m({ make({ add(), par(1.0), par(2.0) }) });
    double sum = 0.0, sq = 0.0;
    int const n = 20000;
    for (int k = 0; k < n; ++k) {
        auto out = mutate(m, rng, MutationKind::ShiftAllParameters);
        double e = out.theta()[0] - 1.0;
        sum += e;
        sq += e * e;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.03);
    EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Mutation, ShiftOneParameterChangesExactlyOne)
{
    Rng rng(23);
    OdeSystemModel m({ make({ add(), par(1.0), par(2.0) }), make({ mul(), par(3.0), var(1) }) });
    for (int k = 0; k < 100; ++k) {
        auto out = mutate(m, rng, MutationKind::ShiftOneParameter);
        int changed = 0;
        for (std::size_t p = 0; p < 3; ++p) {
            changed += out.theta()[p] != m.theta()[p];
        }
        EXPECT_EQ(changed, 1);
    }
}

TEST(Mutation, ChangeFunctionSwapsSameArity)
{
    Rng rng(29);
    OdeSystemModel m({ make({ add(), var(0), var(1) }), make({ add(), var(0), var(1) }) });
    for (int k = 0; k < 200; ++k) {
        auto out = mutate(m, rng, MutationKind::ChangeFunction);
        int changed = 0;
        for (std::size_t i = 0; i < 2; ++i) {
            auto op = out.tree(i)[0].op;
            if (op != Op::Add) {
                ++changed;
                EXPECT_TRUE(op == Op::Mul || op == Op::Sub || op == Op::Div);
            }
            EXPECT_EQ(out.tree(i)[1], m.tree(i)[1]);
            EXPECT_EQ(out.tree(i)[2], m.tree(i)[2]);
        }
        EXPECT_EQ(changed, 1);
    }
}

TEST(Mutation, ChangeFunctionWithoutFunctionsFallsBackToParameterShift)
{
    Rng rng(31);
    OdeSystemModel m({ make({ par(1.0) }) });
    auto out = mutate(m, rng, MutationKind::ChangeFunction);
    EXPECT_EQ(out.tree(0).length(), 1u);
    EXPECT_NE(out.theta()[0], 1.0);
}

TEST(Mutation, ReplaceBranchRespectsLimits)
{
    Rng rng(37);
    TreeLimits limits;
    for (int k = 0; k < 10000; ++k) {
        auto m = random_model(rng, 2);
        auto out = mutate(m, rng, MutationKind::ReplaceBranch, Grammar {}, limits);
        for (auto const& t : out.trees()) {
            ASSERT_TRUE(t.within(limits)) << t.length() << " nodes, depth " << t.depth();
        }
        ASSERT_NO_THROW(out.validate(2));
        ASSERT_EQ(deserialize(serialize(out)), out);
    }
}

TEST(Operators, FuzzPreservesInvariants)
{
    Rng rng(41);
    TreeLimits limits;
    Grammar g;
    auto a = random_model(rng, 3);
    auto b = random_model(rng, 3);
    for (int k = 0; k < 10000; ++k) {
        OdeSystemModel child = a;
        if (bernoulli(rng, 0.5)) {
            auto i = uniform_index(rng, 3);
            child.set_tree(i, subtree_crossover(a.tree(i), b.tree(i), rng, limits));
        } else {
            child = mutate(a, rng, g, limits);
        }
        ASSERT_NO_THROW(child.validate(3));
        for (auto const& t : child.trees()) {
            ASSERT_TRUE(t.within(limits));
            ASSERT_TRUE(grammar_closed(t, g, 3));
        }
        b = a;
        a = std::move(child);
    }
}

TEST(Model, ParameterSlotsAreUniqueAndOrdered)
{
    OdeSystemModel m({ make({ add(), par(1.0), par(2.0) }), make({ mul(), par(3.0), var(0) }) });
    ASSERT_EQ(m.parameter_count(), 3u);
    EXPECT_EQ(m.tree(0)[1].index, 0u);
    EXPECT_EQ(m.tree(0)[2].index, 1u);
    EXPECT_EQ(m.tree(1)[1].index, 2u);
    EXPECT_EQ(m.theta()[2], 3.0);
    EXPECT_NO_THROW(m.validate(2));
    EXPECT_THROW(m.validate(3), StructuralError);
}

TEST(Model, MalformedPrefixIsStructuralError)
{
    EXPECT_THROW(make({ add(), var(0) }), StructuralError);
    EXPECT_THROW(make({ var(0), var(1) }), StructuralError);
}

TEST(Serialize, ChemicalReactionGroundTruth)
{
    auto m = instance("ChemicalReaction").ground_truth();
    auto text = serialize(m);
    int lines = 0;
    for (char c : text) {
        lines += c == '\n';
    }
    // three equations plus the theta line
    EXPECT_EQ(lines, 4);
    EXPECT_NE(text.find("-1.4"), std::string::npos);
    EXPECT_NE(text.find("4.2"), std::string::npos);
    EXPECT_EQ(text.rfind("dy1/dt = ", 0), 0u);
}

TEST(Serialize, RoundTripRandomModels)
{
    Rng rng(43);
    for (int k = 0; k < 1000; ++k) {
        auto m = random_model(rng, 1 + uniform_index(rng, 4), Grammar::with_power());
        ASSERT_EQ(deserialize(serialize(m)), m) << serialize(m);
    }
}

TEST(Serialize, NamedVariablesRoundTrip)
{
    auto parsed = deserialize_with_names("dv/dt = -0.05 * v * v - sin(theta)\ndtheta/dt = v - cos(theta) / v\n");
    ASSERT_EQ(parsed.variable_names, (std::vector<std::string> { "v", "theta" }));
    auto again = deserialize_with_names(serialize(parsed.model, parsed.variable_names));
    EXPECT_EQ(again.model, parsed.model);
}

TEST(Serialize, ConstantsStayFrozen)
{
    auto m = deserialize("dx/dt = const(2) * x + 3\n");
    EXPECT_EQ(m.parameter_count(), 1u);
    EXPECT_EQ(deserialize(serialize(m)), m);
}

TEST(Serialize, UnclosedCallReportsPosition)
{
    try {
        (void)deserialize("dy/dt = sin(");
        FAIL() << "expected a parse error";
    } catch (ParseError const& e) {
        EXPECT_EQ(e.line(), 1u);
        EXPECT_EQ(e.column(), 12u);
        EXPECT_NE(std::string(e.what()).find("sin"), std::string::npos) << e.what();
    }
}

TEST(Serialize, ErrorsNameTheLine)
{
    try {
        (void)deserialize("dx/dt = x\ndy/dt = x + * y\n");
        FAIL() << "expected a parse error";
    } catch (ParseError const& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW((void)deserialize("dx/dt = x + 1\ntheta = 1, 2\n"), ParseError);
    EXPECT_THROW((void)deserialize("dx/dt = z\n"), ParseError);
}
