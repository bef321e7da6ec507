#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "odesr/evo.hpp"
#include "odesr/problems.hpp"

using namespace odesr;

namespace {

std::vector<Individual> population_with(std::vector<double> fitness)
{
    std::vector<Individual> pop;
    for (double f : fitness) {
        pop.push_back(Individual { OdeSystemModel({ ExpressionTree({ Node::variable(0) }) }), f, true });
    }
    return pop;
}

double first_frequency(std::vector<double> fitness, int draws)
{
    auto pop = population_with(fitness);
    Rng rng(2024);
    int first = 0;
    for (int k = 0; k < draws; ++k) {
        first += &proportional_select(pop, rng) == &pop[0];
    }
    return static_cast<double>(first) / draws;
}

GpConfig small_config(std::size_t pop, std::size_t generations)
{
    GpConfig c;
    c.population_size = pop;
    c.max_generations = generations;
    c.max_evaluated_solutions = 1'000'000;
    return c;
}

} // namespace

TEST(Selection, PopulationOfOne)
{
    auto pop = population_with({ 3.0 });
    Rng rng(1);
    for (int k = 0; k < 100; ++k) {
        EXPECT_EQ(&proportional_select(pop, rng), &pop[0]);
    }
}

TEST(Selection, EqualFitnessIsUniform)
{
    EXPECT_NEAR(first_frequency({ 1.0, 1.0 }, 100000), 0.5, 0.02);
}

TEST(Selection, InverseFitnessWeights)
{
    EXPECT_NEAR(first_frequency({ 0.1, 1.0 }, 100000), 10.0 / 11.0, 0.02);
}

TEST(Selection, PenaltyIndividualsAreAlmostNeverPicked)
{
    EXPECT_GT(first_frequency({ 0.5, penalty_fitness, penalty_fitness }, 100000), 0.9999);
}

TEST(Selection, RankProportional)
{
    auto pop = population_with({ 5.0, 0.1, 2.0 });
    ProportionalSelector sel(pop, ParentSelection::RankProportional);
    Rng rng(4);
    std::vector<int> counts(3, 0);
    int const draws = 60000;
    for (int k = 0; k < draws; ++k) {
        ++counts[sel(rng)];
    }
    // ranks: index 1 best (weight 3), index 2 (weight 2), index 0 (weight 1)
    EXPECT_NEAR(counts[1] / double(draws), 0.5, 0.02);
    EXPECT_NEAR(counts[2] / double(draws), 1.0 / 3.0, 0.02);
    EXPECT_NEAR(counts[0] / double(draws), 1.0 / 6.0, 0.02);
}

TEST(Run, ElitePreservedAndBestMonotone)
{
    auto const& inst = instance("Glider");
    FitContext ctx(generate(inst), FitnessConfig::named("D"));
    auto cfg = small_config(40, 8);
    std::vector<OdeSystemModel> seeds { inst.ground_truth() };
    Rng rng(3);
    double const truth_fitness = evaluate_fitness(inst.ground_truth(), ctx).fitness;
    RunObserver obs;
    std::vector<double> bests;
    obs.on_generation = [&](GenerationStats const& s) { bests.push_back(s.best); };
    auto res = run(cfg, ctx, rng, obs, seeds);
    ASSERT_FALSE(bests.empty());
    for (std::size_t k = 1; k < bests.size(); ++k) {
        EXPECT_LE(bests[k], bests[k - 1]);
    }
    EXPECT_LE(res.best.fitness, truth_fitness);
}

TEST(Run, AcceptedOffspringBeatBothParents)
{
    auto const& inst = instance("BarMagnets");
    FitContext ctx(generate(inst), FitnessConfig::named("D"));
    auto cfg = small_config(50, 5);
    Rng rng(8);
    std::size_t accepted = 0;
    RunObserver obs;
    obs.on_accept = [&](Individual const& child, Individual const& a, Individual const& b) {
        ++accepted;
        EXPECT_LT(child.fitness, a.fitness);
        EXPECT_LT(child.fitness, b.fitness);
    };
    auto res = run(cfg, ctx, rng, obs);
    EXPECT_EQ(accepted, res.accepted_offspring);
    EXPECT_GT(accepted, 0u);
}

TEST(Run, IdenticalPopulationHitsSelectionPressure)
{
    auto const& inst = instance("ChemicalReaction");
    FitContext ctx(generate(inst), FitnessConfig::named("I"));
    auto cfg = small_config(5, 10);
    cfg.mutation_rate_per_individual = 0.0;
    // crossover of identical y_i * 0 trees only yields y_i * 0, 0 * 0, y_i * y_i
    // or y_i, none of which is strictly better on this data
    std::vector<OdeSystemModel> seeds(5, deserialize("dy1/dt = y1 * 0\ndy2/dt = y2 * 0\ndy3/dt = y3 * 0\n"));
    Rng rng(5);
    auto res = run(cfg, ctx, rng, {}, seeds);
    EXPECT_EQ(res.termination, Termination::SelectionPressure);
    EXPECT_GT(res.last_selection_pressure, cfg.max_selection_pressure);
    EXPECT_EQ(res.generations, 0u);
}

TEST(Run, EvaluationBudgetRespected)
{
    auto const& inst = instance("Glider");
    FitContext ctx(generate(inst), FitnessConfig::named("D"));
    auto cfg = small_config(30, 1000);
    cfg.max_evaluated_solutions = 500;
    Rng rng(6);
    auto res = run(cfg, ctx, rng);
    EXPECT_EQ(res.termination, Termination::EvaluationBudget);
    EXPECT_LE(res.evaluated_solutions, cfg.max_evaluated_solutions + cfg.population_size);
    EXPECT_EQ(res.evaluated_solutions, ctx.budget().fitness_evaluations.load());
}

TEST(Run, GenerationBudgetAndTrace)
{
    auto const& inst = instance("Glider");
    FitContext ctx(generate(inst), FitnessConfig::named("D"));
    auto cfg = small_config(20, 3);
    Rng rng(7);
    auto res = run(cfg, ctx, rng);
    if (res.termination == Termination::Generations) {
        EXPECT_EQ(res.generations, 3u);
        EXPECT_EQ(res.trace.size(), 4u);
    }
    for (std::size_t k = 0; k < res.trace.size(); ++k) {
        EXPECT_EQ(res.trace[k].generation, k);
    }
    EXPECT_EQ(res.trace.back().best, res.best.fitness);
}

TEST(Run, Reproducible)
{
    auto const& inst = instance("BacterialRespiration");
    auto data = generate(inst);
    auto once = [&] {
        FitContext ctx(data, FitnessConfig::named("D_opt"));
        auto cfg = small_config(30, 4);
        Rng rng(77);
        return run(cfg, ctx, rng);
    };
    auto a = once();
    auto b = once();
    EXPECT_EQ(a.trace, b.trace);
    EXPECT_EQ(a.best.model, b.best.model);
    EXPECT_EQ(a.evaluated_solutions, b.evaluated_solutions);
}

TEST(Run, TargetFitnessStopsEarly)
{
    auto const& inst = instance("Glider");
    FitContext ctx(generate(inst), FitnessConfig::named("I"));
    auto cfg = small_config(10, 50);
    cfg.target_fitness = 0.01;
    std::vector<OdeSystemModel> seeds { inst.ground_truth() };
    Rng rng(1);
    auto res = run(cfg, ctx, rng, {}, seeds);
    EXPECT_EQ(res.termination, Termination::TargetReached);
    EXPECT_LT(res.best.fitness, 0.01);
}

TEST(Run, GroupBudgets)
{
    auto plain = GpConfig::for_group(false);
    EXPECT_EQ(plain.max_generations, 250u);
    EXPECT_EQ(plain.max_evaluated_solutions, 500000u);
    auto opt = GpConfig::for_group(true);
    EXPECT_EQ(opt.max_generations, 25u);
    EXPECT_EQ(opt.max_evaluated_solutions, 100000u);
    EXPECT_EQ(opt.population_size, 300u);
    EXPECT_DOUBLE_EQ(opt.crossover_rate_per_tree, 0.3);
    EXPECT_DOUBLE_EQ(opt.mutation_rate_per_individual, 0.05);
    EXPECT_EQ(opt.elite_count, 1u);
}
