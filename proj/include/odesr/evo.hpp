#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "odesr/expr/creation.hpp"
#include "odesr/expr/operators.hpp"
#include "odesr/expr/tree.hpp"
#include "odesr/fitness.hpp"
#include "odesr/random.hpp"

namespace odesr {

enum class ParentSelection {
    Proportional,     // weights 1 / (fitness + eps)
    RankProportional, // weights pop_size - rank
};

struct GpConfig {
    std::size_t population_size { 300 };
    double crossover_rate_per_tree { 0.30 };
    double mutation_rate_per_individual { 0.05 };
    double max_selection_pressure { 100.0 };
    std::size_t max_generations { 25 };
    std::uint64_t max_evaluated_solutions { 100'000 };
    std::size_t elite_count { 1 };
    Grammar grammar {};
    TreeLimits limits {};
    // Initial trees draw their PTC2 target length uniformly from [min, limits.max_length].
    std::size_t min_initial_length { 3 };
    ParentSelection selection { ParentSelection::Proportional };
    // Stop as soon as the best fitness drops below this value.
    std::optional<double> target_fitness {};

    // Budgets of the two configuration groups: 250 generations / 500,000
    // evaluations without parameter optimization, 25 / 100,000 with it.
    static GpConfig for_group(bool optimizes)
    {
        GpConfig c;
        c.max_generations = optimizes ? 25 : 250;
        c.max_evaluated_solutions = optimizes ? 100'000 : 500'000;
        return c;
    }
};

struct Individual {
    OdeSystemModel model;
    double fitness { penalty_fitness };
    bool evaluated { false };
};

enum class Termination {
    Generations,
    EvaluationBudget,
    SelectionPressure,
    TargetReached,
};

constexpr std::string_view termination_name(Termination t) noexcept
{
    switch (t) {
    case Termination::Generations: return "generations";
    case Termination::EvaluationBudget: return "evaluation-budget";
    case Termination::SelectionPressure: return "selection-pressure";
    case Termination::TargetReached: return "target-reached";
    }
    return "?";
}

struct GenerationStats {
    std::size_t generation { 0 };
    double best { 0.0 };
    double median { 0.0 };
    double selection_pressure { 0.0 };
    std::uint64_t evaluated_solutions { 0 };

    bool operator==(GenerationStats const&) const = default;
};

struct RunResult {
    Individual best;
    std::size_t generations { 0 };
    std::uint64_t evaluated_solutions { 0 };
    std::uint64_t lm_residual_evaluations { 0 };
    std::uint64_t accepted_offspring { 0 };
    Termination termination { Termination::Generations };
    // Attempts / population size in the last generation worked on, finished or not.
    double last_selection_pressure { 0.0 };
    std::vector<GenerationStats> trace;
};

// Hooks for inspecting a run while it executes.
struct RunObserver {
    std::function<void(Individual const& child, Individual const& parent_a, Individual const& parent_b)> on_accept;
    std::function<void(GenerationStats const&)> on_generation;
};

// Samples parent indices with probability proportional to 1 / (fitness + eps)
// (fitness is minimized).
class ProportionalSelector {
public:
    static constexpr double epsilon = 1e-12;

    ProportionalSelector(std::span<Individual const> population, ParentSelection scheme = ParentSelection::Proportional)
    {
        cumulative_.reserve(population.size());
        double total = 0.0;
        if (scheme == ParentSelection::Proportional) {
            for (auto const& ind : population) {
                total += 1.0 / (ind.fitness + epsilon);
                cumulative_.push_back(total);
            }
        } else {
            std::vector<std::size_t> order(population.size());
            for (std::size_t i = 0; i < order.size(); ++i) {
                order[i] = i;
            }
            std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return population[a].fitness < population[b].fitness; });
            std::vector<double> weight(population.size());
            for (std::size_t r = 0; r < order.size(); ++r) {
                weight[order[r]] = static_cast<double>(order.size() - r);
            }
            for (double w : weight) {
                total += w;
                cumulative_.push_back(total);
            }
        }
    }

    std::size_t operator()(Rng& rng) const
    {
        double u = uniform_real(rng, 0.0, cumulative_.back());
        auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
    }

private:
    std::vector<double> cumulative_;
};

inline Individual const& proportional_select(std::span<Individual const> population, Rng& rng)
{
    return population[ProportionalSelector(population)(rng)];
}

namespace detail {
    inline void evaluate_individual(Individual& ind, FitContext const& ctx)
    {
        auto res = evaluate_fitness(ind.model, ctx);
        ind.model.set_theta(res.theta);
        ind.fitness = res.fitness;
        ind.evaluated = true;
    }

    inline double median_fitness(std::span<Individual const> pop)
    {
        std::vector<double> f;
        f.reserve(pop.size());
        for (auto const& ind : pop) {
            f.push_back(ind.fitness);
        }
        auto mid = f.begin() + static_cast<std::ptrdiff_t>(f.size() / 2);
        std::nth_element(f.begin(), mid, f.end());
        if (f.size() % 2 == 1) {
            return *mid;
        }
        double hi = *mid;
        double lo = *std::max_element(f.begin(), mid);
        return 0.5 * (lo + hi);
    }
} // namespace detail

inline Individual random_individual(Rng& rng, GpConfig const& config, std::size_t dimension)
{
    std::vector<ExpressionTree> trees;
    trees.reserve(dimension);
    auto const lo = std::min(config.min_initial_length, config.limits.max_length);
    auto const hi = config.limits.max_length;
    for (std::size_t i = 0; i < dimension; ++i) {
        auto target = lo + uniform_index(rng, hi - lo + 1);
        trees.push_back(create_random_tree(rng, config.grammar, dimension, target, config.limits.max_depth));
    }
    return Individual { OdeSystemModel(std::move(trees)), penalty_fitness, false };
}

// Offspring-selection GP. Each generation keeps the elite and fills the rest
// with offspring that are strictly better than both of their parents; the run
// stops when the attempts needed exceed max_selection_pressure * pop_size.
// `seeds` replace the first random individuals of the initial population.
inline RunResult run(GpConfig const& config, FitContext const& ctx, Rng& rng, RunObserver const& observer = {},
    std::span<OdeSystemModel const> seeds = {})
{
    auto const dim = ctx.dataset().dimension();
    auto const pop_size = config.population_size;
    auto const elites = std::min(config.elite_count, pop_size);
    auto& budget = ctx.budget();
    auto const lm_base = budget.lm_residual_evaluations.load();

    RunResult result;
    std::uint64_t evaluated = 0;

    auto consider = [&](Individual const& ind) {
        if (!result.best.evaluated || ind.fitness < result.best.fitness) {
            result.best = ind;
        }
    };
    auto target_hit = [&] { return config.target_fitness && result.best.evaluated && result.best.fitness < *config.target_fitness; };

    std::vector<Individual> population;
    population.reserve(pop_size);
    for (std::size_t k = 0; k < pop_size; ++k) {
        auto ind = k < seeds.size() ? Individual { seeds[k], penalty_fitness, false } : random_individual(rng, config, dim);
        detail::evaluate_individual(ind, ctx);
        ++evaluated;
        consider(ind);
        population.push_back(std::move(ind));
    }

    auto record = [&](std::size_t gen, double pressure) {
        GenerationStats s { gen, result.best.fitness, detail::median_fitness(population), pressure, evaluated };
        result.trace.push_back(s);
        if (observer.on_generation) {
            observer.on_generation(s);
        }
    };
    record(0, 0.0);

    std::optional<Termination> stop;
    if (target_hit()) {
        stop = Termination::TargetReached;
    }

    std::vector<Individual> next;
    std::size_t gen = 0;
    while (!stop && gen < config.max_generations) {
        std::stable_sort(population.begin(), population.end(), [](auto const& a, auto const& b) { return a.fitness < b.fitness; });
        ProportionalSelector sorted_select(population, config.selection);

        next.clear();
        next.insert(next.end(), population.begin(), population.begin() + static_cast<std::ptrdiff_t>(elites));

        std::uint64_t attempts = 0;
        while (next.size() < pop_size) {
            if (evaluated >= config.max_evaluated_solutions) {
                stop = Termination::EvaluationBudget;
                break;
            }
            if (static_cast<double>(attempts) / static_cast<double>(pop_size) > config.max_selection_pressure) {
                stop = Termination::SelectionPressure;
                break;
            }
            auto const& a = population[sorted_select(rng)];
            auto const& b = population[uniform_index(rng, pop_size)];

            std::vector<ExpressionTree> trees;
            trees.reserve(dim);
            for (std::size_t i = 0; i < dim; ++i) {
                if (bernoulli(rng, config.crossover_rate_per_tree)) {
                    trees.push_back(subtree_crossover(a.model.tree(i), b.model.tree(i), rng, config.limits));
                } else {
                    trees.push_back(a.model.tree(i));
                }
            }
            Individual child { OdeSystemModel(std::move(trees)), penalty_fitness, false };
            if (bernoulli(rng, config.mutation_rate_per_individual)) {
                child.model = mutate(child.model, rng, config.grammar, config.limits);
            }
            detail::evaluate_individual(child, ctx);
            ++attempts;
            ++evaluated;
            consider(child);

            if (child.fitness < a.fitness && child.fitness < b.fitness) {
                if (observer.on_accept) {
                    observer.on_accept(child, a, b);
                }
                ++result.accepted_offspring;
                next.push_back(std::move(child));
            }
            if (target_hit()) {
                stop = Termination::TargetReached;
                break;
            }
        }
        result.last_selection_pressure = static_cast<double>(attempts) / static_cast<double>(pop_size);
        if (stop) {
            break;
        }
        ++gen;
        population.swap(next);
        record(gen, static_cast<double>(attempts) / static_cast<double>(pop_size));
    }

    result.generations = gen;
    result.termination = stop.value_or(Termination::Generations);
    result.evaluated_solutions = evaluated;
    result.lm_residual_evaluations = budget.lm_residual_evaluations.load() - lm_base;
    return result;
}

} // namespace odesr
