#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "odesr/experiment.hpp"

namespace {

using namespace odesr;

enum Exit : int {
    Ok = 0,
    ConfigFailure = 1,
    MissingData = 2,
    ReportMismatch = 3,
};

ProblemInstance const& require_instance(std::string const& name)
{
    if (auto const* p = find_instance(name)) {
        return *p;
    }
    std::string known;
    for (auto const& p : all_instances()) {
        known += (known.empty() ? "" : ", ") + p.name;
    }
    throw ConfigError("--instance: unknown instance '" + name + "' (known: " + known + ")");
}

int cmd_generate(std::string const& name, std::string const& out, std::filesystem::path const& data_dir)
{
    auto const& inst = require_instance(name);
    auto data = load_instance(inst, data_dir);
    if (out.empty() || out == "-") {
        write_dataset(std::cout, data);
        return Ok;
    }
    std::ofstream os(out);
    if (!os) {
        throw ConfigError("--out: cannot write '" + out + "'");
    }
    write_dataset(os, data);
    std::cerr << "wrote " << inst.name << " (checksum " << std::hex << dataset_checksum(data) << std::dec << ") to " << out << '\n';
    return Ok;
}

struct RunOptions {
    std::string instance;
    std::string configuration { "I_opt+D_opt" };
    std::uint64_t seed { 1 };
    std::optional<std::size_t> generations;
    std::optional<std::uint64_t> evaluations;
    std::size_t population { 300 };
    std::string power { "auto" };
    bool stop_on_success { false };
    bool trace { false };
    std::string model_out;
};

int cmd_run(RunOptions const& o, std::filesystem::path const& data_dir)
{
    auto const& inst = require_instance(o.instance);
    if (std::find(std::begin(configuration_names), std::end(configuration_names), o.configuration) == std::end(configuration_names)) {
        throw ConfigError("--config: unknown configuration '" + o.configuration + "'");
    }
    ExperimentConfig defaults;
    auto s = settings_for(defaults, o.configuration, o.seed);
    if (o.generations) {
        s.budget->max_generations = *o.generations;
    }
    if (o.evaluations) {
        s.budget->max_evaluated_solutions = *o.evaluations;
    }
    s.population_size = o.population;
    s.power = o.power == "on" ? PowerPrimitive::On : o.power == "off" ? PowerPrimitive::Off : PowerPrimitive::Auto;
    s.stop_on_success = o.stop_on_success;

    auto data = load_instance(inst, data_dir);
    RunObserver obs;
    if (o.trace) {
        obs.on_generation = [](GenerationStats const& g) {
            std::cout << "gen " << g.generation << " best " << format_number(g.best) << " median " << format_number(g.median)
                      << " pressure " << g.selection_pressure << " evaluated " << g.evaluated_solutions << '\n';
        };
    }
    auto res = run_single(inst, data, s, obs);
    auto const& c = res.cell;
    std::cout << "instance " << c.instance << '\n'
              << "configuration " << c.configuration << '\n'
              << "seed " << c.seed << '\n'
              << "termination " << termination_name(res.run.termination) << '\n'
              << "generations " << c.generations << '\n'
              << "evaluations " << c.evaluations << '\n'
              << "lm_evaluations " << c.lm_evaluations << '\n'
              << "best_fitness " << format_number(res.run.best.fitness) << '\n'
              << "snmse " << format_number(c.snmse) << '\n'
              << "success " << (c.success ? "yes" : "no") << '\n'
              << "wall_seconds " << c.wall_seconds << '\n'
              << '\n';
    auto text = serialize(res.run.best.model, inst.variables);
    std::cout << text;
    if (!o.model_out.empty()) {
        std::ofstream(o.model_out) << text;
    }
    return Ok;
}

int cmd_experiment(std::filesystem::path const& config_path, std::optional<std::size_t> workers)
{
    auto cfg = load_experiment_config(config_path);
    if (workers) {
        if (*workers < 1) {
            throw ConfigError("--workers must be at least 1");
        }
        cfg.workers = *workers;
    }
    auto outcome = run_experiment(cfg, &std::cerr);
    std::cerr << outcome.executed << " cells run, " << outcome.cells.size() - outcome.executed << " resumed, results in "
              << (cfg.output_dir / "results.csv").string() << '\n';
    if (!outcome.unavailable.empty()) {
        for (auto const& name : outcome.unavailable) {
            std::cerr << "data missing for instance " << name << '\n';
        }
        return MissingData;
    }
    return Ok;
}

int cmd_report(std::filesystem::path const& dir, std::filesystem::path const& data_dir, std::string const& csv_out)
{
    auto rep = build_report(dir, data_dir);
    print_report(std::cout, rep);
    if (!csv_out.empty()) {
        std::ofstream os(csv_out);
        if (!os) {
            throw ConfigError("--csv: cannot write '" + csv_out + "'");
        }
        write_report_csv(os, rep);
    }
    std::cout << '\n'
              << rep.cells << " cells, " << rep.cells - rep.mismatches.size() << " success flags confirmed\n";
    for (auto const& m : rep.mismatches) {
        std::cerr << "success flag disagrees with recomputed SNMSE: " << m << '\n';
    }
    for (auto const& name : rep.unavailable) {
        std::cerr << "data missing for instance " << name << ", stored flags not re-checked\n";
    }
    if (!rep.mismatches.empty()) {
        return ReportMismatch;
    }
    return rep.unavailable.empty() ? Ok : MissingData;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app { "Identify ODE systems from trajectory data with offspring-selection genetic programming." };
    app.require_subcommand(1);

    std::filesystem::path data_dir = default_data_dir();

    auto* gen = app.add_subcommand("generate", "Write the dataset of a benchmark instance");
    std::string gen_instance;
    std::string gen_out;
    gen->add_option("instance", gen_instance, "Instance name")->required();
    gen->add_option("--out", gen_out, "Output file (stdout when omitted)");
    gen->add_option("--data-dir", data_dir, "Directory holding measured data files (default $ODESR_DATA_DIR)");

    auto* run_cmd = app.add_subcommand("run", "Run one GP search");
    RunOptions ro;
    run_cmd->add_option("--instance", ro.instance, "Instance name")->required();
    run_cmd->add_option("--config", ro.configuration, "Fitness configuration: D, I, D+I, D_opt, I_opt, I_opt+D_opt");
    run_cmd->add_option("--seed", ro.seed, "Random seed");
    run_cmd->add_option("--generations", ro.generations, "Generation limit (default from the configuration group)");
    run_cmd->add_option("--evaluations", ro.evaluations, "Evaluated solutions limit (default from the configuration group)");
    run_cmd->add_option("--population", ro.population, "Population size")->check(CLI::Range(2, 1'000'000));
    run_cmd->add_option("--power", ro.power, "pow() primitive: auto, on, off")->check(CLI::IsMember({ "auto", "on", "off" }));
    run_cmd->add_flag("--stop-on-success", ro.stop_on_success, "Stop once the IVP SNMSE drops below 0.01 (IVP-scored configurations)");
    run_cmd->add_flag("--trace", ro.trace, "Print one line per generation");
    run_cmd->add_option("--model-out", ro.model_out, "Also write the best model to this file");
    run_cmd->add_option("--data-dir", data_dir, "Directory holding measured data files (default $ODESR_DATA_DIR)");

    auto* exp = app.add_subcommand("experiment", "Run an experiment grid from a config file");
    std::filesystem::path exp_config;
    std::optional<std::size_t> workers;
    exp->add_option("--config", exp_config, "Experiment config file")->required();
    exp->add_option("--workers", workers, "Override the number of worker threads");

    auto* rep = app.add_subcommand("report", "Summarize and verify experiment results");
    std::filesystem::path rep_in;
    std::string rep_csv;
    rep->add_option("--in", rep_in, "Experiment output directory")->required();
    rep->add_option("--csv", rep_csv, "Also write the success table as CSV");
    rep->add_option("--data-dir", data_dir, "Directory holding measured data files (default $ODESR_DATA_DIR)");

    try {
        app.parse(argc, argv);
    } catch (CLI::ParseError const& e) {
        int code = app.exit(e);
        return code == 0 ? Ok : ConfigFailure;
    }

    try {
        if (*gen) {
            return cmd_generate(gen_instance, gen_out, data_dir);
        }
        if (*run_cmd) {
            return cmd_run(ro, data_dir);
        }
        if (*exp) {
            return cmd_experiment(exp_config, workers);
        }
        return cmd_report(rep_in, data_dir, rep_csv);
    } catch (ConfigError const& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return ConfigFailure;
    } catch (DataUnavailable const& e) {
        std::cerr << "missing data: " << e.what() << '\n';
        return MissingData;
    } catch (LoadError const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return ConfigFailure;
    } catch (ParseError const& e) {
        std::cerr << "model parse error: " << e.what() << '\n';
        return ConfigFailure;
    }
}
