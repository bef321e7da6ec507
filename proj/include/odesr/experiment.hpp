#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "odesr/evo.hpp"
#include "odesr/expr/format.hpp"
#include "odesr/fitness.hpp"
#include "odesr/problems.hpp"

namespace odesr {

// A run counts as successful when the IVP SNMSE of its best model is below this.
inline constexpr double success_threshold = 0.01;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GroupBudget {
    std::size_t max_generations;
    std::uint64_t max_evaluated_solutions;
};

enum class PowerPrimitive {
    Auto, // only for instances whose ground truth needs pow()
    On,
    Off,
};

struct ExperimentConfig {
    std::vector<std::string> instances;
    std::vector<std::string> configurations;
    std::size_t runs_per_cell { 10 };
    std::uint64_t base_seed { 1 };
    GroupBudget without_optimization { 250, 500'000 };
    GroupBudget with_optimization { 25, 100'000 };
    std::size_t population_size { 300 };
    int lm_iterations_derivative { 10 };
    int lm_iterations_ivp { 10 };
    PowerPrimitive power { PowerPrimitive::Auto };
    // Configurations scored by the IVP SNMSE stop as soon as a run succeeds.
    bool stop_on_success { false };
    bool record_wall_time { true };
    std::filesystem::path data_dir;
    std::filesystem::path output_dir { "results" };
    std::size_t workers { 1 };
};

inline std::filesystem::path default_data_dir()
{
    if (char const* env = std::getenv("ODESR_DATA_DIR")) {
        return env;
    }
    return {};
}

namespace detail {
    inline std::string trim_copy(std::string_view s)
    {
        auto b = s.find_first_not_of(" \t\r");
        if (b == std::string_view::npos) {
            return {};
        }
        auto e = s.find_last_not_of(" \t\r");
        return std::string(s.substr(b, e - b + 1));
    }

    inline std::vector<std::string> split_list(std::string const& value)
    {
        std::vector<std::string> out;
        std::string item;
        std::istringstream in(value);
        while (std::getline(in, item, ',')) {
            auto t = trim_copy(item);
            if (!t.empty()) {
                out.push_back(t);
            }
        }
        return out;
    }

    template <class T>
    T parse_number(std::string const& key, std::string const& value)
    {
        std::istringstream in(value);
        T v {};
        if (!(in >> v) || !(in >> std::ws).eof()) {
            throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
        }
        return v;
    }

    inline bool parse_bool(std::string const& key, std::string const& value)
    {
        if (value == "true" || value == "yes" || value == "1" || value == "on") {
            return true;
        }
        if (value == "false" || value == "no" || value == "0" || value == "off") {
            return false;
        }
        throw ConfigError("invalid value '" + value + "' for key '" + key + "' (expected true or false)");
    }
} // namespace detail

// Checks instance and configuration names and expands "all".
inline void validate(ExperimentConfig& cfg)
{
    if (cfg.instances.size() == 1 && cfg.instances[0] == "all") {
        cfg.instances.clear();
        for (auto const& p : all_instances()) {
            cfg.instances.push_back(p.name);
        }
    }
    if (cfg.configurations.size() == 1 && cfg.configurations[0] == "all") {
        cfg.configurations.assign(std::begin(configuration_names), std::end(configuration_names));
    }
    if (cfg.instances.empty()) {
        throw ConfigError("key 'instances' must name at least one instance");
    }
    if (cfg.configurations.empty()) {
        throw ConfigError("key 'configurations' must name at least one configuration");
    }
    for (auto const& name : cfg.instances) {
        if (!find_instance(name)) {
            throw ConfigError("key 'instances': unknown instance '" + name + "'");
        }
    }
    for (auto const& name : cfg.configurations) {
        if (std::find(std::begin(configuration_names), std::end(configuration_names), name) == std::end(configuration_names)) {
            throw ConfigError("key 'configurations': unknown configuration '" + name + "'");
        }
    }
    if (cfg.runs_per_cell < 1) {
        throw ConfigError("key 'runs_per_cell' must be at least 1");
    }
    if (cfg.population_size < 2) {
        throw ConfigError("key 'population_size' must be at least 2");
    }
    if (cfg.workers < 1) {
        throw ConfigError("key 'workers' must be at least 1");
    }
}

// Flat "key = value" text. Group budgets live under [no_optimization] and
// [optimization]; everything else belongs before the first section.
inline ExperimentConfig parse_experiment_config(std::istream& in, std::string const& origin = "config")
{
    ExperimentConfig cfg;
    cfg.data_dir = default_data_dir();
    std::string section;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto line = detail::trim_copy(raw.substr(0, raw.find('#')));
        if (line.empty()) {
            continue;
        }
        auto where = origin + ":" + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(where + "malformed section header '" + line + "'");
            }
            section = detail::trim_copy(line.substr(1, line.size() - 2));
            if (section != "no_optimization" && section != "optimization") {
                throw ConfigError(where + "unknown section '[" + section + "]'");
            }
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(where + "expected 'key = value'");
        }
        auto key = detail::trim_copy(line.substr(0, eq));
        auto value = detail::trim_copy(line.substr(eq + 1));
        try {
            if (!section.empty()) {
                auto& budget = section == "optimization" ? cfg.with_optimization : cfg.without_optimization;
                auto full = section + "." + key;
                if (key == "max_generations") {
                    budget.max_generations = detail::parse_number<std::size_t>(full, value);
                } else if (key == "max_evaluated_solutions") {
                    budget.max_evaluated_solutions = detail::parse_number<std::uint64_t>(full, value);
                } else {
                    throw ConfigError("unknown key '" + full + "'");
                }
                continue;
            }
            if (key == "instances") {
                cfg.instances = detail::split_list(value);
            } else if (key == "configurations") {
                cfg.configurations = detail::split_list(value);
            } else if (key == "runs_per_cell") {
                cfg.runs_per_cell = detail::parse_number<std::size_t>(key, value);
            } else if (key == "base_seed") {
                cfg.base_seed = detail::parse_number<std::uint64_t>(key, value);
            } else if (key == "population_size") {
                cfg.population_size = detail::parse_number<std::size_t>(key, value);
            } else if (key == "lm_iterations_derivative") {
                cfg.lm_iterations_derivative = detail::parse_number<int>(key, value);
            } else if (key == "lm_iterations_ivp") {
                cfg.lm_iterations_ivp = detail::parse_number<int>(key, value);
            } else if (key == "power_primitive") {
                if (value == "auto") {
                    cfg.power = PowerPrimitive::Auto;
                } else if (value == "on") {
                    cfg.power = PowerPrimitive::On;
                } else if (value == "off") {
                    cfg.power = PowerPrimitive::Off;
                } else {
                    throw ConfigError("invalid value '" + value + "' for key 'power_primitive' (expected auto, on or off)");
                }
            } else if (key == "stop_on_success") {
                cfg.stop_on_success = detail::parse_bool(key, value);
            } else if (key == "record_wall_time") {
                cfg.record_wall_time = detail::parse_bool(key, value);
            } else if (key == "data_dir") {
                cfg.data_dir = value;
            } else if (key == "output_dir") {
                cfg.output_dir = value;
            } else if (key == "workers") {
                cfg.workers = detail::parse_number<std::size_t>(key, value);
            } else {
                throw ConfigError("unknown key '" + key + "'");
            }
        } catch (ConfigError const& e) {
            throw ConfigError(where + e.what());
        }
    }
    validate(cfg);
    return cfg;
}

inline ExperimentConfig load_experiment_config(std::filesystem::path const& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path.string() + "'");
    }
    return parse_experiment_config(in, path.string());
}

struct RunSettings {
    std::string configuration { "I_opt+D_opt" };
    std::uint64_t seed { 1 };
    std::optional<GroupBudget> budget; // default: the configuration's group budget
    std::size_t population_size { 300 };
    int lm_iterations_derivative { 10 };
    int lm_iterations_ivp { 10 };
    PowerPrimitive power { PowerPrimitive::Auto };
    bool stop_on_success { false };
};

inline RunSettings settings_for(ExperimentConfig const& cfg, std::string const& configuration, std::uint64_t seed)
{
    RunSettings s;
    s.configuration = configuration;
    s.seed = seed;
    s.budget = FitnessConfig::named(configuration).optimizes() ? cfg.with_optimization : cfg.without_optimization;
    s.population_size = cfg.population_size;
    s.lm_iterations_derivative = cfg.lm_iterations_derivative;
    s.lm_iterations_ivp = cfg.lm_iterations_ivp;
    s.power = cfg.power;
    s.stop_on_success = cfg.stop_on_success;
    return s;
}

struct CellResult {
    std::string instance;
    std::string configuration;
    std::uint64_t seed { 0 };
    double snmse { penalty_fitness };
    bool success { false };
    std::uint64_t evaluations { 0 };
    std::uint64_t lm_evaluations { 0 };
    std::size_t generations { 0 };
    double wall_seconds { 0.0 };
    std::string model_file;
};

struct SingleRun {
    RunResult run;
    CellResult cell;
};

// IVP SNMSE with the integrator's default controls; this is the number that
// decides success, independent of the controls used during the search.
inline double final_snmse(OdeSystemModel const& model, TrajectoryDataset const& data)
{
    return ivp_snmse(model, model.theta(), data, IntegratorControls {});
}

inline SingleRun run_single(ProblemInstance const& inst, TrajectoryDataset const& data, RunSettings const& s,
    RunObserver const& observer = {})
{
    auto fit = FitnessConfig::named(s.configuration);
    fit.lm_iters_derivative = s.lm_iterations_derivative;
    fit.lm_iters_ivp = s.lm_iterations_ivp;
    FitContext ctx(data, fit);

    auto gp = GpConfig::for_group(fit.optimizes());
    if (s.budget) {
        gp.max_generations = s.budget->max_generations;
        gp.max_evaluated_solutions = s.budget->max_evaluated_solutions;
    }
    gp.population_size = s.population_size;
    if (s.power == PowerPrimitive::On || (s.power == PowerPrimitive::Auto && inst.uses_power)) {
        gp.grammar = Grammar::with_power();
    }
    if (s.stop_on_success && fit.mode == FitnessMode::Ivp) {
        gp.target_fitness = success_threshold;
    }

    Rng rng(s.seed);
    auto start = std::chrono::steady_clock::now();
    SingleRun out { run(gp, ctx, rng, observer), {} };
    auto& c = out.cell;
    c.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    c.instance = inst.name;
    c.configuration = s.configuration;
    c.seed = s.seed;
    c.snmse = final_snmse(out.run.best.model, data);
    c.success = c.snmse < success_threshold;
    c.evaluations = out.run.evaluated_solutions;
    c.lm_evaluations = out.run.lm_residual_evaluations;
    c.generations = out.run.generations;
    return out;
}

inline constexpr char const* csv_header = "instance,configuration,seed,snmse,success,evaluations,lm_evaluations,generations,wall_seconds,model_file";

inline std::string to_csv_row(CellResult const& c)
{
    std::ostringstream os;
    os << c.instance << ',' << c.configuration << ',' << c.seed << ',' << format_number(c.snmse) << ','
       << (c.success ? 1 : 0) << ',' << c.evaluations << ',' << c.lm_evaluations << ',' << c.generations << ','
       << std::fixed << std::setprecision(3) << c.wall_seconds << ',' << c.model_file;
    return os.str();
}

inline std::vector<CellResult> read_results_csv(std::filesystem::path const& path)
{
    std::vector<CellResult> rows;
    std::ifstream in(path);
    if (!in) {
        return rows;
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.rfind("instance,", 0) == 0) {
            continue;
        }
        std::vector<std::string> f;
        std::string item;
        std::istringstream ls(line);
        while (std::getline(ls, item, ',')) {
            f.push_back(item);
        }
        if (line.back() == ',') {
            f.emplace_back();
        }
        if (f.size() != 10) {
            throw LoadError(path.string() + ":" + std::to_string(line_no) + ": expected 10 fields, found " + std::to_string(f.size()));
        }
        try {
            CellResult c;
            c.instance = f[0];
            c.configuration = f[1];
            c.seed = std::stoull(f[2]);
            c.snmse = std::stod(f[3]);
            c.success = f[4] == "1";
            c.evaluations = std::stoull(f[5]);
            c.lm_evaluations = std::stoull(f[6]);
            c.generations = std::stoull(f[7]);
            c.wall_seconds = std::stod(f[8]);
            c.model_file = f[9];
            rows.push_back(std::move(c));
        } catch (std::logic_error const&) {
            throw LoadError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
        }
    }
    return rows;
}

inline std::string model_file_name(CellResult const& c)
{
    return "models/" + c.instance + "__" + c.configuration + "__" + std::to_string(c.seed) + ".txt";
}

struct ExperimentOutcome {
    std::vector<CellResult> cells;        // every cell of the grid, in grid order
    std::size_t executed { 0 };           // cells run by this call (the rest were resumed)
    std::vector<std::string> unavailable; // instances skipped for missing data
};

// Runs every (instance, configuration, run) cell not already present in
// <output_dir>/results.csv. Seeds are base_seed + cell index in grid order.
inline ExperimentOutcome run_experiment(ExperimentConfig const& cfg, std::ostream* log = nullptr)
{
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir / "models");
    auto const csv_path = cfg.output_dir / "results.csv";

    using Key = std::tuple<std::string, std::string, std::uint64_t>;
    std::map<Key, CellResult> done;
    for (auto& c : read_results_csv(csv_path)) {
        Key k { c.instance, c.configuration, c.seed };
        done[k] = std::move(c);
    }

    struct Pending {
        std::size_t slot;
        ProblemInstance const* inst;
        std::string configuration;
        std::uint64_t seed;
    };
    ExperimentOutcome outcome;
    std::vector<std::optional<CellResult>> slots;
    std::vector<Pending> pending;
    std::map<std::string, TrajectoryDataset> datasets;

    std::uint64_t index = 0;
    for (auto const& name : cfg.instances) {
        auto const& inst = instance(name);
        bool available = true;
        try {
            datasets.emplace(name, load_instance(inst, cfg.data_dir));
        } catch (DataUnavailable const& e) {
            available = false;
            outcome.unavailable.push_back(name);
            if (log) {
                *log << "skipping " << name << ": " << e.what() << '\n';
            }
        }
        for (auto const& conf : cfg.configurations) {
            for (std::size_t r = 0; r < cfg.runs_per_cell; ++r, ++index) {
                auto seed = cfg.base_seed + index;
                if (!available) {
                    continue;
                }
                auto it = done.find(Key { name, conf, seed });
                slots.emplace_back();
                if (it != done.end()) {
                    slots.back() = it->second;
                } else {
                    pending.push_back({ slots.size() - 1, &inst, conf, seed });
                }
            }
        }
    }

    bool const fresh = !fs::exists(csv_path);
    std::ofstream csv(csv_path, std::ios::app);
    if (!csv) {
        throw ConfigError("key 'output_dir': cannot write '" + csv_path.string() + "'");
    }
    if (fresh) {
        csv << csv_header << '\n';
    }

    std::mutex writer;
    std::atomic<std::size_t> next { 0 };
    std::size_t finished = 0;
    auto worker = [&] {
        for (;;) {
            auto k = next.fetch_add(1);
            if (k >= pending.size()) {
                return;
            }
            auto const& job = pending[k];
            CellResult cell;
            std::string model_text;
            try {
                auto res = run_single(*job.inst, datasets.at(job.inst->name), settings_for(cfg, job.configuration, job.seed));
                cell = res.cell;
                model_text = serialize(res.run.best.model, job.inst->variables);
            } catch (std::exception const& e) {
                // a failed cell is recorded, never fatal for the grid
                cell.instance = job.inst->name;
                cell.configuration = job.configuration;
                cell.seed = job.seed;
                if (log) {
                    std::lock_guard lock(writer);
                    *log << "cell " << cell.instance << ' ' << cell.configuration << ' ' << cell.seed << " failed: " << e.what() << '\n';
                }
            }
            if (!cfg.record_wall_time) {
                cell.wall_seconds = 0.0;
            }
            if (!model_text.empty()) {
                cell.model_file = model_file_name(cell);
                std::ofstream(cfg.output_dir / cell.model_file) << "# " << cell.instance << ' ' << cell.configuration << " seed " << cell.seed << '\n'
                                                                << model_text;
            }
            std::lock_guard lock(writer);
            csv << to_csv_row(cell) << '\n';
            csv.flush();
            ++finished;
            if (log) {
                *log << '[' << finished << '/' << pending.size() << "] " << cell.instance << ' ' << cell.configuration << " seed " << cell.seed
                     << " snmse " << format_number(cell.snmse) << (cell.success ? " success" : "") << '\n';
            }
            slots[job.slot] = std::move(cell);
        }
    };
    {
        std::vector<std::jthread> pool;
        auto const n = std::min(cfg.workers, std::max<std::size_t>(pending.size(), 1));
        for (std::size_t w = 0; w < n; ++w) {
            pool.emplace_back(worker);
        }
    }
    csv.close();
    outcome.executed = pending.size();

    // Rewrite the file in grid order so identical configurations produce
    // identical files regardless of completion order. Rows outside the grid
    // are kept after it.
    std::set<Key> in_grid;
    for (auto& s : slots) {
        in_grid.insert(Key { s->instance, s->configuration, s->seed });
        outcome.cells.push_back(*s);
    }
    std::ofstream out(csv_path, std::ios::trunc);
    out << csv_header << '\n';
    for (auto const& c : outcome.cells) {
        out << to_csv_row(c) << '\n';
    }
    for (auto const& [key, c] : done) {
        if (!in_grid.contains(key)) {
            out << to_csv_row(c) << '\n';
        }
    }
    return outcome;
}

struct ReportRow {
    std::string instance;
    std::vector<int> successes; // one per column
};

struct Report {
    std::vector<std::string> configurations; // columns
    std::vector<ReportRow> rows;
    std::vector<int> total;
    std::size_t cells { 0 };
    std::vector<std::string> mismatches;  // cells whose stored success disagrees with the recomputation
    std::vector<std::string> unavailable; // instances that could not be re-checked
};

// Aggregates <dir>/results.csv into success counts, recomputing the SNMSE of
// every persisted model against its dataset.
inline Report build_report(std::filesystem::path const& dir, std::filesystem::path const& data_dir = default_data_dir())
{
    auto csv_path = dir / "results.csv";
    if (!std::filesystem::exists(csv_path)) {
        throw ConfigError("no results.csv in '" + dir.string() + "'");
    }
    auto cells = read_results_csv(csv_path);

    Report rep;
    std::set<std::string> seen_conf;
    for (auto const& c : cells) {
        seen_conf.insert(c.configuration);
    }
    for (auto name : configuration_names) {
        if (seen_conf.contains(std::string(name))) {
            rep.configurations.emplace_back(name);
        }
    }
    for (auto const& c : seen_conf) {
        if (std::find(rep.configurations.begin(), rep.configurations.end(), c) == rep.configurations.end()) {
            rep.configurations.push_back(c);
        }
    }
    auto column = [&](std::string const& conf) {
        return static_cast<std::size_t>(std::find(rep.configurations.begin(), rep.configurations.end(), conf) - rep.configurations.begin());
    };

    std::map<std::string, std::optional<TrajectoryDataset>> datasets;
    std::map<std::string, std::vector<int>> counts;
    for (auto const& c : cells) {
        auto const* inst = find_instance(c.instance);
        if (!inst) {
            throw LoadError(csv_path.string() + ": unknown instance '" + c.instance + "'");
        }
        auto [it, inserted] = datasets.try_emplace(c.instance);
        if (inserted) {
            try {
                it->second = load_instance(*inst, data_dir);
            } catch (DataUnavailable const&) {
                rep.unavailable.push_back(c.instance);
            }
        }
        auto& row = counts[c.instance];
        row.resize(rep.configurations.size(), 0);
        ++rep.cells;

        bool success = false;
        if (!c.model_file.empty()) {
            std::ifstream in(dir / c.model_file);
            if (!in) {
                throw LoadError("model file '" + (dir / c.model_file).string() + "' is missing");
            }
            std::stringstream text;
            text << in.rdbuf();
            auto model = deserialize(text.str());
            if (it->second) {
                double s = final_snmse(model, *it->second);
                success = s < success_threshold;
            } else {
                success = c.success;
            }
        }
        if (success != c.success) {
            rep.mismatches.push_back(c.instance + " " + c.configuration + " seed " + std::to_string(c.seed));
        }
        row[column(c.configuration)] += success ? 1 : 0;
    }

    rep.total.assign(rep.configurations.size(), 0);
    for (auto const& p : all_instances()) {
        auto it = counts.find(p.name);
        if (it == counts.end()) {
            continue;
        }
        it->second.resize(rep.configurations.size(), 0);
        for (std::size_t k = 0; k < rep.total.size(); ++k) {
            rep.total[k] += it->second[k];
        }
        rep.rows.push_back({ p.name, it->second });
    }
    return rep;
}

inline void print_report(std::ostream& os, Report const& rep)
{
    std::size_t first = std::string("Total").size();
    for (auto const& r : rep.rows) {
        first = std::max(first, r.instance.size());
    }
    std::vector<std::size_t> widths;
    for (auto const& c : rep.configurations) {
        widths.push_back(std::max<std::size_t>(c.size(), 3));
    }
    auto line = [&](std::string const& label, std::vector<int> const& values) {
        os << std::left << std::setw(static_cast<int>(first)) << label;
        for (std::size_t k = 0; k < values.size(); ++k) {
            os << "  " << std::right << std::setw(static_cast<int>(widths[k])) << values[k];
        }
        os << '\n';
    };
    os << std::left << std::setw(static_cast<int>(first)) << "Instance";
    for (std::size_t k = 0; k < rep.configurations.size(); ++k) {
        os << "  " << std::right << std::setw(static_cast<int>(widths[k])) << rep.configurations[k];
    }
    os << '\n';
    for (auto const& r : rep.rows) {
        line(r.instance, r.successes);
    }
    line("Total", rep.total);
}

inline void write_report_csv(std::ostream& os, Report const& rep)
{
    os << "instance";
    for (auto const& c : rep.configurations) {
        os << ',' << c;
    }
    os << '\n';
    auto line = [&](std::string const& label, std::vector<int> const& values) {
        os << label;
        for (int v : values) {
            os << ',' << v;
        }
        os << '\n';
    };
    for (auto const& r : rep.rows) {
        line(r.instance, r.successes);
    }
    line("Total", rep.total);
}

} // namespace odesr
