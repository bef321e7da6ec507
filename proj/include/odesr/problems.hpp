#pragma once

#include <cstddef>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "odesr/expr/format.hpp"
#include "odesr/fitness.hpp"
#include "odesr/odeint.hpp"
#include "odesr/spline.hpp"

namespace odesr {

// Simulated instance: ground-truth RHS integrated from one or more initial values.
struct SimulatedSource {
    std::string equations; // model text, see format.hpp
    std::vector<std::vector<double>> initial_values;
    std::size_t n_points { 100 };
    double t_max { 1.0 };
    std::size_t substeps_per_interval { 1000 };
};

// File-backed instance: columns "time var_1 ... var_D", resampled to n_points.
struct DataFileSource {
    std::string file_name;
    std::size_t n_points { 0 };
    // Keep only the first contiguous block of rows (ended by a blank line or a time reset).
    bool first_segment_only { false };
    // Optional inclusive 1-based range of data rows to use.
    std::optional<std::pair<std::size_t, std::size_t>> row_range {};
};

struct ProblemInstance {
    std::string name;  // identifier used on the command line
    std::string label; // display name
    std::vector<std::string> variables;
    std::variant<SimulatedSource, DataFileSource> source;
    // Ground truth uses pow(); GP runs need Grammar::with_power() to express it.
    bool uses_power { false };

    [[nodiscard]] std::size_t dimension() const noexcept { return variables.size(); }
    [[nodiscard]] bool simulated() const noexcept { return std::holds_alternative<SimulatedSource>(source); }
    [[nodiscard]] SimulatedSource const& simulation() const { return std::get<SimulatedSource>(source); }
    [[nodiscard]] DataFileSource const& data_file() const { return std::get<DataFileSource>(source); }

    [[nodiscard]] OdeSystemModel ground_truth() const { return deserialize(simulation().equations); }
};

class DataUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::vector<ProblemInstance> const& all_instances()
{
    static std::vector<ProblemInstance> const instances = [] {
        std::vector<ProblemInstance> v;
        auto sim = [&](std::string name, std::string label, std::vector<std::string> vars, std::string eqs,
                       std::vector<std::vector<double>> init, std::size_t n, double t_max, bool power = false) {
            v.push_back({ std::move(name), std::move(label), std::move(vars),
                SimulatedSource { std::move(eqs), std::move(init), n, t_max }, power });
        };
        auto file = [&](std::string name, std::string label, std::vector<std::string> vars, std::string file_name,
                        std::size_t n, bool first_segment = false) {
            v.push_back({ std::move(name), std::move(label), std::move(vars),
                DataFileSource { std::move(file_name), n, first_segment, std::nullopt }, false });
        };

        sim("ChemicalReaction", "ChemicalReaction", { "y1", "y2", "y3" },
            "dy1/dt = -1.4 * y1\n"
            "dy2/dt = 1.4 * y1 - 4.2 * y2\n"
            "dy3/dt = 4.2 * y2\n",
            { { 0.1, 0.0, 0.0 } }, 100, 1.0);
        sim("ECell", "E-CELL", { "y1", "y2", "y3" },
            "dy1/dt = -10 * y1 * y3\n"
            "dy2/dt = 10 * y1 * y3 - 17 * y2\n"
            "dy3/dt = -10 * y1 * y3 + 17 * y2\n",
            { { 1.2, 0.0, 1.2 } }, 40, 0.4);
        sim("SSystem", "S-System", { "y1", "y2", "y3", "y4", "y5" },
            "dy1/dt = 15 * y3 * pow(y5, -0.1) - 10 * y1 * y1\n"
            "dy2/dt = 10 * y1 * y1 - 10 * y2 * y2\n"
            "dy3/dt = 10 * pow(y2, -0.1) - 10 * pow(y2, -0.1) * y3 * y3\n"
            "dy4/dt = 8 * y1 * y1 * pow(y5, -0.1) - 10 * y4 * y4\n"
            "dy5/dt = 10 * y4 * y4 - 10 * y5 * y5\n",
            { { 0.1, 0.1, 0.1, 0.1, 0.1 }, { 0.5, 0.5, 0.5, 0.5, 0.5 }, { 1.5, 1.5, 1.5, 1.5, 1.5 } }, 30, 0.3, true);
        sim("LotkaVolterra3", "Lotka-Volterra (three species)", { "y1", "y2", "y3" },
            "dy1/dt = y1 * (1 - y1 - y2 - 10 * y3)\n"
            "dy2/dt = y2 * (0.992 - 1.5 * y1 - y2 - y3)\n"
            "dy3/dt = y3 * (-1.2 + 5 * y1 + 0.5 * y2)\n",
            { { 0.2895, 0.2827, 0.126 } }, 100, 100.0);
        sim("LotkaVolterra", "Lotka-Volterra", { "y1", "y2" },
            "dy1/dt = y1 * (0.04 - 0.0005 * y2)\n"
            "dy2/dt = y2 * (0.004 * y1 - 0.2)\n",
            { { 20.0, 20.0 } }, 300, 300.0);
        sim("Glider", "Glider", { "v", "theta" },
            "dv/dt = -0.05 * v * v - sin(theta)\n"
            "dtheta/dt = v - cos(theta) / v\n",
            { { 1.5, 1.0 } }, 100, 10.0);
        sim("BacterialRespiration", "Bacterial Respiration", { "x", "y" },
            "dx/dt = (20 - x - x * y) / (1 + 0.5 * x * x)\n"
            "dy/dt = (10 - x * y) / (1 + 0.5 * x * x)\n",
            { { 1.0, 1.0 } }, 100, 10.0);
        sim("PredatorPrey", "Predator Prey", { "x", "y" },
            "dx/dt = x * (4 - x - y / (1 + x))\n"
            "dy/dt = y * (x / (1 + x) - 0.075 * y)\n",
            { { 1.1, 7.36 } }, 100, 10.0);
        sim("BarMagnets", "Bar Magnets", { "theta1", "theta2" },
            "dtheta1/dt = 0.5 * sin(theta1 - theta2) - sin(theta1)\n"
            "dtheta2/dt = 0.5 * sin(theta2 - theta1) - sin(theta2)\n",
            { { 0.7, -0.3 } }, 100, 10.0);
        sim("ShearFlow", "Shear Flow", { "theta", "phi" },
            "dtheta/dt = cos(theta) / sin(theta) * cos(phi)\n"
            "dphi/dt = (cos(phi) * cos(phi) + 0.1 * sin(phi) * sin(phi)) * sin(phi)\n",
            { { 0.7, 0.4 } }, 100, 10.0);
        sim("VanDerPol", "Van der Pol Oscillator", { "x", "y" },
            "dx/dt = 10 * (y - (0.33333333333333331 * x * x * x - x))\n"
            "dy/dt = -0.1 * x\n",
            { { 2.0, 0.1 } }, 100, 10.0);

        file("LinearOscillatorReal", "Linear Oscillator (motion-tracked)", { "x", "v" }, "real_linear_h_1.txt", 879);
        file("LinearOscillatorSim", "Linear Oscillator (simulation)", { "x", "v" }, "linear_h_1.txt", 512);
        file("PendulumReal", "Pendulum (motion-tracked)", { "theta", "omega" }, "real_pend_h_1.txt", 568);
        file("PendulumSim", "Pendulum (simulated)", { "theta", "omega" }, "pendulum_h_1.txt", 502);
        file("DoubleOscillatorReal", "Double Oscillator (motion-tracked)", { "x1", "x2", "v1", "v2" }, "real_double_linear_h_1.txt", 150);
        file("DoubleOscillatorSim", "Double Oscillator (simulated)", { "x1", "x2", "v1", "v2" }, "double_linear_h_1.txt", 200);
        file("DoublePendulumReal", "Double Pendulum (motion-tracked)", { "theta1", "theta2", "omega1", "omega2" }, "real_double_pend_h_1.txt", 200, true);
        file("DoublePendulumSim", "Double Pendulum (simulated)", { "theta1", "theta2", "omega1", "omega2" }, "double_pend_h_1.txt", 1355, true);
        return v;
    }();
    return instances;
}

inline ProblemInstance const* find_instance(std::string_view name)
{
    for (auto const& p : all_instances()) {
        if (p.name == name) {
            return &p;
        }
    }
    return nullptr;
}

inline ProblemInstance const& instance(std::string_view name)
{
    if (auto const* p = find_instance(name)) {
        return *p;
    }
    throw std::invalid_argument("unknown problem instance '" + std::string(name) + "'");
}

// Integrates the ground truth with fixed-step RK4 on [0, t_max] for each
// initial value.
inline TrajectoryDataset generate(ProblemInstance const& inst)
{
    auto const& src = inst.simulation();
    auto parsed = deserialize_with_names(src.equations);
    TrajectoryDataset data;
    data.variable_names = inst.variables;
    TimeGrid grid { 0.0, src.t_max, src.n_points };
    double const h_internal = grid.step() / static_cast<double>(src.substeps_per_interval);
    for (auto const& y0 : src.initial_values) {
        auto sol = integrate_fixed_rk4(parsed.model, parsed.model.theta(), y0, grid, h_internal);
        if (!sol.ok()) {
            throw DatasetError("generation of '" + inst.name + "' failed at t=" + std::to_string(sol.failure_time));
        }
        data.episodes.push_back({ grid, std::move(sol.states) });
    }
    data.finalize();
    return data;
}

struct RawSeries {
    std::vector<double> times;
    Eigen::MatrixXd values; // D x M
};

// Parses whitespace-separated rows "t v_1 ... v_D". Lines starting with '#'
// are ignored.
inline RawSeries parse_raw_series(std::istream& in, std::size_t dimension, std::string const& origin,
    bool first_segment_only = false, std::optional<std::pair<std::size_t, std::size_t>> row_range = std::nullopt)
{
    std::vector<double> times;
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    std::size_t data_row = 0;
    bool started = false;
    while (std::getline(in, line)) {
        ++line_no;
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) {
            if (first_segment_only && started && !row_range) {
                break;
            }
            continue;
        }
        if (line[first] == '#') {
            continue;
        }
        std::istringstream ls(line);
        std::vector<double> fields;
        std::string tok;
        while (ls >> tok) {
            char* end = nullptr;
            double v = std::strtod(tok.c_str(), &end);
            if (end == tok.c_str() || *end != '\0') {
                throw LoadError(origin + ":" + std::to_string(line_no) + ": malformed value '" + tok + "'");
            }
            fields.push_back(v);
        }
        if (fields.size() != dimension + 1) {
            throw LoadError(origin + ":" + std::to_string(line_no) + ": expected " + std::to_string(dimension + 1) + " columns, found " + std::to_string(fields.size()));
        }
        ++data_row;
        if (row_range && (data_row < row_range->first || data_row > row_range->second)) {
            continue;
        }
        if (!times.empty() && !(fields[0] > times.back())) {
            if (first_segment_only && !row_range) {
                break;
            }
            throw LoadError(origin + ":" + std::to_string(line_no) + ": time " + format_number(fields[0]) + " is not increasing");
        }
        started = true;
        times.push_back(fields[0]);
        rows.emplace_back(fields.begin() + 1, fields.end());
    }
    RawSeries s;
    s.times = std::move(times);
    s.values.resize(static_cast<Eigen::Index>(dimension), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
        for (std::size_t i = 0; i < dimension; ++i) {
            s.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j][i];
        }
    }
    return s;
}

// Natural cubic spline per variable evaluated on n equidistant points
// spanning [t_first, t_last].
inline Eigen::MatrixXd resample_cubic_spline(RawSeries const& series, std::size_t n_points)
{
    auto const m = series.times.size();
    if (m < 4) {
        throw LoadError("cubic spline resampling needs at least 4 points");
    }
    if (n_points < 2) {
        throw std::invalid_argument("resampling needs at least 2 target points");
    }
    TimeGrid grid { series.times.front(), series.times.back(), n_points };
    Eigen::MatrixXd out(series.values.rows(), static_cast<Eigen::Index>(n_points));
    std::vector<double> y(m);
    for (Eigen::Index i = 0; i < series.values.rows(); ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            y[j] = series.values(i, static_cast<Eigen::Index>(j));
        }
        NaturalCubicSpline spline(series.times, y);
        for (std::size_t j = 0; j < n_points; ++j) {
            out(i, static_cast<Eigen::Index>(j)) = j == 0 ? y.front() : (j + 1 == n_points ? y.back() : spline(grid.at(j)));
        }
    }
    return out;
}

inline TrajectoryDataset load_datafile(std::filesystem::path const& path, ProblemInstance const& inst)
{
    auto const& src = inst.data_file();
    std::ifstream in(path);
    if (!in) {
        throw DataUnavailable("data file '" + path.string() + "' for instance '" + inst.name + "' not found");
    }
    auto raw = parse_raw_series(in, inst.dimension(), path.string(), src.first_segment_only, src.row_range);
    TrajectoryDataset data;
    data.variable_names = inst.variables;
    TimeGrid grid { raw.times.empty() ? 0.0 : raw.times.front(), raw.times.empty() ? 0.0 : raw.times.back(), src.n_points };
    data.episodes.push_back({ grid, resample_cubic_spline(raw, src.n_points) });
    data.finalize();
    return data;
}

// Dataset for any instance; file-backed instances are looked up in data_dir.
inline TrajectoryDataset load_instance(ProblemInstance const& inst, std::filesystem::path const& data_dir = {})
{
    if (inst.simulated()) {
        return generate(inst);
    }
    return load_datafile(data_dir / inst.data_file().file_name, inst);
}

// Writes the canonical dump: a header comment, then "t v_1 ... v_D" per row
// (episodes separated by a blank line).
inline void write_dataset(std::ostream& os, TrajectoryDataset const& data)
{
    os << "# t";
    for (auto const& n : data.variable_names) {
        os << ' ' << n;
    }
    os << '\n';
    for (std::size_t e = 0; e < data.episodes.size(); ++e) {
        if (e > 0) {
            os << '\n';
        }
        auto const& ep = data.episodes[e];
        for (Eigen::Index j = 0; j < ep.values.cols(); ++j) {
            os << format_number(ep.grid.at(static_cast<std::size_t>(j)));
            for (Eigen::Index i = 0; i < ep.values.rows(); ++i) {
                os << ' ' << format_number(ep.values(i, j));
            }
            os << '\n';
        }
    }
}

// FNV-1a over the observations printed with 10 significant digits.
inline std::uint64_t dataset_checksum(TrajectoryDataset const& data)
{
    std::uint64_t h = 1469598103934665603ULL;
    char buf[32];
    for (auto const& ep : data.episodes) {
        for (Eigen::Index j = 0; j < ep.values.cols(); ++j) {
            for (Eigen::Index i = 0; i < ep.values.rows(); ++i) {
                int len = std::snprintf(buf, sizeof buf, "%.9e;", ep.values(i, j));
                for (int c = 0; c < len; ++c) {
                    h ^= static_cast<unsigned char>(buf[c]);
                    h *= 1099511628211ULL;
                }
            }
        }
    }
    return h;
}

} // namespace odesr
