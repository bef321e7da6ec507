#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "odesr/expr/eval.hpp"
#include "odesr/expr/tree.hpp"
#include "odesr/lm.hpp"
#include "odesr/odeint.hpp"

namespace odesr {

inline constexpr double penalty_fitness = 1e12;

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One trajectory from one initial condition: Y is D x N on an equidistant grid.
struct Episode {
    TimeGrid grid;
    Eigen::MatrixXd values;
};

struct TrajectoryDataset {
    std::vector<Episode> episodes;
    std::vector<std::string> variable_names;
    Eigen::VectorXd variances; // population variance per variable, pooled over episodes

    [[nodiscard]] std::size_t dimension() const { return variable_names.size(); }

    // Computes the pooled variances and checks shapes, finiteness and
    // non-zero variance.
    void finalize()
    {
        if (episodes.empty()) {
            throw DatasetError("dataset has no episodes");
        }
        auto const d = static_cast<Eigen::Index>(dimension());
        if (d == 0) {
            throw DatasetError("dataset has no variables");
        }
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
        double count = 0.0;
        for (std::size_t e = 0; e < episodes.size(); ++e) {
            auto const& ep = episodes[e];
            if (ep.values.rows() != d) {
                throw DatasetError("episode " + std::to_string(e) + " has " + std::to_string(ep.values.rows()) + " variables, expected " + std::to_string(d));
            }
            if (static_cast<std::size_t>(ep.values.cols()) != ep.grid.n_points) {
                throw DatasetError("episode " + std::to_string(e) + " does not match its time grid");
            }
            ep.grid.validate();
            if (!ep.values.allFinite()) {
                throw DatasetError("episode " + std::to_string(e) + " contains non-finite observations");
            }
            sum += ep.values.rowwise().sum();
            count += static_cast<double>(ep.values.cols());
        }
        Eigen::VectorXd mean = sum / count;
        for (auto const& ep : episodes) {
            sq += (ep.values.colwise() - mean).array().square().matrix().rowwise().sum();
        }
        variances = sq / count;
        for (Eigen::Index i = 0; i < d; ++i) {
            if (!(variances(i) > 0.0)) {
                throw DatasetError("variable '" + variable_names[static_cast<std::size_t>(i)] + "' has zero variance");
            }
        }
    }
};

// Sum over variables of the mean squared error normalized by the observed
// variance. Any non-finite prediction yields the penalty value.
inline double snmse(Eigen::MatrixXd const& y, Eigen::MatrixXd const& yhat, Eigen::VectorXd const& variances)
{
    if (y.rows() != yhat.rows() || y.cols() != yhat.cols() || variances.size() != y.rows()) {
        throw std::invalid_argument("snmse: shape mismatch");
    }
    if (!yhat.allFinite()) {
        return penalty_fitness;
    }
    auto const n = static_cast<double>(y.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        total += (y.row(i) - yhat.row(i)).squaredNorm() / n / variances(i);
    }
    return total;
}

// Mean of per-episode SNMSE.
inline double snmse(TrajectoryDataset const& data, std::span<Eigen::MatrixXd const> predictions)
{
    double total = 0.0;
    for (std::size_t e = 0; e < data.episodes.size(); ++e) {
        double s = snmse(data.episodes[e].values, predictions[e], data.variances);
        if (s >= penalty_fitness) {
            return penalty_fitness;
        }
        total += s;
    }
    return total / static_cast<double>(data.episodes.size());
}

// Second-order finite differences: central in the interior, one-sided at the ends.
inline Eigen::MatrixXd approximate_derivatives(Episode const& ep)
{
    auto const& y = ep.values;
    auto const n = y.cols();
    if (n < 3) {
        throw DatasetError("derivative approximation needs at least 3 points");
    }
    double const h = ep.grid.step();
    Eigen::MatrixXd dy(y.rows(), n);
    for (Eigen::Index j = 1; j + 1 < n; ++j) {
        dy.col(j) = (y.col(j + 1) - y.col(j - 1)) / (2.0 * h);
    }
    dy.col(0) = (-3.0 * y.col(0) + 4.0 * y.col(1) - y.col(2)) / (2.0 * h);
    dy.col(n - 1) = (3.0 * y.col(n - 1) - 4.0 * y.col(n - 2) + y.col(n - 3)) / (2.0 * h);
    return dy;
}

inline std::vector<Eigen::MatrixXd> approximate_derivatives(TrajectoryDataset const& data)
{
    std::vector<Eigen::MatrixXd> out;
    out.reserve(data.episodes.size());
    for (auto const& ep : data.episodes) {
        out.push_back(approximate_derivatives(ep));
    }
    return out;
}

enum class FitnessMode {
    Derivative,       // D
    Ivp,              // I
    DerivativePlusIvp // D+I
};

struct FitnessConfig {
    FitnessMode mode { FitnessMode::Ivp };
    bool optimize_derivative_step { false };
    bool optimize_ivp_step { false };
    int lm_iters_derivative { 10 };
    int lm_iters_ivp { 10 };
    // Candidates that need more internal steps than this are scored as
    // failed; the integrator's own default is more generous.
    IntegratorControls controls { .max_steps = 10'000 };

    // One of D, I, D+I, D_opt, I_opt, I_opt+D_opt.
    static FitnessConfig named(std::string_view name)
    {
        FitnessConfig c;
        if (name == "D") {
            c.mode = FitnessMode::Derivative;
        } else if (name == "I") {
            c.mode = FitnessMode::Ivp;
        } else if (name == "D+I" || name == "I+D") {
            c.mode = FitnessMode::DerivativePlusIvp;
        } else if (name == "D_opt") {
            c.mode = FitnessMode::Derivative;
            c.optimize_derivative_step = true;
        } else if (name == "I_opt") {
            c.mode = FitnessMode::Ivp;
            c.optimize_ivp_step = true;
        } else if (name == "I_opt+D_opt" || name == "D_opt+I_opt") {
            c.mode = FitnessMode::Ivp;
            c.optimize_derivative_step = true;
            c.optimize_ivp_step = true;
        } else {
            throw std::invalid_argument("unknown configuration '" + std::string(name) + "'");
        }
        return c;
    }

    [[nodiscard]] bool optimizes() const noexcept { return optimize_derivative_step || optimize_ivp_step; }
};

inline constexpr std::string_view configuration_names[] = { "D", "I", "D+I", "D_opt", "I_opt", "I_opt+D_opt" };

// Evaluation counters shared by concurrent evaluations of one run.
struct EvaluationBudget {
    std::atomic<std::uint64_t> fitness_evaluations { 0 };
    std::atomic<std::uint64_t> tree_evaluations { 0 };
    std::atomic<std::uint64_t> ivp_solves { 0 };
    std::atomic<std::uint64_t> lm_residual_evaluations { 0 };
};

class FitContext {
public:
    FitContext(TrajectoryDataset data, FitnessConfig config)
        : data_(std::move(data))
        , config_(config)
    {
        derivatives_ = approximate_derivatives(data_);
        auto const d = static_cast<Eigen::Index>(data_.dimension());
        // D-mode errors are normalized by the variance of the approximated derivatives
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
        double count = 0.0;
        for (auto const& dy : derivatives_) {
            sum += dy.rowwise().sum();
            count += static_cast<double>(dy.cols());
        }
        Eigen::VectorXd mean = sum / count;
        for (auto const& dy : derivatives_) {
            sq += (dy.colwise() - mean).array().square().matrix().rowwise().sum();
        }
        derivative_variances_ = sq / count;
        for (Eigen::Index i = 0; i < d; ++i) {
            if (!(derivative_variances_(i) > 0.0)) {
                derivative_variances_(i) = 1.0;
            }
        }
    }

    FitContext(FitContext const&) = delete;
    FitContext& operator=(FitContext const&) = delete;

    [[nodiscard]] TrajectoryDataset const& dataset() const noexcept { return data_; }
    [[nodiscard]] std::vector<Eigen::MatrixXd> const& derivatives() const noexcept { return derivatives_; }
    [[nodiscard]] Eigen::VectorXd const& derivative_variances() const noexcept { return derivative_variances_; }
    [[nodiscard]] FitnessConfig const& config() const noexcept { return config_; }
    [[nodiscard]] EvaluationBudget& budget() const noexcept { return budget_; }

private:
    TrajectoryDataset data_;
    FitnessConfig config_;
    std::vector<Eigen::MatrixXd> derivatives_;
    Eigen::VectorXd derivative_variances_;
    mutable EvaluationBudget budget_;
};

// Row layout shared by both residual kinds: episode-major, then variable, then point.
inline std::size_t residual_count(TrajectoryDataset const& data)
{
    std::size_t m = 0;
    for (auto const& ep : data.episodes) {
        m += static_cast<std::size_t>(ep.values.size());
    }
    return m;
}

// Partitioned residuals: f_i evaluated on the observed states against the
// approximated derivatives, scaled so that |r|^2 is the derivative objective.
inline bool derivative_residuals(OdeSystemModel const& model, std::span<double const> theta, FitContext const& ctx,
    Eigen::VectorXd& r, Eigen::MatrixXd* jacobian)
{
    auto const& data = ctx.dataset();
    auto const d = model.dimension();
    auto const p = theta.size();
    auto const e_count = static_cast<double>(data.episodes.size());
    r.resize(static_cast<Eigen::Index>(residual_count(data)));
    if (jacobian) {
        jacobian->resize(r.size(), static_cast<Eigen::Index>(p));
    }
    std::vector<double> state(d), grad(p);
    Seeding seeding { p, {}, true, 0 };
    Eigen::Index row = 0;
    std::uint64_t evals = 0;
    for (std::size_t e = 0; e < data.episodes.size(); ++e) {
        auto const& y = data.episodes[e].values;
        auto const& dy = ctx.derivatives()[e];
        auto const n = y.cols();
        for (std::size_t i = 0; i < d; ++i) {
            double const scale = 1.0 / std::sqrt(ctx.derivative_variances()(static_cast<Eigen::Index>(i)) * static_cast<double>(n) * e_count);
            for (Eigen::Index j = 0; j < n; ++j) {
                for (std::size_t v = 0; v < d; ++v) {
                    state[v] = y(static_cast<Eigen::Index>(v), j);
                }
                double f;
                if (jacobian) {
                    f = evaluate_forward(model.tree(i), state, theta, seeding, grad);
                    for (std::size_t k = 0; k < p; ++k) {
                        (*jacobian)(row, static_cast<Eigen::Index>(k)) = grad[k] * scale;
                    }
                } else {
                    f = evaluate(model.tree(i), state, theta);
                }
                r(row) = (f - dy(static_cast<Eigen::Index>(i), j)) * scale;
                ++row;
                ++evals;
            }
        }
    }
    ctx.budget().tree_evaluations.fetch_add(evals, std::memory_order_relaxed);
    return r.allFinite() && (!jacobian || jacobian->allFinite());
}

// IVP residuals (yhat - y) / sqrt(var * N * E) with sensitivity Jacobian rows.
inline bool ivp_residuals(OdeSystemModel const& model, std::span<double const> theta, FitContext const& ctx,
    Eigen::VectorXd& r, Eigen::MatrixXd* jacobian)
{
    auto const& data = ctx.dataset();
    auto const d = model.dimension();
    auto const p = theta.size();
    auto const e_count = static_cast<double>(data.episodes.size());
    r.resize(static_cast<Eigen::Index>(residual_count(data)));
    if (jacobian) {
        jacobian->resize(r.size(), static_cast<Eigen::Index>(p));
    }
    Eigen::Index row = 0;
    for (std::size_t e = 0; e < data.episodes.size(); ++e) {
        auto const& ep = data.episodes[e];
        auto const n = ep.values.cols();
        Eigen::VectorXd y0 = ep.values.col(0);
        std::span<double const> y0s(y0.data(), static_cast<std::size_t>(y0.size()));
        ctx.budget().ivp_solves.fetch_add(1, std::memory_order_relaxed);
        if (jacobian) {
            auto sol = integrate_with_sensitivities(model, theta, y0s, ep.grid, ctx.config().controls);
            ctx.budget().tree_evaluations.fetch_add(sol.rhs_evaluations * d, std::memory_order_relaxed);
            if (!sol.ok()) {
                return false;
            }
            for (std::size_t i = 0; i < d; ++i) {
                auto const ii = static_cast<Eigen::Index>(i);
                double const scale = 1.0 / std::sqrt(data.variances(ii) * static_cast<double>(n) * e_count);
                for (Eigen::Index j = 0; j < n; ++j) {
                    r(row) = (sol.states(ii, j) - ep.values(ii, j)) * scale;
                    for (std::size_t k = 0; k < p; ++k) {
                        (*jacobian)(row, static_cast<Eigen::Index>(k)) = sol.sensitivities(static_cast<Eigen::Index>(i * p + k), j) * scale;
                    }
                    ++row;
                }
            }
        } else {
            auto sol = integrate(model, theta, y0s, ep.grid, ctx.config().controls);
            ctx.budget().tree_evaluations.fetch_add(sol.rhs_evaluations * d, std::memory_order_relaxed);
            if (!sol.ok()) {
                return false;
            }
            for (std::size_t i = 0; i < d; ++i) {
                auto const ii = static_cast<Eigen::Index>(i);
                double const scale = 1.0 / std::sqrt(data.variances(ii) * static_cast<double>(n) * e_count);
                for (Eigen::Index j = 0; j < n; ++j) {
                    r(row++) = (sol.states(ii, j) - ep.values(ii, j)) * scale;
                }
            }
        }
    }
    return r.allFinite() && (!jacobian || jacobian->allFinite());
}

// Derivative objective: mean over episodes of the variance-normalized MSE
// between f(Y) and the approximated derivatives.
inline double derivative_objective(OdeSystemModel const& model, std::span<double const> theta, FitContext const& ctx)
{
    Eigen::VectorXd r;
    if (!derivative_residuals(model, theta, ctx, r, nullptr)) {
        return penalty_fitness;
    }
    return std::min(r.squaredNorm(), penalty_fitness);
}

// SNMSE of the IVP solution against the observations (mean over episodes).
inline double ivp_snmse(OdeSystemModel const& model, std::span<double const> theta, TrajectoryDataset const& data,
    IntegratorControls const& controls = {})
{
    std::vector<Eigen::MatrixXd> predictions;
    predictions.reserve(data.episodes.size());
    for (auto const& ep : data.episodes) {
        Eigen::VectorXd y0 = ep.values.col(0);
        auto sol = integrate(model, theta, std::span<double const>(y0.data(), static_cast<std::size_t>(y0.size())), ep.grid, controls);
        if (!sol.ok()) {
            return penalty_fitness;
        }
        predictions.push_back(std::move(sol.states));
    }
    return std::min(snmse(data, predictions), penalty_fitness);
}

inline double ivp_objective(OdeSystemModel const& model, std::span<double const> theta, FitContext const& ctx)
{
    Eigen::VectorXd r;
    if (!ivp_residuals(model, theta, ctx, r, nullptr)) {
        return penalty_fitness;
    }
    return std::min(r.squaredNorm(), penalty_fitness);
}

struct FitnessResult {
    double fitness { penalty_fitness };
    std::vector<double> theta;
    LmResult derivative_lm;
    LmResult ivp_lm;
};

inline LmResult optimize_derivative_step(OdeSystemModel const& model, std::span<double const> theta, FitContext const& ctx)
{
    LeastSquaresProblem problem;
    problem.theta0.assign(theta.begin(), theta.end());
    problem.max_iterations = ctx.config().lm_iters_derivative;
    problem.residual = [&](std::span<double const> th, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
        return derivative_residuals(model, th, ctx, r, J);
    };
    auto res = minimize(problem);
    ctx.budget().lm_residual_evaluations.fetch_add(res.residual_evaluations, std::memory_order_relaxed);
    return res;
}

inline LmResult optimize_ivp_step(OdeSystemModel const& model, std::span<double const> theta, FitContext const& ctx)
{
    LeastSquaresProblem problem;
    problem.theta0.assign(theta.begin(), theta.end());
    problem.max_iterations = ctx.config().lm_iters_ivp;
    problem.residual = [&](std::span<double const> th, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
        return ivp_residuals(model, th, ctx, r, J);
    };
    auto res = minimize(problem);
    ctx.budget().lm_residual_evaluations.fetch_add(res.residual_evaluations, std::memory_order_relaxed);
    return res;
}

// Memetic evaluation: optional LM on the derivative residuals, then optional
// LM on the IVP residuals (each writing back its parameters), then the
// configured fitness at the final parameters.
inline FitnessResult evaluate_fitness(OdeSystemModel const& model, FitContext const& ctx)
{
    auto const& cfg = ctx.config();
    FitnessResult out;
    out.theta.assign(model.theta().begin(), model.theta().end());
    ctx.budget().fitness_evaluations.fetch_add(1, std::memory_order_relaxed);

    // objective values known at the current theta (from LM), negative = unknown
    double d_obj = -1.0;
    double i_obj = -1.0;
    bool const has_params = model.parameter_count() > 0;

    if (cfg.optimize_derivative_step && has_params) {
        out.derivative_lm = optimize_derivative_step(model, out.theta, ctx);
        if (out.derivative_lm.status != LmStatus::InvalidResidual) {
            out.theta = out.derivative_lm.theta;
            d_obj = 2.0 * out.derivative_lm.cost_final;
        }
    }
    if (cfg.optimize_ivp_step && has_params) {
        out.ivp_lm = optimize_ivp_step(model, out.theta, ctx);
        if (out.ivp_lm.status != LmStatus::InvalidResidual) {
            if (out.ivp_lm.theta != out.theta) {
                d_obj = -1.0;
            }
            out.theta = out.ivp_lm.theta;
            i_obj = 2.0 * out.ivp_lm.cost_final;
        } else {
            i_obj = penalty_fitness;
        }
    }

    auto derivative_value = [&] { return d_obj >= 0.0 ? d_obj : derivative_objective(model, out.theta, ctx); };
    auto ivp_value = [&] { return i_obj >= 0.0 ? i_obj : ivp_objective(model, out.theta, ctx); };

    double f = penalty_fitness;
    switch (cfg.mode) {
    case FitnessMode::Derivative: f = derivative_value(); break;
    case FitnessMode::Ivp: f = ivp_value(); break;
    case FitnessMode::DerivativePlusIvp: {
        double a = derivative_value();
        double b = a < penalty_fitness ? ivp_value() : penalty_fitness;
        f = a + b;
        break;
    }
    }
    out.fitness = (std::isfinite(f) && f < penalty_fitness) ? f : penalty_fitness;
    return out;
}

} // namespace odesr
