#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "odesr/expr/eval.hpp"
#include "odesr/expr/tree.hpp"

namespace odesr {

// Equidistant observation times t0, t0 + h, ..., t_max with h = (t_max - t0) / (N - 1).
struct TimeGrid {
    double t0 { 0.0 };
    double t_max { 1.0 };
    std::size_t n_points { 2 };

    [[nodiscard]] double step() const { return (t_max - t0) / static_cast<double>(n_points - 1); }
    [[nodiscard]] double at(std::size_t j) const
    {
        return j + 1 == n_points ? t_max : t0 + static_cast<double>(j) * step();
    }
    void validate() const
    {
        if (n_points < 2 || !(t_max > t0)) {
            throw std::invalid_argument("time grid needs n_points >= 2 and t_max > t0");
        }
    }
};

struct IntegratorControls {
    double rtol { 1e-6 };
    double atol { 1e-8 };
    double overflow_guard { 1e10 };
    std::size_t max_steps { 100'000 };
    // Include the sensitivity components in the local error norm.
    bool sensitivity_error_control { false };
};

enum class IvpStatus {
    Ok,
    NonFinite,
    StepLimitExceeded,
};

struct IvpSolution {
    Eigen::MatrixXd states; // D x N; columns after a failure are NaN
    IvpStatus status { IvpStatus::Ok };
    double failure_time { std::numeric_limits<double>::quiet_NaN() };
    std::size_t steps { 0 };
    std::size_t rhs_evaluations { 0 };

    [[nodiscard]] bool ok() const noexcept { return status == IvpStatus::Ok; }
};

struct SensitivitySolution {
    Eigen::MatrixXd states; // D x N
    // Row i * P + k holds d y_i / d theta_k along the grid.
    Eigen::MatrixXd sensitivities;
    std::size_t parameters { 0 };
    IvpStatus status { IvpStatus::Ok };
    double failure_time { std::numeric_limits<double>::quiet_NaN() };
    std::size_t steps { 0 };
    std::size_t rhs_evaluations { 0 };

    [[nodiscard]] bool ok() const noexcept { return status == IvpStatus::Ok; }
    [[nodiscard]] double sensitivity(std::size_t i, std::size_t k, std::size_t j) const
    {
        return sensitivities(static_cast<Eigen::Index>(i * parameters + k), static_cast<Eigen::Index>(j));
    }
};

namespace detail {

    struct Dopri5Outcome {
        IvpStatus status { IvpStatus::Ok };
        double failure_time { std::numeric_limits<double>::quiet_NaN() };
        std::size_t emitted { 0 };
        std::size_t steps { 0 };
        std::size_t rhs_evaluations { 0 };
    };

    // Dormand-Prince 5(4) with Hairer's dense output. `rhs(t, y, dy)` fills dy;
    // the first `n_err` components enter the error norm and the overflow
    // guard. `emit(j, y)` receives the solution at grid point j.
    template <typename Rhs, typename Emit>
    Dopri5Outcome dopri5(Rhs&& rhs, std::vector<double> y, TimeGrid const& grid, IntegratorControls const& c,
        std::size_t n_err, Emit&& emit)
    {
        constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
        constexpr double a21 = 1.0 / 5;
        constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
        constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
        constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
        constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176, a65 = -5103.0 / 18656;
        constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
        constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
        constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0, d4 = -10690763975.0 / 1880347072.0,
                         d5 = 701980252875.0 / 199316789632.0, d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

        Dopri5Outcome out;
        auto const n = y.size();
        std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), ynew(n);
        std::vector<double> r1(n), r2(n), r3(n), r4(n), r5(n), dense(n);

        auto finite = [&](std::vector<double> const& v) {
            for (double x : v) {
                if (!std::isfinite(x)) {
                    return false;
                }
            }
            return true;
        };
        auto in_range = [&](std::vector<double> const& v) {
            for (std::size_t i = 0; i < n; ++i) {
                if (!std::isfinite(v[i]) || (i < n_err && std::abs(v[i]) > c.overflow_guard)) {
                    return false;
                }
            }
            return true;
        };
        auto call = [&](double t, std::vector<double> const& yy, std::vector<double>& dy) {
            ++out.rhs_evaluations;
            rhs(t, std::span<double const>(yy), std::span<double>(dy));
            return finite(dy);
        };
        auto fail = [&](IvpStatus s, double t) {
            out.status = s;
            out.failure_time = t;
            return out;
        };

        double t = grid.t0;
        double const t_end = grid.t_max;
        emit(std::size_t { 0 }, std::span<double const>(y));
        out.emitted = 1;
        if (!in_range(y) || !call(t, y, k1)) {
            return fail(IvpStatus::NonFinite, t);
        }

        auto rms = [&](auto&& component) {
            double s = 0.0;
            for (std::size_t i = 0; i < n_err; ++i) {
                double v = component(i);
                s += v * v;
            }
            return std::sqrt(s / static_cast<double>(n_err));
        };

        // initial step (Hairer's heuristic)
        double h;
        {
            double dnf = rms([&](std::size_t i) { return k1[i] / (c.atol + c.rtol * std::abs(y[i])); });
            double dny = rms([&](std::size_t i) { return y[i] / (c.atol + c.rtol * std::abs(y[i])); });
            h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : 0.01 * dny / dnf;
            h = std::min(h, t_end - t);
            for (std::size_t i = 0; i < n; ++i) {
                tmp[i] = y[i] + h * k1[i];
            }
            if (!call(t + h, tmp, k2)) {
                h *= 1e-3;
            } else {
                double der2 = rms([&](std::size_t i) { return (k2[i] - k1[i]) / (c.atol + c.rtol * std::abs(y[i])); }) / h;
                double der12 = std::max(std::abs(der2), dnf);
                double h1 = der12 <= 1e-15 ? std::max(1e-6, std::abs(h) * 1e-3) : std::pow(0.01 / der12, 0.2);
                h = std::min({ 100.0 * h, h1, t_end - t });
            }
        }

        double const span_total = t_end - grid.t0;
        std::size_t next = 1;
        bool last_rejected = false;
        double err_old = 1e-4;

        while (next < grid.n_points) {
            if (out.steps >= c.max_steps) {
                return fail(IvpStatus::StepLimitExceeded, t);
            }
            if (h < 1e-14 * std::max(1.0, std::abs(t)) || h < 1e-15 * span_total) {
                return fail(IvpStatus::StepLimitExceeded, t);
            }
            bool final_step = false;
            if (t + 1.01 * h >= t_end) {
                h = t_end - t;
                final_step = true;
            }
            ++out.steps;

            for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * a21 * k1[i];
            if (!call(t + c2 * h, tmp, k2)) return fail(IvpStatus::NonFinite, t);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
            if (!call(t + c3 * h, tmp, k3)) return fail(IvpStatus::NonFinite, t);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
            if (!call(t + c4 * h, tmp, k4)) return fail(IvpStatus::NonFinite, t);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
            if (!call(t + c5 * h, tmp, k5)) return fail(IvpStatus::NonFinite, t);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
            double const t_new = final_step ? t_end : t + h;
            if (!call(t_new, tmp, k6)) return fail(IvpStatus::NonFinite, t);
            for (std::size_t i = 0; i < n; ++i) ynew[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
            if (!call(t_new, ynew, k7)) return fail(IvpStatus::NonFinite, t);

            double err = rms([&](std::size_t i) {
                double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
                return e / (c.atol + c.rtol * std::max(std::abs(y[i]), std::abs(ynew[i])));
            });
            if (!std::isfinite(err)) {
                return fail(IvpStatus::NonFinite, t);
            }

            if (err <= 1.0) {
                if (!in_range(ynew)) {
                    return fail(IvpStatus::NonFinite, t_new);
                }
                // dense output coefficients
                bool dense_ready = false;
                while (next < grid.n_points) {
                    double tj = grid.at(next);
                    bool at_end = next + 1 == grid.n_points;
                    if (at_end ? !final_step : tj > t_new) {
                        break;
                    }
                    if (at_end || tj == t_new) {
                        emit(next, std::span<double const>(ynew));
                    } else {
                        if (!dense_ready) {
                            for (std::size_t i = 0; i < n; ++i) {
                                double ydiff = ynew[i] - y[i];
                                double bspl = h * k1[i] - ydiff;
                                r1[i] = y[i];
                                r2[i] = ydiff;
                                r3[i] = bspl;
                                r4[i] = ydiff - h * k7[i] - bspl;
                                r5[i] = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
                            }
                            dense_ready = true;
                        }
                        double th = (tj - t) / h;
                        double th1 = 1.0 - th;
                        for (std::size_t i = 0; i < n; ++i) {
                            dense[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
                        }
                        emit(next, std::span<double const>(dense));
                    }
                    ++next;
                    out.emitted = next;
                }
                t = t_new;
                y.swap(ynew);
                k1.swap(k7);

                constexpr double beta = 0.04;
                double fac = std::pow(std::max(err, 1e-10), 0.2 - 0.75 * beta) / std::pow(err_old, beta);
                fac = std::clamp(fac / 0.9, 0.1, 5.0);
                double h_new = h / fac;
                if (last_rejected) {
                    h_new = std::min(h_new, h);
                }
                err_old = std::max(err, 1e-4);
                last_rejected = false;
                h = h_new;
            } else {
                double fac = std::min(5.0, std::pow(err, 0.2) / 0.9);
                h /= fac;
                last_rejected = true;
            }
        }
        return out;
    }

    // Right-hand side of the model ODE: dy_i = f_i(y, theta).
    struct ModelRhs {
        OdeSystemModel const& model;
        std::span<double const> theta;

        void operator()(double, std::span<double const> y, std::span<double> dy) const
        {
            for (std::size_t i = 0; i < model.dimension(); ++i) {
                dy[i] = evaluate(model.tree(i), y, theta);
            }
        }
    };

    // Augmented right-hand side [y, S] with dS/dt = (df/dy) S + df/dtheta.
    struct SensitivityRhs {
        OdeSystemModel const& model;
        std::span<double const> theta;

        void operator()(double, std::span<double const> x, std::span<double> dx) const
        {
            auto const d = model.dimension();
            auto const p = theta.size();
            auto y = x.subspan(0, d);
            Seeding seeding { p, x.subspan(d, d * p), true, 0 };
            for (std::size_t i = 0; i < d; ++i) {
                dx[i] = evaluate_forward(model.tree(i), y, theta, seeding, dx.subspan(d + i * p, p));
            }
        }
    };

    inline void check_inputs(OdeSystemModel const& model, std::span<double const> theta, std::span<double const> y0, TimeGrid const& grid)
    {
        grid.validate();
        if (y0.size() != model.dimension()) {
            throw std::invalid_argument("initial value has wrong dimension");
        }
        if (theta.size() != model.parameter_count()) {
            throw std::invalid_argument("parameter vector has wrong length");
        }
    }

} // namespace detail

inline IvpSolution integrate(OdeSystemModel const& model, std::span<double const> theta, std::span<double const> y0,
    TimeGrid const& grid, IntegratorControls const& controls = {})
{
    detail::check_inputs(model, theta, y0, grid);
    auto const d = model.dimension();
    IvpSolution sol;
    sol.states.setConstant(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(grid.n_points), std::numeric_limits<double>::quiet_NaN());
    auto emit = [&](std::size_t j, std::span<double const> y) {
        for (std::size_t i = 0; i < d; ++i) {
            sol.states(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = y[i];
        }
    };
    auto res = detail::dopri5(detail::ModelRhs { model, theta }, std::vector<double>(y0.begin(), y0.end()), grid, controls, d, emit);
    sol.status = res.status;
    sol.failure_time = res.failure_time;
    sol.steps = res.steps;
    sol.rhs_evaluations = res.rhs_evaluations;
    return sol;
}

inline IvpSolution integrate(OdeSystemModel const& model, std::span<double const> y0, TimeGrid const& grid,
    IntegratorControls const& controls = {})
{
    return integrate(model, model.theta(), y0, grid, controls);
}

inline SensitivitySolution integrate_with_sensitivities(OdeSystemModel const& model, std::span<double const> theta,
    std::span<double const> y0, TimeGrid const& grid, IntegratorControls const& controls = {})
{
    detail::check_inputs(model, theta, y0, grid);
    auto const d = model.dimension();
    auto const p = theta.size();
    auto const nan = std::numeric_limits<double>::quiet_NaN();
    SensitivitySolution sol;
    sol.parameters = p;
    sol.states.setConstant(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(grid.n_points), nan);
    sol.sensitivities.setConstant(static_cast<Eigen::Index>(d * p), static_cast<Eigen::Index>(grid.n_points), nan);

    std::vector<double> x0(d + d * p, 0.0);
    std::copy(y0.begin(), y0.end(), x0.begin());
    auto emit = [&](std::size_t j, std::span<double const> x) {
        auto col = static_cast<Eigen::Index>(j);
        for (std::size_t i = 0; i < d; ++i) {
            sol.states(static_cast<Eigen::Index>(i), col) = x[i];
        }
        for (std::size_t r = 0; r < d * p; ++r) {
            sol.sensitivities(static_cast<Eigen::Index>(r), col) = x[d + r];
        }
    };
    auto n_err = controls.sensitivity_error_control ? x0.size() : d;
    auto res = detail::dopri5(detail::SensitivityRhs { model, theta }, std::move(x0), grid, controls, n_err, emit);
    sol.status = res.status;
    sol.failure_time = res.failure_time;
    sol.steps = res.steps;
    sol.rhs_evaluations = res.rhs_evaluations;
    return sol;
}

// Classical RK4 with a fixed number of substeps per grid interval,
// ceil(h / h_internal). A non-positive h_internal selects 1e-3 * (t_max - t0).
inline IvpSolution integrate_fixed_rk4(OdeSystemModel const& model, std::span<double const> theta, std::span<double const> y0,
    TimeGrid const& grid, double h_internal = 0.0, double overflow_guard = 1e10)
{
    detail::check_inputs(model, theta, y0, grid);
    if (h_internal <= 0.0) {
        h_internal = 1e-3 * (grid.t_max - grid.t0);
    }
    auto const d = model.dimension();
    IvpSolution sol;
    sol.states.setConstant(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(grid.n_points), std::numeric_limits<double>::quiet_NaN());
    detail::ModelRhs f { model, theta };

    std::vector<double> y(y0.begin(), y0.end()), k1(d), k2(d), k3(d), k4(d), tmp(d);
    auto store = [&](std::size_t j) {
        for (std::size_t i = 0; i < d; ++i) {
            sol.states(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = y[i];
        }
    };
    auto good = [&](std::vector<double> const& v) {
        for (double x : v) {
            if (!std::isfinite(x) || std::abs(x) > overflow_guard) {
                return false;
            }
        }
        return true;
    };
    store(0);
    auto const substeps = static_cast<std::size_t>(std::max(1.0, std::ceil(grid.step() / h_internal - 1e-9)));
    for (std::size_t j = 1; j < grid.n_points; ++j) {
        double const ta = grid.at(j - 1);
        double const hs = (grid.at(j) - ta) / static_cast<double>(substeps);
        for (std::size_t s = 0; s < substeps; ++s) {
            double const t = ta + static_cast<double>(s) * hs;
            f(t, y, k1);
            for (std::size_t i = 0; i < d; ++i) tmp[i] = y[i] + 0.5 * hs * k1[i];
            f(t + 0.5 * hs, tmp, k2);
            for (std::size_t i = 0; i < d; ++i) tmp[i] = y[i] + 0.5 * hs * k2[i];
            f(t + 0.5 * hs, tmp, k3);
            for (std::size_t i = 0; i < d; ++i) tmp[i] = y[i] + hs * k3[i];
            f(t + hs, tmp, k4);
            for (std::size_t i = 0; i < d; ++i) y[i] += hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            sol.steps += 1;
            sol.rhs_evaluations += 4;
            if (!std::all_of(k1.begin(), k1.end(), [](double v) { return std::isfinite(v); }) || !good(y)) {
                sol.status = IvpStatus::NonFinite;
                sol.failure_time = t;
                return sol;
            }
        }
        store(j);
    }
    return sol;
}

} // namespace odesr
