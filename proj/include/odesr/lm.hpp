#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace odesr {

// Residual callback: fills r (m) at theta and, when J is non-null, the
// Jacobian (m x |theta|). Returning false marks the point as invalid (e.g.
// the IVP diverged). Residuals must not depend on whether J is requested.
using ResidualFunction = std::function<bool(std::span<double const> theta, Eigen::VectorXd& r, Eigen::MatrixXd* J)>;

struct LeastSquaresProblem {
    ResidualFunction residual;
    std::vector<double> theta0;
    int max_iterations { 10 };
    double lambda0 { 1e-3 };
};

enum class LmStatus {
    Converged,
    IterationLimit,
    InvalidResidual,
};

struct LmResult {
    std::vector<double> theta;
    double cost_initial { std::numeric_limits<double>::infinity() };
    double cost_final { std::numeric_limits<double>::infinity() };
    int iterations { 0 };
    int accepted_steps { 0 };
    std::size_t residual_evaluations { 0 };
    LmStatus status { LmStatus::IterationLimit };
    std::vector<double> accepted_costs; // cost after each accepted step
};

struct LmTolerances {
    double relative_cost_decrease { 1e-9 };
    double step_norm { 1e-12 };
    double diagonal_floor { 1e-12 };
    double lambda_max { 1e16 };
};

// Levenberg-Marquardt with multiplicative damping on the scaled normal
// equations (J'J + lambda diag(J'J)) delta = -J'r. Cost is 0.5 * |r|^2.
inline LmResult minimize(LeastSquaresProblem const& problem, LmTolerances const& tol = {})
{
    LmResult res;
    auto const p = problem.theta0.size();
    res.theta = problem.theta0;

    Eigen::VectorXd r, r_trial;
    Eigen::MatrixXd J;
    auto call = [&](std::span<double const> th, Eigen::VectorXd& rr, Eigen::MatrixXd* JJ) {
        ++res.residual_evaluations;
        if (!problem.residual(th, rr, JJ)) {
            return false;
        }
        return rr.allFinite() && (!JJ || JJ->allFinite());
    };

    if (!call(res.theta, r, &J)) {
        res.status = LmStatus::InvalidResidual;
        return res;
    }
    double cost = 0.5 * r.squaredNorm();
    res.cost_initial = cost;
    res.cost_final = cost;
    if (cost == 0.0 || p == 0) {
        res.status = LmStatus::Converged;
        return res;
    }

    double lambda = problem.lambda0;
    std::vector<double> trial(p);

    while (res.iterations < problem.max_iterations) {
        Eigen::MatrixXd A = J.transpose() * J;
        Eigen::VectorXd g = J.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() == 0.0) {
            res.status = LmStatus::Converged;
            return res;
        }
        Eigen::VectorXd diag = A.diagonal().cwiseMax(tol.diagonal_floor);
        ++res.iterations;

        Eigen::MatrixXd M = A;
        M.diagonal() += lambda * diag;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
        Eigen::VectorXd delta = ldlt.solve(-g);
        if (ldlt.info() != Eigen::Success || !delta.allFinite()) {
            lambda *= 10.0;
            if (lambda > tol.lambda_max) {
                break;
            }
            continue;
        }
        if (delta.norm() < tol.step_norm) {
            res.status = LmStatus::Converged;
            return res;
        }
        for (std::size_t k = 0; k < p; ++k) {
            trial[k] = res.theta[k] + delta(static_cast<Eigen::Index>(k));
        }

        // Trial points only need residuals; the Jacobian is formed once a
        // step is accepted and another iteration follows.
        if (call(trial, r_trial, nullptr)) {
            double cost_trial = 0.5 * r_trial.squaredNorm();
            if (cost_trial < cost) {
                double decrease = (cost - cost_trial) / cost;
                res.theta = trial;
                r.swap(r_trial);
                cost = cost_trial;
                res.cost_final = cost;
                ++res.accepted_steps;
                res.accepted_costs.push_back(cost);
                lambda /= 10.0;
                if (cost == 0.0 || decrease < tol.relative_cost_decrease) {
                    res.status = LmStatus::Converged;
                    return res;
                }
                if (res.iterations >= problem.max_iterations) {
                    break;
                }
                if (!call(res.theta, r_trial, &J)) {
                    // valid without derivatives but not with them; stop at the accepted point
                    res.status = LmStatus::IterationLimit;
                    return res;
                }
                continue;
            }
        }
        lambda *= 10.0;
        if (lambda > tol.lambda_max) {
            break;
        }
    }
    res.status = LmStatus::IterationLimit;
    return res;
}

} // namespace odesr
