#pragma once

#include <functional>

#include <Eigen/Core>

namespace gpreg {

using ObjectiveFn = std::function<double(const Eigen::VectorXd&)>;

struct OptimOptions {
    int max_iters = 200;        // gradient iterations
    int lbfgs_memory = 8;
    double grad_tol = 1e-6;     // projected-gradient inf norm
    double f_rel_tol = 1e-11;   // relative objective decrease
    double fd_rel_step = 1e-5;  // central-difference relative step
    double fd_abs_floor = 1e-7;
};

struct OptimResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int n_evals = 0;
    int n_iters = 0;
    bool converged = false;
};

/// Central-difference gradient honoring the box: the stencil is shifted inside
/// the bounds when x is within a step of an edge (one-sided there).
Eigen::VectorXd fd_gradient(const ObjectiveFn& fn, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                            double rel_step, double abs_floor, int* n_evals = nullptr);

/// Central second-difference Hessian, symmetrized as (H + H')/2. Stencils are
/// shifted inside the box near edges; *one_sided is set when that happened.
Eigen::MatrixXd fd_hessian(const ObjectiveFn& fn, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                           double rel_step = 1e-4, bool* one_sided = nullptr);

/// Projected L-BFGS with Armijo backtracking along the projection arc.
/// Monotone: the returned iterate never exceeds f(x0).
OptimResult minimize_bounded(const ObjectiveFn& fn, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                             const OptimOptions& opts = {});

}  // namespace gpreg
