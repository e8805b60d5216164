#pragma once

#include <array>
#include <cstdint>

#include <Eigen/Core>

#include "gpreg/optim.hpp"
#include "gpreg/pointcloud.hpp"
#include "gpreg/transform.hpp"

namespace gpreg {

/// One local penalized-likelihood problem: the window's subsampled data plus
/// everything needed to evaluate f(Y, theta) = L + P.
struct Objective {
    PointCloud fixed_sub;
    PointCloud moving_sub;
    PenaltyConfig penalty;
    Bounds bounds = Bounds::defaults();
    double nu = 1.0;                          // fixed smoothness, never optimized
    Eigen::Vector2d rotation_center{0, 0};
    std::array<bool, kNumParams> free_mask{true, true, true, true, true, true, true};
    bool fast_matern = true;
    std::size_t size_cap = 1000;

    void validate() const;
    int n_free() const;
    std::array<int, kNumParams> free_indices() const;  // first n_free() entries valid
};

/// Assembles the joint mean (0,...,0, mu_z,...) and covariance at theta and
/// returns nll_gaussian + penalty. Indefinite covariance yields the barrier
/// value 1e10 + |theta|^2 so derivative-free progress remains possible.
double objective_value(const Objective& obj, const Eigen::VectorXd& theta);

/// Scale-aware default start: zero transform, sigma2 = variance of the stacked
/// elevations, a = quarter of the joint bounding-box diagonal, tau2 = 0.01*sigma2.
Eigen::VectorXd default_init(const Objective& obj);

struct FitOptions {
    int n_starts = 3;          // zero/default start plus jittered restarts
    std::uint64_t seed = 0;    // drives the restart jitter only
    OptimOptions optim;
    double hessian_rel_step = 1e-4;
};

struct FitResult {
    RigidParams theta_hat;
    Eigen::VectorXd theta_packed;       // full 7-vector
    double nll = 0.0;                   // objective value at the optimum
    Eigen::MatrixXd hessian;            // over the free parameters
    Eigen::MatrixXd param_cov;          // 7x7; zero rows/cols for fixed params
    bool hessian_pd = false;            // pseudo-inverse fallback used when false
    bool hessian_one_sided = false;
    bool converged = false;
    int n_evals = 0;
};

/// Box-constrained quasi-Newton fit with central-difference gradients and a
/// multi-start strategy; the lowest objective wins and the descent contract
/// f(theta_hat) <= f(init) always holds.
FitResult fit_rigid(const Objective& obj, const Eigen::VectorXd& init,
                    const FitOptions& opts = {});

/// Central second-difference Hessian of the objective over the free
/// parameters, symmetrized.
Eigen::MatrixXd numerical_hessian(const Objective& obj, const Eigen::VectorXd& theta,
                                  double rel_step = 1e-4, bool* one_sided = nullptr);

/// Everything needed to set up and run one rigid fit on a pair of subsamples
/// with scale-aware bounds/initialization and the rotation centered on the
/// moving subsample's centroid.
struct RigidFitSetup {
    PenaltyConfig penalty;
    double nu = 1.0;
    double trans_bound = 1.0;
    int n_starts = 3;
    std::uint64_t seed = 0;
    OptimOptions optim;
    bool estimate_cov = true;
    MaternParams fixed_cov{};  // used when !estimate_cov
    std::array<bool, 4> estimate_transform{true, true, true, true};
};

struct RigidFitOutput {
    FitResult fit;
    Eigen::Vector2d rotation_center{0, 0};
    Bounds bounds;
};

RigidFitOutput fit_rigid_auto(const PointCloud& fixed_sub, const PointCloud& moving_sub,
                              const RigidFitSetup& setup);

}  // namespace gpreg
