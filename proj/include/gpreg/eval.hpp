#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gpreg/pointcloud.hpp"
#include "gpreg/surface.hpp"
#include "gpreg/transform.hpp"
#include "gpreg/windowing.hpp"

namespace gpreg {

/// Per-coordinate normalized RMSE of a deformation recovery. Coordinates are
/// ordered (x, y, z, phi); every coordinate's NRMSE is reported, all divided
/// by the one shared normalizer.
struct NrmseResult {
    std::array<double, 4> value{};
    double normalizer = 0.0;  // mean |applied deformation| over masked coords
};

/// true_def / est_def are n x 4 matrices of per-point parameter values
/// (m_x, m_y, m_z, m_phi). applied_mask marks the coordinates that carry
/// nonzero applied deformation; the normalizer is the mean absolute value of
/// the concatenated true deformations over those coordinates.
NrmseResult nrmse(const Eigen::MatrixXd& true_def, const Eigen::MatrixXd& est_def,
                  const std::array<bool, 4>& applied_mask);

/// Ensemble CRPS averaged over test points. sims is n_sim x n_test; column j
/// is the predictive ensemble for truth y[j]. The default all-pairs estimator
/// is mean_i |X_i - y| - 0.5 mean_{i,j} |X_i - X_j| (i = j included); fair
/// switches to the i != j, n(n-1)-denominator variant.
double crps_ensemble(const Eigen::MatrixXd& sims, const Eigen::VectorXd& y, bool fair = false);

enum class CrossvalMethod { Rigid, Nonrigid };

CrossvalMethod crossval_method_from_string(const std::string& s);
std::string to_string(CrossvalMethod m);

struct CrossvalConfig {
    CrossvalMethod method = CrossvalMethod::Nonrigid;
    double holdout_frac = 0.001;
    int n_sim = 30;
    std::uint64_t seed = 0;
    // Registration settings.
    int grid_nx = 4, grid_ny = 4;
    double overlap = 0.66;
    int subsamples = 250;       // per window per cloud (nonrigid)
    int rigid_subsample = 500;  // per cloud (rigid)
    PenaltyConfig penalty;
    double nu = 1.0;
    double trans_bound = 1.2;
    int n_starts = 3;
    int n_workers = 0;  // 0 = hardware concurrency
    SurfaceKind surface = SurfaceKind::GaussianProcess;
    // Kriging settings.
    int knn_k = 1000;
    bool fair_crps = false;
    // Query sets larger than this fall back to the surface's conditional mean
    // instead of a joint posterior draw when simulating nonrigid fields.
    int field_sim_cap = 3000;

    void validate() const;
};

struct MetricReport {
    double rmse = 0.0;
    double crps = 0.0;
    int n_test = 0;
    int n_simulations = 0;
    CrossvalConfig config;  // echo of the configuration actually used
    std::vector<Eigen::Vector2d> holdout_locations;
    Eigen::VectorXd truths;       // held-out elevations
    Eigen::VectorXd predictions;  // point predictions at the holdout
    Eigen::MatrixXd ensemble;     // n_sim x n_test predictive draws (audit)
};

/// Holdout cross-validation of a registration method: hold out a fraction of
/// the fixed cloud, register the moving cloud against the remainder, krige the
/// held-out elevations from the combined registered data, and score point
/// predictions (RMSE) plus an uncertainty-propagated ensemble (CRPS).
/// Rigid: the global parameter vector is simulated from its Hessian-based
/// covariance per ensemble member. Nonrigid: window estimates are simulated
/// from their parameter covariances, the surfaces refitted and the fields
/// conditionally simulated, then each member re-registers and re-kriges.
MetricReport crossval(const PointCloud& fixed, const PointCloud& moving,
                      const CrossvalConfig& cfg);

}  // namespace gpreg
