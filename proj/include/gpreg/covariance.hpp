#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>

#include "gpreg/errors.hpp"
#include "gpreg/pointcloud.hpp"

namespace gpreg {

struct RigidTransform;  // transform.hpp

/// Isotropic Matern covariance parameters:
///   Cov(d) = sigma2 * 2^{1-nu}/Gamma(nu) * (d/a)^nu * K_nu(d/a)
/// plus an additive nugget tau2 on the diagonal (never inside matern()).
struct MaternParams {
    double sigma2 = 1.0;  // marginal variance
    double a = 1.0;       // spatial range (meters)
    double nu = 1.0;      // smoothness, fixed per run
    double tau2 = 0.0;    // nugget variance

    void validate() const;
};

/// Matern covariance at distance d, exact Bessel evaluation. sigma2 at d=0.
double matern(double d, const MaternParams& p);

/// Fast Matern correlation rho_nu(x), x = d/a, rho(0) = 1. Backed by a cubic
/// Hermite table built from the exact Bessel routine; exact evaluation is used
/// outside the tabulated interval. Absolute accuracy ~1e-10 on the table.
class MaternShape {
public:
    explicit MaternShape(double nu);
    double rho(double x) const;

    /// Shared per-nu instances (tables are expensive to build).
    static const MaternShape& get(double nu);

private:
    double nu_;
    double x_lo_, x_hi_, dx_, inv_dx_;
    std::vector<double> val_, der_;
    double exact_rho(double x) const;
};

/// Joint (n_u+n_v) x (n_u+n_v) covariance Sigma + tau2*I for the stacked
/// response (Y1, Y2), with the block split recorded.
struct JointCov {
    Eigen::MatrixXd m;
    int n_fixed = 0;
    int n_moving = 0;
};

/// Assemble the joint covariance: block (1,1) from distances among fixed
/// locations, (1,2)/(2,1) between fixed and T(moving), (2,2) among T(moving);
/// nugget added on the diagonal. The (2,2) block is computed from the original
/// moving distances (rigid maps preserve them).
JointCov cross_cov_blocks(const PointCloud& fixed, const PointCloud& moving,
                          const RigidTransform& T, const MaternParams& p,
                          bool fast = true);

/// 0.5*[logdet(cov) + r' cov^{-1} r + n log 2pi] via Cholesky; no explicit
/// inverse. Throws numeric_error carrying the failing pivot if not PD.
double nll_gaussian(const Eigen::VectorXd& y, const Eigen::VectorXd& mean, const JointCov& cov);

}  // namespace gpreg
