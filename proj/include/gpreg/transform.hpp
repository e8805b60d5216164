#pragma once

#include <array>

#include <Eigen/Core>

#include "gpreg/covariance.hpp"
#include "gpreg/pointcloud.hpp"

namespace gpreg {

// Packed parameter-vector layout used by the optimizer:
//   [r_x, r_y, mu_z, phi, log sigma2, log a, log tau2]
inline constexpr int kNumParams = 7;
enum ParamIndex : int { kRx = 0, kRy = 1, kMuZ = 2, kPhi = 3, kLogSigma2 = 4, kLogA = 5, kLogTau2 = 6 };

/// Planar rigid map T(s) = R(phi) (s - c) + c + r, with
/// R = [[cos phi, sin phi], [-sin phi, cos phi]].
/// Rotating about a center c instead of the origin is an equivalent
/// reparameterization; with_center() converts r between centers exactly.
struct RigidTransform {
    double r_x = 0.0;
    double r_y = 0.0;
    double phi = 0.0;
    Eigen::Vector2d center{0.0, 0.0};

    Eigen::Matrix2d rotation() const;
    Eigen::Vector2d apply(const Eigen::Vector2d& s) const;
    RigidTransform inverse() const;
    RigidTransform with_center(const Eigen::Vector2d& new_center) const;
};

/// The full local parameter vector theta: rigid transform + z-offset +
/// Matern covariance parameters.
struct RigidParams {
    double r_x = 0.0;
    double r_y = 0.0;
    double mu_z = 0.0;
    double phi = 0.0;
    MaternParams cov;

    RigidTransform transform(const Eigen::Vector2d& center = Eigen::Vector2d::Zero()) const {
        return RigidTransform{r_x, r_y, phi, center};
    }
};

/// Transform one observation: planar part through the rigid map, elevation
/// shifted by +mu_z (registration subtracts the estimated mu_z; see
/// register_moving in the pipeline code).
Point3 apply_rigid(const Point3& pt, const RigidParams& p,
                   const Eigen::Vector2d& center = Eigen::Vector2d::Zero());

/// Register a whole moving cloud: planar coordinates through T(s), elevations
/// shifted by -mu_z (the moving cloud's estimated vertical offset).
PointCloud register_moving(const PointCloud& moving, const RigidParams& p,
                           const Eigen::Vector2d& center = Eigen::Vector2d::Zero());

struct PenaltyConfig {
    double lambda = 5.0;  // Gaussian penalty weight on translations
    double kappa = 100.0; // von Mises concentration on the rotation angle

    void validate() const;
};

/// Overflow-safe log I_0(kappa).
double log_bessel_i0(double kappa);

/// 0.5*lambda*(r_x^2 + r_y^2 + mu_z^2) + log I_0(kappa) - kappa*cos(phi).
double penalty(const RigidParams& p, const PenaltyConfig& cfg);

/// Per-parameter box constraints in packed (log-scale) coordinates.
struct Bounds {
    std::array<double, kNumParams> lo{};
    std::array<double, kNumParams> hi{};

    void validate() const;
    bool contains(const Eigen::VectorXd& v) const;

    /// Translation bound +-trans, phi in (-pi/4 + 0.1, pi/4), covariance
    /// bounds centered on scale-aware initial values.
    static Bounds defaults(double trans = 1.0, double sigma2_init = 1.0, double a_init = 1.0);
};

/// theta -> packed optimizer vector (covariance parameters on log scale).
Eigen::VectorXd pack(const RigidParams& p);

/// Inverse of pack. Throws config_error when bounds are given and violated.
RigidParams unpack(const Eigen::VectorXd& v, const Bounds* bounds = nullptr);

}  // namespace gpreg
