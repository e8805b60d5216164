#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "gpreg/covariance.hpp"
#include "gpreg/pointcloud.hpp"
#include "gpreg/windowing.hpp"

namespace gpreg {

enum class SurfaceKind { Tps, GaussianProcess };

SurfaceKind surface_kind_from_string(const std::string& s);
std::string to_string(SurfaceKind k);

/// A fitted smooth scalar field over the plane: either a thin-plate spline
/// (r^2 log r radial kernel + affine null space, ridge chosen by GCV) or a
/// Matern Gaussian process with heteroscedastic knot noise. Immutable once
/// fitted; safe to share across threads.
class ParamSurface {
public:
    /// precisions (optional) scale the ridge per point as 1/precision.
    /// ridge < 0 selects the ridge by generalized cross-validation.
    static ParamSurface fit_tps(const std::vector<Eigen::Vector2d>& centers,
                                const Eigen::VectorXd& values,
                                const Eigen::VectorXd* precisions = nullptr,
                                double ridge = -1.0);

    /// Matern GP (nu fixed, default 2) on mean-centered values; sigma2 and a by
    /// maximum likelihood with the given noise variances fixed on the diagonal.
    /// Falls back to a TPS (with a warning on stderr) when the ML fit fails.
    static ParamSurface fit_gp(const std::vector<Eigen::Vector2d>& centers,
                               const Eigen::VectorXd& values,
                               const Eigen::VectorXd& noise_vars, double nu = 2.0);

    /// Same centers, hyperparameters/smoothing and noise; new observed values.
    ParamSurface refit(const Eigen::VectorXd& new_values) const;

    double predict_one(const Eigen::Vector2d& q) const;
    Eigen::VectorXd predict(const std::vector<Eigen::Vector2d>& queries) const;

    /// One posterior draw at the queries (GP kind only). Exact joint draw for
    /// <= 5000 queries; larger query sets are processed in independent chunks.
    Eigen::VectorXd conditional_sim(const std::vector<Eigen::Vector2d>& queries,
                                    std::uint64_t seed) const;

    SurfaceKind kind() const { return kind_; }
    const std::vector<Eigen::Vector2d>& centers() const { return centers_; }
    const Eigen::VectorXd& values() const { return values_; }
    double ridge() const { return ridge_; }
    double gp_sigma2() const { return gp_params_.sigma2; }
    double gp_range() const { return gp_params_.a; }
    double gp_mean() const { return gp_mean_; }
    const Eigen::VectorXd& noise_vars() const { return noise_vars_; }
    const MaternParams& gp_params() const { return gp_params_; }

    nlohmann::json to_json() const;
    static ParamSurface from_json(const nlohmann::json& j);

private:
    friend class GpPosterior;
    ParamSurface() = default;
    void finalize_tps(double ridge);
    void finalize_gp();

    SurfaceKind kind_ = SurfaceKind::Tps;
    std::vector<Eigen::Vector2d> centers_;
    Eigen::VectorXd values_;
    Eigen::VectorXd noise_vars_;   // GP noise / TPS per-point ridge scaling
    // TPS state
    double ridge_ = 0.0;
    Eigen::VectorXd tps_radial_;   // n coefficients
    Eigen::Vector3d tps_affine_{0, 0, 0};
    // GP state
    MaternParams gp_params_;
    double gp_mean_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> gp_llt_;  // K + diag(noise)
    Eigen::VectorXd gp_alpha_;            // (K+D)^{-1} (v - mean)
};

/// Precomputed GP posterior at a fixed query set; lets many conditional draws
/// (and refits with new values) reuse one posterior Cholesky.
class GpPosterior {
public:
    GpPosterior(const ParamSurface& surface, const std::vector<Eigen::Vector2d>& queries);
    Eigen::VectorXd mean(const ParamSurface& refitted) const;
    Eigen::VectorXd sample(const ParamSurface& refitted, std::uint64_t seed) const;

private:
    Eigen::MatrixXd kstar_;       // n_knots x n_q
    Eigen::MatrixXd post_chol_;   // lower Cholesky of posterior covariance
};

/// Per-point predicted transformation parameters for the moving cloud, all in
/// one common rotation frame.
struct NonrigidField {
    std::vector<Eigen::Vector2d> locations;
    Eigen::VectorXd r_x, r_y, mu_z, phi;
    std::optional<Eigen::VectorXd> log_sigma2, log_a, log_tau2;
    Eigen::Vector2d rotation_center{0, 0};
};

struct FieldResult {
    NonrigidField field;
    std::vector<std::string> param_names;
    std::vector<ParamSurface> surfaces;  // one per param_names entry
};

/// Indices of the estimates build_field will use as surface knots, in knot
/// order: the converged ones, or all of them when fewer than 5 converged.
std::vector<int> field_knot_indices(const std::vector<LocalEstimate>& estimates);

/// Algorithm steps 4-5: fit one surface per parameter to the local estimates
/// (knot noise from each window's parameter covariance diagonal; non-PD
/// windows get the parameter's median noise) and predict -- or conditionally
/// simulate, when sim_seed is given -- at the moving locations.
FieldResult build_field(const std::vector<LocalEstimate>& estimates, const PointCloud& moving,
                        SurfaceKind kind, const Eigen::Vector2d& rotation_center,
                        bool with_cov_fields = false,
                        std::optional<std::uint64_t> sim_seed = std::nullopt);

/// Algorithm step 6: apply the per-point transforms; elevations get -mu_z
/// (mu_z is the moving cloud's estimated offset).
PointCloud apply_field(const PointCloud& moving, const NonrigidField& field);

}  // namespace gpreg
