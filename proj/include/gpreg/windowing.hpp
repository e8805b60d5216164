#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gpreg/likelihood.hpp"
#include "gpreg/pointcloud.hpp"

namespace gpreg {

/// Overlapping-window grid over a bounding box. Window sides are chosen so the
/// grid exactly tiles the box per axis: w = L / (1 + (n-1)(1-p)).
struct WindowGrid {
    BBox box;
    int nx = 0, ny = 0;
    double overlap = 0.0;
    double wx = 0.0, wy = 0.0;  // per-axis window sides

    int size() const { return nx * ny; }
    Eigen::Vector2d center(int k) const;
    BBox window_box(int k) const;
};

WindowGrid make_grid(const BBox& box, int nx, int ny, double overlap);

/// Per-window index lists. Membership is closed on the lower edge, open on the
/// upper, and closed on the final row/column so every in-box point is covered.
std::vector<std::vector<int>> partition(const PointCloud& cloud, const WindowGrid& grid);

/// Uniform sample of min(N, |indices|) indices without replacement,
/// deterministic in the seed.
std::vector<int> subsample(const std::vector<int>& indices, int N, std::uint64_t seed);

struct LocalEstimate {
    int k = -1;
    Eigen::Vector2d center{0, 0};
    RigidParams theta;                  // reported in the common rotation frame
    Eigen::VectorXd theta_packed;
    Eigen::MatrixXd param_cov;          // 7x7, packed coordinates
    bool converged = false;
    bool hessian_pd = false;
    int n_fixed = 0;
    int n_moving = 0;
};

struct SkippedWindow {
    int k = -1;
    std::string reason;
};

struct LocalFitConfig {
    int N = 100;                        // subsamples per cloud per window
    PenaltyConfig penalty;
    double nu = 1.0;
    double trans_bound = 1.0;
    std::uint64_t seed = 0;
    int n_workers = 0;                  // 0 = hardware concurrency
    int min_points = 10;                // degeneracy threshold per cloud
    int n_starts = 3;
    OptimOptions optim;
    // When false, the covariance parameters are frozen at fixed_cov and only
    // the masked transform parameters are optimized.
    bool estimate_cov = true;
    MaternParams fixed_cov{};
    std::array<bool, 4> estimate_transform{true, true, true, true};  // r_x, r_y, mu_z, phi
};

struct LocalFitReport {
    std::vector<LocalEstimate> estimates;   // ordered by window index
    std::vector<SkippedWindow> skipped;
    Eigen::Vector2d rotation_center{0, 0};  // common frame of all estimates
    WindowGrid grid;
};

/// Algorithm steps 1-3: per-window subsampling and rigid fits. Windows are the
/// unit of parallelism; output is identical for any worker count. Each window
/// is estimated about its own moving-subsample centroid (best conditioning)
/// and converted exactly to the common rotation frame before being reported.
LocalFitReport local_fits(const PointCloud& fixed, const PointCloud& moving,
                          const WindowGrid& grid, const LocalFitConfig& cfg);

}  // namespace gpreg
