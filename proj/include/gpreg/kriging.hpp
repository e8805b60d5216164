#pragma once

#include <vector>

#include <Eigen/Core>

#include "gpreg/covariance.hpp"
#include "gpreg/pointcloud.hpp"
#include "gpreg/surface.hpp"

namespace gpreg {

/// Indices of the k nearest planar neighbors (exact; ties broken by lower
/// index). Returns all indices when k >= cloud size.
std::vector<int> knn(const PointCloud& cloud, const Eigen::Vector2d& query, int k);

struct KrigingConfig {
    int k = 1000;
    double nu = 1.0;
    // Constant-parameter mode:
    MaternParams params;
    // Spatially varying mode: log-scale parameter fields evaluated per query.
    bool spatially_varying = false;
    const ParamSurface* log_sigma2 = nullptr;
    const ParamSurface* log_a = nullptr;
    const ParamSurface* log_tau2 = nullptr;

    MaternParams params_at(const Eigen::Vector2d& q) const;
};

struct Prediction {
    Eigen::Vector2d location;
    double mean = 0.0;
    double variance = 0.0;
};

/// Local kriging over the k nearest neighbors. The neighbor sample mean is
/// subtracted before simple kriging and added back:
///   mean = ybar + c'(C + tau2 I)^{-1} (y - ybar),
///   var  = sigma2 + tau2 - c'(C + tau2 I)^{-1} c.
Prediction krige(const PointCloud& cloud, const Eigen::Vector2d& query,
                 const KrigingConfig& cfg);

}  // namespace gpreg
