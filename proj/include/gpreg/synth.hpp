#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include <Eigen/Core>

#include "gpreg/covariance.hpp"
#include "gpreg/pointcloud.hpp"

namespace gpreg {

// Deformable coordinates, in parameter order: x, y, z translations plus the
// planar rotation angle phi.
enum DeformCoord : int { kDefX = 0, kDefY = 1, kDefZ = 2, kDefPhi = 3 };

/// Exact GP draw: n uniform locations in the box, elevations from one Cholesky
/// factorization of the n x n Matern covariance plus independent nugget noise.
/// Refuses n above the dense-simulation cap (tile instead).
PointCloud simulate_gp_cloud(int n, const BBox& box, const MaternParams& p, std::uint64_t seed,
                             int cap = 20000);

/// Random equal halves with disjoint indices whose union is the original.
std::pair<PointCloud, PointCloud> split_cloud(const PointCloud& cloud, std::uint64_t seed);

/// Quadratic field m(s) = a1 sx^2 + a2 sy^2 + b1 sx + b2 sy, one coefficient
/// set per deformable coordinate.
struct QuadraticDeform {
    std::array<std::array<double, 4>, 4> coef{};  // [coord][a1, a2, b1, b2]

    double eval(int coord, const Eigen::Vector2d& s) const {
        const auto& c = coef[static_cast<std::size_t>(coord)];
        return c[0] * s.x() * s.x() + c[1] * s.y() * s.y() + c[2] * s.x() + c[3] * s.y();
    }
};

/// alpha ~ U(-0.002, 0.002), beta ~ U(-0.04, 0.04), independently per
/// coefficient per coordinate (the rotation angle shares the supports, in
/// radians).
QuadraticDeform draw_quadratic(std::uint64_t seed);

/// One exact zero-mean Matern field draw at the given locations.
Eigen::VectorXd draw_matern_field(const std::vector<Eigen::Vector2d>& locations,
                                  const MaternParams& hyper, std::uint64_t seed,
                                  int cap = 20000);

struct DeformSpec {
    enum class Type { Quadratic, MaternField } type = Type::Quadratic;
    std::array<bool, 4> applied_to{false, false, false, false};
    std::uint64_t seed = 0;
    MaternParams field_params{0.01, 6.0, 2.0, 1e-5};
    BBox box{0, 6, 0, 6};  // domain; its center is the rotation-deformation pivot

    void validate() const;
};

/// Per-point ground truth of an applied deformation. `m` holds the raw
/// parameter values (m_x, m_y, m_z, m_phi); `displacement` holds the resulting
/// coordinate displacement (x, y, z), which includes the rotation's effect and
/// is therefore pivot-convention free.
struct DeformRecord {
    Eigen::MatrixXd m;             // n x 4
    Eigen::MatrixXd displacement;  // n x 3
    std::array<bool, 4> applied_to{};
    Eigen::Vector2d rotation_center{0, 0};
};

/// De-register a cloud with a known deformation; returns the deformed cloud
/// and the exact truth record (invertible: original = deformed - displacement).
std::pair<PointCloud, DeformRecord> apply_deform(const PointCloud& cloud,
                                                 const DeformSpec& spec);

}  // namespace gpreg
