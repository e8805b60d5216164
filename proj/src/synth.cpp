#include "gpreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>

#include "gpreg/rng.hpp"

namespace gpreg {

PointCloud simulate_gp_cloud(int n, const BBox& box, const MaternParams& p, std::uint64_t seed,
                             int cap) {
    p.validate();
    if (n < 1) throw config_error("simulate_gp_cloud: n must be >= 1");
    if (n > cap)
        throw config_error("simulate_gp_cloud: n exceeds the dense-simulation cap (" +
                           std::to_string(cap) + "); simulate tiles and merge instead");
    if (box.degenerate()) throw config_error("simulate_gp_cloud: degenerate box");

    std::mt19937_64 rng = make_rng(seed);
    std::uniform_real_distribution<double> ux(box.x_min, box.x_max);
    std::uniform_real_distribution<double> uy(box.y_min, box.y_max);
    std::vector<Eigen::Vector2d> locs(static_cast<std::size_t>(n));
    for (auto& s : locs) {
        const double x = ux(rng);
        const double y = uy(rng);
        s = {x, y};
    }

    const Eigen::VectorXd z = draw_matern_field(locs, MaternParams{p.sigma2, p.a, p.nu, 0.0},
                                                mix_seed(seed, 0x5efu), cap);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double tau = std::sqrt(p.tau2);

    PointCloud cloud;
    cloud.points.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        cloud.points[static_cast<std::size_t>(i)] =
            Point3{locs[static_cast<std::size_t>(i)].x(), locs[static_cast<std::size_t>(i)].y(),
                   z[i] + tau * normal(rng)};
    return cloud;
}

std::pair<PointCloud, PointCloud> split_cloud(const PointCloud& cloud, std::uint64_t seed) {
    const int n = static_cast<int>(cloud.size());
    if (n < 2) throw config_error("split_cloud: need at least 2 points");
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng = make_rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const int h = n / 2;
    std::sort(idx.begin(), idx.begin() + h);
    std::sort(idx.begin() + h, idx.end());

    PointCloud a, b;
    a.role = CloudRole::Fixed;
    b.role = CloudRole::Moving;
    a.points.reserve(static_cast<std::size_t>(h));
    b.points.reserve(static_cast<std::size_t>(n - h));
    for (int i = 0; i < h; ++i) a.points.push_back(cloud[static_cast<std::size_t>(idx[i])]);
    for (int i = h; i < n; ++i) b.points.push_back(cloud[static_cast<std::size_t>(idx[i])]);
    return {std::move(a), std::move(b)};
}

QuadraticDeform draw_quadratic(std::uint64_t seed) {
    std::mt19937_64 rng = make_rng(seed);
    std::uniform_real_distribution<double> alpha(-0.002, 0.002);
    std::uniform_real_distribution<double> beta(-0.04, 0.04);
    QuadraticDeform q;
    for (auto& c : q.coef) {
        c[0] = alpha(rng);
        c[1] = alpha(rng);
        c[2] = beta(rng);
        c[3] = beta(rng);
    }
    return q;
}

Eigen::VectorXd draw_matern_field(const std::vector<Eigen::Vector2d>& locations,
                                  const MaternParams& hyper, std::uint64_t seed, int cap) {
    hyper.validate();
    const int n = static_cast<int>(locations.size());
    if (n < 1) throw config_error("draw_matern_field: empty location set");
    if (n > cap)
        throw config_error("draw_matern_field: location count exceeds the dense cap (" +
                           std::to_string(cap) + ")");

    const MaternShape& shape = MaternShape::get(hyper.nu);
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; ++i) {
        K(i, i) = hyper.sigma2;
        for (int j = i + 1; j < n; ++j)
            K(j, i) = K(i, j) =
                hyper.sigma2 * shape.rho((locations[static_cast<std::size_t>(i)] -
                                          locations[static_cast<std::size_t>(j)])
                                             .norm() /
                                         hyper.a);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) {
        // Nearly coincident locations; a relative jitter keeps the draw exact
        // to ~1e-6 of the marginal standard deviation.
        K.diagonal().array() += 1e-12 * hyper.sigma2;
        llt.compute(K);
        if (llt.info() != Eigen::Success)
            throw numeric_error("draw_matern_field: covariance factorization failed");
    }

    std::mt19937_64 rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = normal(rng);
    Eigen::VectorXd field = Eigen::MatrixXd(llt.matrixL()) * z;
    if (hyper.tau2 > 0.0) {
        const double tau = std::sqrt(hyper.tau2);
        for (int i = 0; i < n; ++i) field[i] += tau * normal(rng);
    }
    return field;
}

void DeformSpec::validate() const {
    if (!applied_to[kDefX] && !applied_to[kDefY] && !applied_to[kDefZ] && !applied_to[kDefPhi])
        throw config_error("DeformSpec: applied_to must name at least one coordinate");
    if (type == Type::MaternField) field_params.validate();
    if (box.degenerate()) throw config_error("DeformSpec: degenerate box");
}

std::pair<PointCloud, DeformRecord> apply_deform(const PointCloud& cloud,
                                                 const DeformSpec& spec) {
    spec.validate();
    if (cloud.empty()) throw empty_input_error("apply_deform: empty cloud");
    const int n = static_cast<int>(cloud.size());
    const std::vector<Eigen::Vector2d> locs = cloud.planar_points();

    DeformRecord rec;
    rec.m = Eigen::MatrixXd::Zero(n, 4);
    rec.displacement = Eigen::MatrixXd::Zero(n, 3);
    rec.applied_to = spec.applied_to;
    rec.rotation_center = spec.box.center();

    QuadraticDeform quad;
    if (spec.type == DeformSpec::Type::Quadratic) quad = draw_quadratic(spec.seed);
    for (int c = 0; c < 4; ++c) {
        if (!spec.applied_to[static_cast<std::size_t>(c)]) continue;
        if (spec.type == DeformSpec::Type::Quadratic) {
            for (int i = 0; i < n; ++i)
                rec.m(i, c) = quad.eval(c, locs[static_cast<std::size_t>(i)]);
        } else {
            rec.m.col(c) = draw_matern_field(locs, spec.field_params,
                                             mix_seed(spec.seed, static_cast<std::uint64_t>(c)));
        }
    }

    PointCloud out;
    out.role = cloud.role;
    out.points.resize(static_cast<std::size_t>(n));
    const Eigen::Vector2d pivot = rec.rotation_center;
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector2d s = locs[static_cast<std::size_t>(i)];
        Eigen::Vector2d sp = s;
        if (spec.applied_to[kDefPhi]) {
            const double ang = rec.m(i, kDefPhi);
            const double co = std::cos(ang), si = std::sin(ang);
            const Eigen::Vector2d d = s - pivot;
            sp = pivot + Eigen::Vector2d(co * d.x() + si * d.y(), -si * d.x() + co * d.y());
        }
        sp += Eigen::Vector2d(rec.m(i, kDefX), rec.m(i, kDefY));
        const double zp = cloud[static_cast<std::size_t>(i)].z + rec.m(i, kDefZ);
        rec.displacement(i, 0) = sp.x() - s.x();
        rec.displacement(i, 1) = sp.y() - s.y();
        rec.displacement(i, 2) = rec.m(i, kDefZ);
        out.points[static_cast<std::size_t>(i)] = Point3{sp.x(), sp.y(), zp};
    }
    return {std::move(out), std::move(rec)};
}

}  // namespace gpreg
