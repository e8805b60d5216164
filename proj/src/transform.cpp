#include "gpreg/transform.hpp"

#include <cmath>

namespace gpreg {

Eigen::Matrix2d RigidTransform::rotation() const {
    const double c = std::cos(phi), s = std::sin(phi);
    Eigen::Matrix2d R;
    R << c, s, -s, c;
    return R;
}

Eigen::Vector2d RigidTransform::apply(const Eigen::Vector2d& s) const {
    return rotation() * (s - center) + center + Eigen::Vector2d(r_x, r_y);
}

RigidTransform RigidTransform::inverse() const {
    // T^{-1}(s) = R' (s - c - r) + c with the same center.
    const Eigen::Matrix2d Rt = rotation().transpose();
    const Eigen::Vector2d rinv = -(Rt * Eigen::Vector2d(r_x, r_y));
    return RigidTransform{rinv.x(), rinv.y(), -phi, center};
}

RigidTransform RigidTransform::with_center(const Eigen::Vector2d& new_center) const {
    // r' = r + (I - R)(c_old - c_new) keeps the map pointwise identical.
    const Eigen::Vector2d d = center - new_center;
    const Eigen::Vector2d rp = Eigen::Vector2d(r_x, r_y) + d - rotation() * d;
    return RigidTransform{rp.x(), rp.y(), phi, new_center};
}

Point3 apply_rigid(const Point3& pt, const RigidParams& p, const Eigen::Vector2d& center) {
    const Eigen::Vector2d s = p.transform(center).apply(pt.planar());
    return Point3{s.x(), s.y(), pt.z + p.mu_z};
}

PointCloud register_moving(const PointCloud& moving, const RigidParams& p,
                           const Eigen::Vector2d& center) {
    const RigidTransform t = p.transform(center);
    PointCloud out;
    out.role = moving.role;
    out.points.resize(moving.size());
    for (std::size_t i = 0; i < moving.size(); ++i) {
        const Eigen::Vector2d s = t.apply(moving[i].planar());
        out.points[i] = Point3{s.x(), s.y(), moving[i].z - p.mu_z};
    }
    return out;
}

void PenaltyConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw config_error("PenaltyConfig: lambda must be >= 0");
    if (!(kappa >= 0.0) || !std::isfinite(kappa))
        throw config_error("PenaltyConfig: kappa must be >= 0");
}

double log_bessel_i0(double kappa) {
    if (!(kappa >= 0.0)) throw config_error("log_bessel_i0: kappa must be >= 0");
    if (kappa == 0.0) return 0.0;
    if (kappa < 600.0) return std::log(std::cyl_bessel_i(0.0, kappa));
    // I_0(k) ~ e^k / sqrt(2 pi k) * (1 + 1/(8k) + 9/(128 k^2) + ...)
    const double inv = 1.0 / kappa;
    return kappa - 0.5 * std::log(2.0 * M_PI * kappa) +
           std::log1p(inv * (0.125 + inv * (9.0 / 128.0)));
}

double penalty(const RigidParams& p, const PenaltyConfig& cfg) {
    cfg.validate();
    const double trans = 0.5 * cfg.lambda * (p.r_x * p.r_x + p.r_y * p.r_y + p.mu_z * p.mu_z);
    const double rot = (cfg.kappa == 0.0)
                           ? 0.0
                           : log_bessel_i0(cfg.kappa) - cfg.kappa * std::cos(p.phi);
    return trans + rot;
}

void Bounds::validate() const {
    for (int i = 0; i < kNumParams; ++i)
        if (!(lo[i] < hi[i])) throw config_error("Bounds: lo must be < hi for every parameter");
}

bool Bounds::contains(const Eigen::VectorXd& v) const {
    if (v.size() != kNumParams) return false;
    for (int i = 0; i < kNumParams; ++i)
        if (v[i] < lo[i] || v[i] > hi[i]) return false;
    return true;
}

Bounds Bounds::defaults(double trans, double sigma2_init, double a_init) {
    Bounds b;
    for (int i : {kRx, kRy, kMuZ}) {
        b.lo[i] = -trans;
        b.hi[i] = trans;
    }
    b.lo[kPhi] = -M_PI / 4.0 + 0.1;
    b.hi[kPhi] = M_PI / 4.0;
    const double ls = std::log(sigma2_init), la = std::log(a_init);
    b.lo[kLogSigma2] = ls - 7.0;
    b.hi[kLogSigma2] = ls + 7.0;
    b.lo[kLogA] = la - 5.0;
    b.hi[kLogA] = la + 4.0;
    // Nugget floor tau2 >= 1e-8 * sigma2_init keeps the Cholesky honest.
    b.lo[kLogTau2] = ls + std::log(1e-8);
    b.hi[kLogTau2] = ls + std::log(10.0);
    return b;
}

Eigen::VectorXd pack(const RigidParams& p) {
    p.cov.validate();
    Eigen::VectorXd v(kNumParams);
    v[kRx] = p.r_x;
    v[kRy] = p.r_y;
    v[kMuZ] = p.mu_z;
    v[kPhi] = p.phi;
    v[kLogSigma2] = std::log(p.cov.sigma2);
    v[kLogA] = std::log(p.cov.a);
    v[kLogTau2] = p.cov.tau2 > 0.0 ? std::log(p.cov.tau2) : -745.0;
    return v;
}

RigidParams unpack(const Eigen::VectorXd& v, const Bounds* bounds) {
    if (v.size() != kNumParams) throw config_error("unpack: expected 7 parameters");
    if (bounds && !bounds->contains(v))
        throw config_error("unpack: parameter vector violates bounds");
    RigidParams p;
    p.r_x = v[kRx];
    p.r_y = v[kRy];
    p.mu_z = v[kMuZ];
    p.phi = v[kPhi];
    p.cov.sigma2 = std::exp(v[kLogSigma2]);
    p.cov.a = std::exp(v[kLogA]);
    p.cov.tau2 = std::exp(v[kLogTau2]);
    return p;
}

}  // namespace gpreg
