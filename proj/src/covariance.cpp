#include "gpreg/covariance.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include <Eigen/Cholesky>

#include "gpreg/transform.hpp"

namespace gpreg {

void MaternParams::validate() const {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
        throw config_error("MaternParams: sigma2 must be > 0");
    if (!(a > 0.0) || !std::isfinite(a)) throw config_error("MaternParams: a must be > 0");
    if (!(nu > 0.0) || !std::isfinite(nu)) throw config_error("MaternParams: nu must be > 0");
    if (!(tau2 >= 0.0) || !std::isfinite(tau2))
        throw config_error("MaternParams: tau2 must be >= 0");
}

double matern(double d, const MaternParams& p) {
    p.validate();
    if (!(d >= 0.0)) throw config_error("matern: distance must be >= 0");
    const double x = d / p.a;
    if (x <= 0.0) return p.sigma2;
    // x^nu K_nu(x) -> Gamma(nu) 2^{nu-1} as x -> 0; underflows to 0 for large x.
    if (x > 705.0) return 0.0;
    const double c = std::pow(2.0, 1.0 - p.nu) / std::tgamma(p.nu);
    const double v = c * std::pow(x, p.nu) * std::cyl_bessel_k(p.nu, x);
    return p.sigma2 * std::min(v, 1.0);
}

MaternShape::MaternShape(double nu) : nu_(nu) {
    if (!(nu > 0.0)) throw config_error("MaternShape: nu must be > 0");
    // Below x_lo the correlation has a log singularity in higher derivatives,
    // so the exact routine is used there instead of the table.
    x_lo_ = 0.02;
    x_hi_ = 30.0;
    const int n = 8192;
    dx_ = (x_hi_ - x_lo_) / n;
    inv_dx_ = 1.0 / dx_;
    val_.resize(n + 1);
    der_.resize(n + 1);
    const double c = std::pow(2.0, 1.0 - nu_) / std::tgamma(nu_);
    for (int i = 0; i <= n; ++i) {
        const double x = x_lo_ + i * dx_;
        val_[i] = c * std::pow(x, nu_) * std::cyl_bessel_k(nu_, x);
        // d/dx [x^nu K_nu(x)] = -x^nu K_{nu-1}(x); K_{-m} = K_m.
        der_[i] = -c * std::pow(x, nu_) * std::cyl_bessel_k(std::abs(nu_ - 1.0), x);
    }
}

double MaternShape::exact_rho(double x) const {
    if (x <= 0.0) return 1.0;
    if (x > 705.0) return 0.0;
    const double c = std::pow(2.0, 1.0 - nu_) / std::tgamma(nu_);
    return std::min(c * std::pow(x, nu_) * std::cyl_bessel_k(nu_, x), 1.0);
}

double MaternShape::rho(double x) const {
    if (x < x_lo_ || x > x_hi_) return exact_rho(x);
    const double u = (x - x_lo_) * inv_dx_;
    int i = static_cast<int>(u);
    if (i >= static_cast<int>(val_.size()) - 1) i = static_cast<int>(val_.size()) - 2;
    const double t = u - i;
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1;
    const double h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2;
    const double h11 = t3 - t2;
    return h00 * val_[i] + h10 * dx_ * der_[i] + h01 * val_[i + 1] + h11 * dx_ * der_[i + 1];
}

const MaternShape& MaternShape::get(double nu) {
    static std::mutex mu;
    static std::map<double, std::unique_ptr<MaternShape>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(nu);
    if (it == cache.end()) it = cache.emplace(nu, std::make_unique<MaternShape>(nu)).first;
    return *it->second;
}

namespace {

inline double dist2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    const double dx = a.x() - b.x();
    const double dy = a.y() - b.y();
    return dx * dx + dy * dy;
}

}  // namespace

JointCov cross_cov_blocks(const PointCloud& fixed, const PointCloud& moving,
                          const RigidTransform& T, const MaternParams& p, bool fast) {
    p.validate();
    if (fixed.empty() || moving.empty())
        throw empty_input_error("cross_cov_blocks: empty cloud");
    const int nu_pts = static_cast<int>(fixed.size());
    const int nv_pts = static_cast<int>(moving.size());
    const int n = nu_pts + nv_pts;

    std::vector<Eigen::Vector2d> su(nu_pts), sv(nv_pts), tv(nv_pts);
    for (int i = 0; i < nu_pts; ++i) su[i] = fixed[i].planar();
    for (int j = 0; j < nv_pts; ++j) {
        sv[j] = moving[j].planar();
        tv[j] = T.apply(sv[j]);
        if (!tv[j].allFinite())
            throw numeric_error("cross_cov_blocks: non-finite transformed coordinate");
    }

    const MaternShape& shape = MaternShape::get(p.nu);
    const double inv_a = 1.0 / p.a;

    JointCov out;
    out.n_fixed = nu_pts;
    out.n_moving = nv_pts;
    out.m.resize(n, n);
    Eigen::MatrixXd& M = out.m;

    if (fast) {
        for (int i = 0; i < nu_pts; ++i) {
            M(i, i) = p.sigma2;
            for (int j = i + 1; j < nu_pts; ++j)
                M(j, i) = M(i, j) = p.sigma2 * shape.rho(std::sqrt(dist2(su[i], su[j])) * inv_a);
        }
        // (2,2): rigid maps preserve pairwise distances, use original moving coords.
        for (int i = 0; i < nv_pts; ++i) {
            M(nu_pts + i, nu_pts + i) = p.sigma2;
            for (int j = i + 1; j < nv_pts; ++j)
                M(nu_pts + j, nu_pts + i) = M(nu_pts + i, nu_pts + j) =
                    p.sigma2 * shape.rho(std::sqrt(dist2(sv[i], sv[j])) * inv_a);
        }
        for (int i = 0; i < nu_pts; ++i)
            for (int j = 0; j < nv_pts; ++j)
                M(nu_pts + j, i) = M(i, nu_pts + j) =
                    p.sigma2 * shape.rho(std::sqrt(dist2(su[i], tv[j])) * inv_a);
    } else {
        for (int i = 0; i < nu_pts; ++i) {
            M(i, i) = p.sigma2;
            for (int j = i + 1; j < nu_pts; ++j)
                M(j, i) = M(i, j) = matern(std::sqrt(dist2(su[i], su[j])), p);
        }
        for (int i = 0; i < nv_pts; ++i) {
            M(nu_pts + i, nu_pts + i) = p.sigma2;
            for (int j = i + 1; j < nv_pts; ++j)
                M(nu_pts + j, nu_pts + i) = M(nu_pts + i, nu_pts + j) =
                    matern(std::sqrt(dist2(sv[i], sv[j])), p);
        }
        for (int i = 0; i < nu_pts; ++i)
            for (int j = 0; j < nv_pts; ++j)
                M(nu_pts + j, i) = M(i, nu_pts + j) = matern(std::sqrt(dist2(su[i], tv[j])), p);
    }
    M.diagonal().array() += p.tau2;
    return out;
}

namespace {

// Locates the failing pivot after Eigen's blocked LLT reports NumericalIssue.
int find_failing_pivot(const Eigen::MatrixXd& A) {
    const int n = static_cast<int>(A.rows());
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        double d = A(j, j);
        for (int k = 0; k < j; ++k) d -= L(j, k) * L(j, k);
        if (!(d > 0.0)) return j;
        L(j, j) = std::sqrt(d);
        for (int i = j + 1; i < n; ++i) {
            double s = A(i, j);
            for (int k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
            L(i, j) = s / L(j, j);
        }
    }
    return -1;
}

}  // namespace

double nll_gaussian(const Eigen::VectorXd& y, const Eigen::VectorXd& mean, const JointCov& cov) {
    const Eigen::Index n = cov.m.rows();
    if (y.size() != n || mean.size() != n)
        throw config_error("nll_gaussian: dimension mismatch");
    Eigen::LLT<Eigen::MatrixXd> llt(cov.m);
    if (llt.info() != Eigen::Success) {
        throw numeric_error("nll_gaussian: covariance not positive definite",
                            find_failing_pivot(cov.m));
    }
    const Eigen::MatrixXd& L = llt.matrixLLT();
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(L(i, i));
    logdet *= 2.0;
    Eigen::VectorXd r = y - mean;
    llt.matrixL().solveInPlace(r);
    const double quad = r.squaredNorm();
    constexpr double log_2pi = 1.8378770664093454836;
    return 0.5 * (logdet + quad + static_cast<double>(n) * log_2pi);
}

}  // namespace gpreg
