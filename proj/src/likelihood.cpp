#include "gpreg/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "gpreg/covariance.hpp"
#include "gpreg/rng.hpp"

namespace gpreg {

void Objective::validate() const {
    if (fixed_sub.empty() || moving_sub.empty())
        throw empty_input_error("Objective: both subsamples must be non-empty");
    if (fixed_sub.size() + moving_sub.size() > size_cap)
        throw config_error("Objective: combined subsample size exceeds cap");
    penalty.validate();
    bounds.validate();
    if (!(nu > 0.0)) throw config_error("Objective: nu must be > 0");
}

int Objective::n_free() const {
    int n = 0;
    for (bool b : free_mask) n += b ? 1 : 0;
    return n;
}

std::array<int, kNumParams> Objective::free_indices() const {
    std::array<int, kNumParams> idx{};
    int n = 0;
    for (int i = 0; i < kNumParams; ++i)
        if (free_mask[i]) idx[n++] = i;
    return idx;
}

double objective_value(const Objective& obj, const Eigen::VectorXd& theta) {
    RigidParams p = unpack(theta);
    p.cov.nu = obj.nu;
    try {
        const RigidTransform T = p.transform(obj.rotation_center);
        const JointCov cov =
            cross_cov_blocks(obj.fixed_sub, obj.moving_sub, T, p.cov, obj.fast_matern);
        const int nu_pts = cov.n_fixed, nv_pts = cov.n_moving;
        Eigen::VectorXd y(nu_pts + nv_pts), mean(nu_pts + nv_pts);
        y.head(nu_pts) = obj.fixed_sub.elevations();
        y.tail(nv_pts) = obj.moving_sub.elevations();
        mean.head(nu_pts).setZero();
        mean.tail(nv_pts).setConstant(p.mu_z);
        return nll_gaussian(y, mean, cov) + penalty(p, obj.penalty);
    } catch (const numeric_error&) {
        return 1e10 + theta.squaredNorm();
    }
}

Eigen::VectorXd default_init(const Objective& obj) {
    const Eigen::VectorXd zf = obj.fixed_sub.elevations();
    const Eigen::VectorXd zm = obj.moving_sub.elevations();
    Eigen::VectorXd z(zf.size() + zm.size());
    z << zf, zm;
    const double mean = z.mean();
    double var = (z.array() - mean).square().sum() / std::max<double>(1.0, z.size() - 1);
    var = std::max(var, 1e-10);
    const BBox box = BBox::join(bbox(obj.fixed_sub), bbox(obj.moving_sub));
    const double a0 = std::max(0.25 * box.diagonal(), 1e-6);

    RigidParams p;
    p.cov = MaternParams{var, a0, obj.nu, 0.01 * var};
    Eigen::VectorXd v = pack(p);
    for (int i = 0; i < kNumParams; ++i)
        v[i] = std::clamp(v[i], obj.bounds.lo[i], obj.bounds.hi[i]);
    return v;
}

namespace {

// Reduced-space view: the optimizer only sees the free coordinates.
struct ReducedProblem {
    const Objective& obj;
    Eigen::VectorXd full;  // fixed coordinates frozen at their init values
    std::array<int, kNumParams> idx;
    int n;

    ReducedProblem(const Objective& o, const Eigen::VectorXd& init)
        : obj(o), full(init), idx(o.free_indices()), n(o.n_free()) {}

    Eigen::VectorXd reduce(const Eigen::VectorXd& v) const {
        Eigen::VectorXd r(n);
        for (int i = 0; i < n; ++i) r[i] = v[idx[i]];
        return r;
    }
    Eigen::VectorXd expand(const Eigen::VectorXd& r) const {
        Eigen::VectorXd v = full;
        for (int i = 0; i < n; ++i) v[idx[i]] = r[i];
        return v;
    }
    double operator()(const Eigen::VectorXd& r) const {
        return objective_value(obj, expand(r));
    }
    Eigen::VectorXd lo() const {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v[i] = obj.bounds.lo[idx[i]];
        return v;
    }
    Eigen::VectorXd hi() const {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v[i] = obj.bounds.hi[idx[i]];
        return v;
    }
};

}  // namespace

Eigen::MatrixXd numerical_hessian(const Objective& obj, const Eigen::VectorXd& theta,
                                  double rel_step, bool* one_sided) {
    obj.validate();
    ReducedProblem prob(obj, theta);
    auto fn = [&prob](const Eigen::VectorXd& r) { return prob(r); };
    return fd_hessian(fn, prob.reduce(theta), prob.lo(), prob.hi(), rel_step, one_sided);
}

FitResult fit_rigid(const Objective& obj, const Eigen::VectorXd& init, const FitOptions& opts) {
    obj.validate();
    if (init.size() != kNumParams) throw config_error("fit_rigid: init must have 7 entries");

    ReducedProblem prob(obj, init);
    auto fn = [&prob](const Eigen::VectorXd& r) { return prob(r); };
    const Eigen::VectorXd lo = prob.lo(), hi = prob.hi();
    const Eigen::VectorXd r0 = prob.reduce(init);

    std::mt19937_64 rng = make_rng(opts.seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);

    FitResult best;
    best.n_evals = 0;
    double best_f = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_r = r0;
    bool best_converged = false;

    for (int s = 0; s < std::max(1, opts.n_starts); ++s) {
        Eigen::VectorXd start = r0;
        if (s > 0) {
            for (int i = 0; i < prob.n; ++i) {
                const int full_i = prob.idx[i];
                const double span = hi[i] - lo[i];
                // Transform parameters get a fractional-span jitter, covariance
                // parameters a fixed log-scale jitter.
                const double amp = (full_i <= kPhi) ? 0.15 * span : 0.5;
                start[i] = std::clamp(start[i] + amp * unif(rng), lo[i], hi[i]);
            }
        }
        OptimResult r = minimize_bounded(fn, start, lo, hi, opts.optim);
        best.n_evals += r.n_evals;
        if (r.f < best_f) {
            best_f = r.f;
            best_r = r.x;
            best_converged = r.converged;
        }
    }

    // Descent contract: never return something worse than the init.
    const double f_init = fn(r0);
    ++best.n_evals;
    if (f_init < best_f) {
        best_f = f_init;
        best_r = r0;
        best_converged = false;
    }

    best.theta_packed = prob.expand(best_r);
    best.theta_hat = unpack(best.theta_packed);
    best.theta_hat.cov.nu = obj.nu;
    best.nll = best_f;
    best.converged = best_converged;

    best.hessian = numerical_hessian(obj, best.theta_packed, opts.hessian_rel_step,
                                     &best.hessian_one_sided);

    // Parameter covariance = inverse Hessian when PD; otherwise an eigenvalue-
    // floored pseudo-inverse, flagged via hessian_pd = false.
    const int nf = prob.n;
    Eigen::MatrixXd cov_red(nf, nf);
    Eigen::LLT<Eigen::MatrixXd> llt(best.hessian);
    if (llt.info() == Eigen::Success) {
        cov_red = llt.solve(Eigen::MatrixXd::Identity(nf, nf));
        best.hessian_pd = true;
    } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(best.hessian);
        Eigen::VectorXd ev = es.eigenvalues();
        const double floor_ = std::max(1e-12, 1e-10 * ev.cwiseAbs().maxCoeff());
        Eigen::VectorXd inv_ev(nf);
        for (int i = 0; i < nf; ++i) inv_ev[i] = (ev[i] > floor_) ? 1.0 / ev[i] : 0.0;
        cov_red = es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
        best.hessian_pd = false;
    }
    best.param_cov = Eigen::MatrixXd::Zero(kNumParams, kNumParams);
    for (int i = 0; i < nf; ++i)
        for (int j = 0; j < nf; ++j) best.param_cov(prob.idx[i], prob.idx[j]) = cov_red(i, j);

    return best;
}

RigidFitOutput fit_rigid_auto(const PointCloud& fixed_sub, const PointCloud& moving_sub,
                              const RigidFitSetup& setup) {
    Objective obj;
    obj.fixed_sub = fixed_sub;
    obj.moving_sub = moving_sub;
    obj.penalty = setup.penalty;
    obj.nu = setup.nu;
    obj.size_cap = fixed_sub.size() + moving_sub.size();

    Eigen::Vector2d centroid(0, 0);
    for (const auto& p : moving_sub.points) centroid += p.planar();
    centroid /= static_cast<double>(moving_sub.size());
    obj.rotation_center = centroid;

    obj.bounds = Bounds::defaults(setup.trans_bound);
    Eigen::VectorXd init = default_init(obj);
    obj.bounds = Bounds::defaults(setup.trans_bound, std::exp(init[kLogSigma2]),
                                  std::exp(init[kLogA]));
    for (int i = 0; i < 4; ++i) obj.free_mask[i] = setup.estimate_transform[i];
    if (!setup.estimate_cov) {
        setup.fixed_cov.validate();
        init[kLogSigma2] = std::log(setup.fixed_cov.sigma2);
        init[kLogA] = std::log(setup.fixed_cov.a);
        init[kLogTau2] = std::log(std::max(setup.fixed_cov.tau2, 1e-300));
        for (int i : {kLogSigma2, kLogA, kLogTau2}) {
            obj.free_mask[i] = false;
            obj.bounds.lo[i] = init[i] - 1.0;
            obj.bounds.hi[i] = init[i] + 1.0;
        }
    }
    for (int i = 0; i < kNumParams; ++i)
        init[i] = std::clamp(init[i], obj.bounds.lo[i], obj.bounds.hi[i]);

    FitOptions fopts;
    fopts.n_starts = setup.n_starts;
    fopts.seed = setup.seed;
    fopts.optim = setup.optim;

    RigidFitOutput out;
    out.fit = fit_rigid(obj, init, fopts);
    out.rotation_center = obj.rotation_center;
    out.bounds = obj.bounds;
    return out;
}

}  // namespace gpreg
