#include "gpreg/surface.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gpreg/optim.hpp"
#include "gpreg/rng.hpp"

namespace gpreg {

SurfaceKind surface_kind_from_string(const std::string& s) {
    if (s == "tps") return SurfaceKind::Tps;
    if (s == "gp") return SurfaceKind::GaussianProcess;
    throw config_error("unknown surface kind '" + s + "' (expected tps|gp)");
}

std::string to_string(SurfaceKind k) {
    return k == SurfaceKind::Tps ? "tps" : "gp";
}

namespace {

// r^2 log r, extended by 0 at r = 0.
inline double tps_kernel(double r) {
    return r > 0.0 ? r * r * std::log(r) : 0.0;
}

Eigen::MatrixXd tps_kernel_matrix(const std::vector<Eigen::Vector2d>& c) {
    const int n = static_cast<int>(c.size());
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; ++i) {
        K(i, i) = 0.0;
        for (int j = i + 1; j < n; ++j)
            K(j, i) = K(i, j) = tps_kernel((c[i] - c[j]).norm());
    }
    return K;
}

Eigen::MatrixXd gp_kernel_matrix(const std::vector<Eigen::Vector2d>& c, const MaternParams& p) {
    const int n = static_cast<int>(c.size());
    const MaternShape& shape = MaternShape::get(p.nu);
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; ++i) {
        K(i, i) = p.sigma2;
        for (int j = i + 1; j < n; ++j)
            K(j, i) = K(i, j) = p.sigma2 * shape.rho((c[i] - c[j]).norm() / p.a);
    }
    return K;
}

BBox bbox_of(const std::vector<Eigen::Vector2d>& c) {
    BBox b{c[0].x(), c[0].x(), c[0].y(), c[0].y()};
    for (const auto& p : c) {
        b.x_min = std::min(b.x_min, p.x());
        b.x_max = std::max(b.x_max, p.x());
        b.y_min = std::min(b.y_min, p.y());
        b.y_max = std::max(b.y_max, p.y());
    }
    return b;
}

}  // namespace

void ParamSurface::finalize_tps(double ridge) {
    const int n = static_cast<int>(centers_.size());
    const Eigen::MatrixXd K = tps_kernel_matrix(centers_);
    Eigen::MatrixXd P(n, 3);
    for (int i = 0; i < n; ++i) P.row(i) << 1.0, centers_[i].x(), centers_[i].y();

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + 3, n + 3);
    A.topLeftCorner(n, n) = K;
    A.topLeftCorner(n, n).diagonal() += ridge * noise_vars_;
    A.topRightCorner(n, 3) = P;
    A.bottomLeftCorner(3, n) = P.transpose();

    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 3);
    rhs.head(n) = values_;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible())
        throw numeric_error("fit_tps: singular system (collinear centers?)");
    const Eigen::VectorXd sol = lu.solve(rhs);
    tps_radial_ = sol.head(n);
    tps_affine_ = sol.tail(3);
    ridge_ = ridge;
}

ParamSurface ParamSurface::fit_tps(const std::vector<Eigen::Vector2d>& centers,
                                   const Eigen::VectorXd& values,
                                   const Eigen::VectorXd* precisions, double ridge) {
    const int n = static_cast<int>(centers.size());
    if (n < 4) throw config_error("fit_tps: need at least 4 centers");
    if (values.size() != n) throw config_error("fit_tps: size mismatch");

    ParamSurface s;
    s.kind_ = SurfaceKind::Tps;
    s.centers_ = centers;
    s.values_ = values;
    // Per-point ridge scaling: larger noise variance -> more smoothing there.
    if (precisions) {
        if (precisions->size() != n) throw config_error("fit_tps: precision size mismatch");
        Eigen::VectorXd nv = precisions->cwiseMax(1e-300).cwiseInverse();
        s.noise_vars_ = nv * (n / nv.sum());
    } else {
        s.noise_vars_ = Eigen::VectorXd::Ones(n);
    }

    if (ridge >= 0.0) {
        s.finalize_tps(ridge);
        return s;
    }

    // GCV over a fixed logarithmic ridge grid. The r^2 log r kernel has a zero
    // diagonal, so the grid is anchored on the mean absolute kernel value.
    const Eigen::MatrixXd K = tps_kernel_matrix(centers);
    Eigen::MatrixXd P(n, 3);
    for (int i = 0; i < n; ++i) P.row(i) << 1.0, centers[i].x(), centers[i].y();
    const double scale = std::max(K.cwiseAbs().mean(), 1e-12);

    double best_gcv = std::numeric_limits<double>::infinity();
    double best_ridge = 1e-8 * scale;
    for (int t = 0; t < 25; ++t) {
        const double lam = scale * std::pow(10.0, -8.0 + 10.0 * t / 24.0);
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + 3, n + 3);
        A.topLeftCorner(n, n) = K;
        A.topLeftCorner(n, n).diagonal() += lam * s.noise_vars_;
        A.topRightCorner(n, 3) = P;
        A.bottomLeftCorner(3, n) = P.transpose();
        Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
        if (!lu.isInvertible()) continue;
        Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, n);
        rhs.topLeftCorner(n, n).setIdentity();
        const Eigen::MatrixXd X = lu.solve(rhs);
        const Eigen::MatrixXd H = K * X.topRows(n) + P * X.bottomRows(3);
        const double tr = H.trace();
        if (n - tr < 1e-8) continue;
        const double rss = (s.values_ - H * s.values_).squaredNorm();
        const double gcv = n * rss / ((n - tr) * (n - tr));
        if (gcv < best_gcv) {
            best_gcv = gcv;
            best_ridge = lam;
        }
    }
    s.finalize_tps(best_ridge);
    return s;
}

void ParamSurface::finalize_gp() {
    const int n = static_cast<int>(centers_.size());
    Eigen::MatrixXd K = gp_kernel_matrix(centers_, gp_params_);
    K.diagonal() += noise_vars_;
    gp_llt_.compute(K);
    if (gp_llt_.info() != Eigen::Success)
        throw numeric_error("fit_gp: covariance + noise not positive definite");
    gp_mean_ = values_.mean();
    gp_alpha_ = gp_llt_.solve(values_ - Eigen::VectorXd::Constant(n, gp_mean_));
}

ParamSurface ParamSurface::fit_gp(const std::vector<Eigen::Vector2d>& centers,
                                  const Eigen::VectorXd& values,
                                  const Eigen::VectorXd& noise_vars, double nu) {
    const int n = static_cast<int>(centers.size());
    if (n < 5) throw config_error("fit_gp: need at least 5 centers");
    if (values.size() != n || noise_vars.size() != n)
        throw config_error("fit_gp: size mismatch");

    ParamSurface s;
    s.kind_ = SurfaceKind::GaussianProcess;
    s.centers_ = centers;
    s.values_ = values;
    s.noise_vars_ = noise_vars.cwiseMax(1e-12);

    const double mean = values.mean();
    const Eigen::VectorXd u = values.array() - mean;
    double var0 = std::max(u.squaredNorm() / std::max(1, n - 1), 1e-10);
    const double a0 = std::max(0.25 * bbox_of(centers).diagonal(), 1e-9);

    auto nll = [&](const Eigen::VectorXd& h) {
        MaternParams p{std::exp(h[0]), std::exp(h[1]), nu, 0.0};
        Eigen::MatrixXd K = gp_kernel_matrix(centers, p);
        K.diagonal() += s.noise_vars_;
        Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() != Eigen::Success) return 1e10 + h.squaredNorm();
        double logdet = 0.0;
        for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixLLT()(i, i));
        Eigen::VectorXd r = u;
        llt.matrixL().solveInPlace(r);
        return logdet + 0.5 * r.squaredNorm();
    };

    try {
        Eigen::VectorXd h0(2), lo(2), hi(2);
        h0 << std::log(var0), std::log(a0);
        lo << std::log(var0) - 10.0, std::log(a0) - 4.0;
        hi << std::log(var0) + 6.0, std::log(a0) + 4.0;
        OptimOptions oo;
        oo.max_iters = 100;
        OptimResult r = minimize_bounded(nll, h0, lo, hi, oo);
        if (!r.x.allFinite()) throw numeric_error("fit_gp: ML produced non-finite values");
        s.gp_params_ = MaternParams{std::exp(r.x[0]), std::exp(r.x[1]), nu, 0.0};
        s.finalize_gp();
        return s;
    } catch (const error& e) {
        std::cerr << "[gpreg] warning: GP surface fit failed (" << e.what()
                  << "); falling back to TPS\n";
        Eigen::VectorXd prec = s.noise_vars_.cwiseInverse();
        return fit_tps(centers, values, &prec);
    }
}

ParamSurface ParamSurface::refit(const Eigen::VectorXd& new_values) const {
    if (new_values.size() != values_.size())
        throw config_error("ParamSurface::refit: size mismatch");
    ParamSurface s(*this);
    s.values_ = new_values;
    if (s.kind_ == SurfaceKind::Tps) {
        s.finalize_tps(ridge_);
    } else {
        s.gp_mean_ = new_values.mean();
        s.gp_alpha_ = s.gp_llt_.solve((new_values.array() - s.gp_mean_).matrix());
    }
    return s;
}

double ParamSurface::predict_one(const Eigen::Vector2d& q) const {
    const int n = static_cast<int>(centers_.size());
    if (kind_ == SurfaceKind::Tps) {
        double v = tps_affine_[0] + tps_affine_[1] * q.x() + tps_affine_[2] * q.y();
        for (int i = 0; i < n; ++i) v += tps_radial_[i] * tps_kernel((q - centers_[i]).norm());
        return v;
    }
    const MaternShape& shape = MaternShape::get(gp_params_.nu);
    double v = gp_mean_;
    for (int i = 0; i < n; ++i)
        v += gp_params_.sigma2 * shape.rho((q - centers_[i]).norm() / gp_params_.a) *
             gp_alpha_[i];
    return v;
}

Eigen::VectorXd ParamSurface::predict(const std::vector<Eigen::Vector2d>& queries) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(queries.size()));
    for (std::size_t i = 0; i < queries.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = predict_one(queries[i]);
    return out;
}

Eigen::VectorXd ParamSurface::conditional_sim(const std::vector<Eigen::Vector2d>& queries,
                                              std::uint64_t seed) const {
    if (kind_ != SurfaceKind::GaussianProcess)
        throw config_error("conditional_sim: GP-kind surface required");
    constexpr std::size_t kChunk = 5000;
    if (queries.size() <= kChunk) {
        GpPosterior post(*this, queries);
        return post.sample(*this, seed);
    }
    // Independent chunks: a local approximation that drops cross-chunk
    // posterior covariance but keeps the marginals exact.
    Eigen::VectorXd out(static_cast<Eigen::Index>(queries.size()));
    std::size_t pos = 0;
    int chunk_id = 0;
    while (pos < queries.size()) {
        const std::size_t m = std::min(kChunk, queries.size() - pos);
        std::vector<Eigen::Vector2d> sub(queries.begin() + pos, queries.begin() + pos + m);
        GpPosterior post(*this, sub);
        out.segment(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(m)) =
            post.sample(*this, mix_seed(seed, static_cast<std::uint64_t>(chunk_id)));
        pos += m;
        ++chunk_id;
    }
    return out;
}

GpPosterior::GpPosterior(const ParamSurface& s, const std::vector<Eigen::Vector2d>& queries) {
    if (s.kind() != SurfaceKind::GaussianProcess)
        throw config_error("GpPosterior: GP-kind surface required");
    const int n = static_cast<int>(s.centers_.size());
    const int q = static_cast<int>(queries.size());
    const MaternShape& shape = MaternShape::get(s.gp_params_.nu);
    const double s2 = s.gp_params_.sigma2, a = s.gp_params_.a;

    kstar_.resize(n, q);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < q; ++j)
            kstar_(i, j) = s2 * shape.rho((s.centers_[i] - queries[j]).norm() / a);

    Eigen::MatrixXd kqq(q, q);
    for (int i = 0; i < q; ++i) {
        kqq(i, i) = s2;
        for (int j = i + 1; j < q; ++j)
            kqq(j, i) = kqq(i, j) = s2 * shape.rho((queries[i] - queries[j]).norm() / a);
    }
    const Eigen::MatrixXd w = s.gp_llt_.solve(kstar_);
    Eigen::MatrixXd post = kqq - kstar_.transpose() * w;
    post = 0.5 * (post + post.transpose());
    post.diagonal().array() += 1e-10 * std::max(1.0, s2);
    Eigen::LLT<Eigen::MatrixXd> llt(post);
    if (llt.info() != Eigen::Success)
        throw numeric_error("conditional_sim: posterior covariance not positive definite");
    post_chol_ = llt.matrixL();
}

Eigen::VectorXd GpPosterior::mean(const ParamSurface& s) const {
    return Eigen::VectorXd::Constant(post_chol_.rows(), s.gp_mean_) +
           kstar_.transpose() * s.gp_alpha_;
}

Eigen::VectorXd GpPosterior::sample(const ParamSurface& s, std::uint64_t seed) const {
    std::mt19937_64 rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(post_chol_.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    return mean(s) + post_chol_ * z;
}

nlohmann::json ParamSurface::to_json() const {
    nlohmann::json j;
    j["kind"] = to_string(kind_);
    auto& knots = j["knots"] = nlohmann::json::array();
    for (const auto& c : centers_) knots.push_back({c.x(), c.y()});
    j["values"] = std::vector<double>(values_.data(), values_.data() + values_.size());
    j["noise_vars"] =
        std::vector<double>(noise_vars_.data(), noise_vars_.data() + noise_vars_.size());
    if (kind_ == SurfaceKind::Tps) {
        j["ridge"] = ridge_;
    } else {
        j["sigma2"] = gp_params_.sigma2;
        j["a"] = gp_params_.a;
        j["nu"] = gp_params_.nu;
    }
    return j;
}

ParamSurface ParamSurface::from_json(const nlohmann::json& j) {
    std::vector<Eigen::Vector2d> centers;
    for (const auto& k : j.at("knots")) centers.emplace_back(k.at(0).get<double>(),
                                                             k.at(1).get<double>());
    const auto vv = j.at("values").get<std::vector<double>>();
    const auto nv = j.at("noise_vars").get<std::vector<double>>();
    Eigen::VectorXd values = Eigen::Map<const Eigen::VectorXd>(vv.data(), vv.size());
    Eigen::VectorXd noise = Eigen::Map<const Eigen::VectorXd>(nv.data(), nv.size());
    const SurfaceKind kind = surface_kind_from_string(j.at("kind").get<std::string>());
    if (kind == SurfaceKind::Tps) {
        Eigen::VectorXd prec = noise.cwiseMax(1e-300).cwiseInverse();
        return fit_tps(centers, values, &prec, j.at("ridge").get<double>());
    }
    ParamSurface s;
    s.kind_ = SurfaceKind::GaussianProcess;
    s.centers_ = centers;
    s.values_ = values;
    s.noise_vars_ = noise.cwiseMax(1e-12);
    s.gp_params_ = MaternParams{j.at("sigma2").get<double>(), j.at("a").get<double>(),
                                j.at("nu").get<double>(), 0.0};
    s.finalize_gp();
    return s;
}

std::vector<int> field_knot_indices(const std::vector<LocalEstimate>& estimates) {
    std::vector<int> used;
    for (std::size_t i = 0; i < estimates.size(); ++i)
        if (estimates[i].converged) used.push_back(static_cast<int>(i));
    if (used.size() < 5) {
        // Accept non-converged fits rather than fail outright when converged
        // ones are too few; they still carry the best-seen objective value.
        used.clear();
        for (std::size_t i = 0; i < estimates.size(); ++i) used.push_back(static_cast<int>(i));
    }
    return used;
}

FieldResult build_field(const std::vector<LocalEstimate>& estimates, const PointCloud& moving,
                        SurfaceKind kind, const Eigen::Vector2d& rotation_center,
                        bool with_cov_fields, std::optional<std::uint64_t> sim_seed) {
    std::vector<const LocalEstimate*> used;
    for (int i : field_knot_indices(estimates)) used.push_back(&estimates[static_cast<std::size_t>(i)]);
    if (used.size() < 5)
        throw empty_input_error("build_field: need at least 5 local estimates");

    const int n = static_cast<int>(used.size());
    std::vector<Eigen::Vector2d> centers(n);
    for (int i = 0; i < n; ++i) centers[i] = used[i]->center;

    std::vector<int> params{kRx, kRy, kMuZ, kPhi};
    std::vector<std::string> names{"r_x", "r_y", "mu_z", "phi"};
    if (with_cov_fields) {
        params.insert(params.end(), {kLogSigma2, kLogA, kLogTau2});
        names.insert(names.end(), {"log_sigma2", "log_a", "log_tau2"});
    }

    FieldResult out;
    out.param_names = names;
    out.field.locations = moving.planar_points();
    out.field.rotation_center = rotation_center;

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const int p = params[pi];
        Eigen::VectorXd values(n), noise(n);
        std::vector<double> pd_noise;
        for (int i = 0; i < n; ++i) {
            values[i] = used[i]->theta_packed[p];
            noise[i] = used[i]->param_cov(p, p);
            if (used[i]->hessian_pd && noise[i] > 0.0) pd_noise.push_back(noise[i]);
        }
        double median_noise = 1e-8;
        if (!pd_noise.empty()) {
            std::nth_element(pd_noise.begin(), pd_noise.begin() + pd_noise.size() / 2,
                             pd_noise.end());
            median_noise = pd_noise[pd_noise.size() / 2];
        }
        for (int i = 0; i < n; ++i)
            if (!(used[i]->hessian_pd && noise[i] > 0.0)) noise[i] = median_noise;

        ParamSurface s = [&] {
            if (kind == SurfaceKind::GaussianProcess)
                return ParamSurface::fit_gp(centers, values, noise);
            Eigen::VectorXd prec = noise.cwiseMax(1e-300).cwiseInverse();
            return ParamSurface::fit_tps(centers, values, &prec);
        }();

        Eigen::VectorXd pred;
        if (sim_seed && s.kind() == SurfaceKind::GaussianProcess)
            pred = s.conditional_sim(out.field.locations, mix_seed(*sim_seed, pi));
        else
            pred = s.predict(out.field.locations);

        if (p == kRx) out.field.r_x = pred;
        else if (p == kRy) out.field.r_y = pred;
        else if (p == kMuZ) out.field.mu_z = pred;
        else if (p == kPhi) out.field.phi = pred;
        else if (p == kLogSigma2) out.field.log_sigma2 = pred;
        else if (p == kLogA) out.field.log_a = pred;
        else out.field.log_tau2 = pred;

        out.surfaces.push_back(std::move(s));
    }
    return out;
}

PointCloud apply_field(const PointCloud& moving, const NonrigidField& field) {
    if (field.locations.size() != moving.size())
        throw config_error("apply_field: field/cloud size mismatch");
    PointCloud out;
    out.role = moving.role;
    out.points.resize(moving.size());
    for (std::size_t j = 0; j < moving.size(); ++j) {
        const Eigen::Index i = static_cast<Eigen::Index>(j);
        const RigidTransform t{field.r_x[i], field.r_y[i], field.phi[i], field.rotation_center};
        const Eigen::Vector2d s = t.apply(moving[j].planar());
        out.points[j] = Point3{s.x(), s.y(), moving[j].z - field.mu_z[i]};
    }
    return out;
}

}  // namespace gpreg
