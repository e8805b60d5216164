#include "gpreg/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "gpreg/errors.hpp"
#include "gpreg/kriging.hpp"
#include "gpreg/likelihood.hpp"
#include "gpreg/rng.hpp"

namespace gpreg {

namespace {

// Symmetric PSD square root; small negative eigenvalues from numerical noise
// are clamped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success)
        throw numeric_error("psd_sqrt: eigendecomposition failed");
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
}

std::vector<int> all_indices(std::size_t n) {
    std::vector<int> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

PointCloud select_points(const PointCloud& c, const std::vector<int>& idx) {
    PointCloud out;
    out.role = c.role;
    out.points.reserve(idx.size());
    for (int i : idx) out.points.push_back(c[static_cast<std::size_t>(i)]);
    return out;
}

PointCloud concat(const PointCloud& a, const PointCloud& b) {
    PointCloud out;
    out.role = CloudRole::Fixed;
    out.points = a.points;
    out.points.insert(out.points.end(), b.points.begin(), b.points.end());
    return out;
}

// Index-parallel loop with deterministic work product: body(i) must write only
// to slot i of pre-sized outputs.
template <typename Body>
void parallel_for(int n, int n_workers, Body&& body) {
    if (n_workers <= 0) n_workers = static_cast<int>(std::thread::hardware_concurrency());
    n_workers = std::max(1, std::min(n_workers, n));
    if (n_workers == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

Eigen::VectorXd standard_normals(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> nd;
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = nd(rng);
    return z;
}

}  // namespace

NrmseResult nrmse(const Eigen::MatrixXd& true_def, const Eigen::MatrixXd& est_def,
                  const std::array<bool, 4>& applied_mask) {
    if (true_def.cols() != 4 || est_def.cols() != 4)
        throw config_error("nrmse: deformation matrices must have 4 columns (x, y, z, phi)");
    if (true_def.rows() != est_def.rows())
        throw config_error("nrmse: truth/estimate length mismatch");
    if (true_def.rows() == 0) throw empty_input_error("nrmse: no points");
    const auto n = static_cast<double>(true_def.rows());

    double abs_sum = 0.0;
    int n_masked = 0;
    for (int c = 0; c < 4; ++c) {
        if (!applied_mask[static_cast<std::size_t>(c)]) continue;
        abs_sum += true_def.col(c).cwiseAbs().sum();
        ++n_masked;
    }
    if (n_masked == 0) throw config_error("nrmse: applied_mask selects no coordinate");
    const double normalizer = abs_sum / (n * n_masked);
    if (!(normalizer > 0.0))
        throw numeric_error("nrmse: zero mean applied deformation; metric undefined");

    NrmseResult out;
    out.normalizer = normalizer;
    for (int c = 0; c < 4; ++c) {
        const double mse = (true_def.col(c) - est_def.col(c)).squaredNorm() / n;
        out.value[static_cast<std::size_t>(c)] = std::sqrt(mse) / normalizer;
    }
    return out;
}

double crps_ensemble(const Eigen::MatrixXd& sims, const Eigen::VectorXd& y, bool fair) {
    const auto n_sim = static_cast<int>(sims.rows());
    const auto n_test = static_cast<int>(sims.cols());
    if (n_sim < 2) throw config_error("crps_ensemble: need at least 2 ensemble members");
    if (n_test != y.size()) throw config_error("crps_ensemble: ensemble/truth size mismatch");
    if (n_test == 0) throw empty_input_error("crps_ensemble: no test points");

    double total = 0.0;
    for (int j = 0; j < n_test; ++j) {
        double term1 = 0.0;
        for (int i = 0; i < n_sim; ++i) term1 += std::abs(sims(i, j) - y[j]);
        term1 /= n_sim;
        double spread = 0.0;
        for (int i = 0; i < n_sim; ++i)
            for (int k = i + 1; k < n_sim; ++k) spread += std::abs(sims(i, j) - sims(k, j));
        spread *= 2.0;  // sum over ordered pairs; i = k terms are zero
        const double denom =
            fair ? static_cast<double>(n_sim) * (n_sim - 1) : static_cast<double>(n_sim) * n_sim;
        total += term1 - 0.5 * spread / denom;
    }
    return total / n_test;
}

CrossvalMethod crossval_method_from_string(const std::string& s) {
    if (s == "rigid") return CrossvalMethod::Rigid;
    if (s == "nonrigid") return CrossvalMethod::Nonrigid;
    throw config_error("unknown crossval method '" + s + "' (expected rigid|nonrigid)");
}

std::string to_string(CrossvalMethod m) {
    return m == CrossvalMethod::Rigid ? "rigid" : "nonrigid";
}

void CrossvalConfig::validate() const {
    if (!(holdout_frac > 0.0) || !(holdout_frac <= 0.5))
        throw config_error("crossval: holdout_frac must be in (0, 0.5]");
    if (n_sim < 2) throw config_error("crossval: n_sim must be >= 2");
    if (grid_nx < 1 || grid_ny < 1) throw config_error("crossval: grid must be >= 1x1");
    if (!(overlap >= 0.0) || !(overlap < 1.0))
        throw config_error("crossval: overlap must be in [0, 1)");
    if (subsamples < 1 || rigid_subsample < 1)
        throw config_error("crossval: subsample counts must be >= 1");
    if (knn_k < 1) throw config_error("crossval: knn k must be >= 1");
    if (!(nu > 0.0)) throw config_error("crossval: nu must be > 0");
    if (!(trans_bound > 0.0)) throw config_error("crossval: translation bound must be > 0");
    if (n_starts < 1) throw config_error("crossval: n_starts must be >= 1");
    penalty.validate();
}

namespace {

struct Holdout {
    PointCloud train_fixed;
    std::vector<Eigen::Vector2d> locations;
    Eigen::VectorXd truths;
};

Holdout split_holdout(const PointCloud& fixed, double frac, std::uint64_t seed) {
    const auto n = static_cast<int>(fixed.size());
    const int n_hold = std::max(1, static_cast<int>(std::lround(frac * n)));
    if (n_hold >= n) throw config_error("crossval: holdout leaves no training data");
    std::vector<int> hold = subsample(all_indices(fixed.size()), n_hold, mix_seed(seed, 0x4d1));
    std::sort(hold.begin(), hold.end());

    Holdout out;
    out.train_fixed.role = CloudRole::Fixed;
    out.train_fixed.points.reserve(fixed.size() - hold.size());
    out.truths.resize(n_hold);
    out.locations.reserve(hold.size());
    std::size_t h = 0;
    for (std::size_t i = 0; i < fixed.size(); ++i) {
        if (h < hold.size() && static_cast<int>(i) == hold[h]) {
            out.locations.push_back(fixed[i].planar());
            out.truths[static_cast<Eigen::Index>(h)] = fixed[i].z;
            ++h;
        } else {
            out.train_fixed.points.push_back(fixed[i]);
        }
    }
    return out;
}

void krige_points(const PointCloud& data, const std::vector<Eigen::Vector2d>& queries,
                  const KrigingConfig& kc, Eigen::VectorXd& mean, Eigen::VectorXd& var) {
    const auto n = static_cast<Eigen::Index>(queries.size());
    mean.resize(n);
    var.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const Prediction p = krige(data, queries[static_cast<std::size_t>(j)], kc);
        mean[j] = p.mean;
        var[j] = p.variance;
    }
}

void crossval_rigid(const PointCloud& moving, const Holdout& ho, const CrossvalConfig& cfg,
                    MetricReport& rep) {
    const PointCloud fsub = select_points(
        ho.train_fixed,
        subsample(all_indices(ho.train_fixed.size()), cfg.rigid_subsample, mix_seed(cfg.seed, 1, 0)));
    const PointCloud msub = select_points(
        moving, subsample(all_indices(moving.size()), cfg.rigid_subsample, mix_seed(cfg.seed, 1, 1)));

    RigidFitSetup setup;
    setup.penalty = cfg.penalty;
    setup.nu = cfg.nu;
    setup.trans_bound = cfg.trans_bound;
    setup.n_starts = cfg.n_starts;
    setup.seed = mix_seed(cfg.seed, 2);
    const RigidFitOutput out = fit_rigid_auto(fsub, msub, setup);

    const PointCloud registered = register_moving(moving, out.fit.theta_hat, out.rotation_center);
    const PointCloud combined = concat(ho.train_fixed, registered);
    KrigingConfig kc;
    kc.k = cfg.knn_k;
    kc.nu = cfg.nu;
    kc.params = out.fit.theta_hat.cov;
    Eigen::VectorXd var;
    krige_points(combined, ho.locations, kc, rep.predictions, var);

    const Eigen::MatrixXd L = psd_sqrt(out.fit.param_cov);
    rep.ensemble.resize(cfg.n_sim, static_cast<Eigen::Index>(ho.locations.size()));
    parallel_for(cfg.n_sim, cfg.n_workers, [&](int i) {
        auto rng = make_rng(mix_seed(cfg.seed, 3, static_cast<std::uint64_t>(i)));
        std::normal_distribution<double> nd;
        Eigen::VectorXd theta = out.fit.theta_packed + L * standard_normals(rng, kNumParams);
        for (int p = 0; p < kNumParams; ++p)
            theta[p] = std::clamp(theta[p], out.bounds.lo[static_cast<std::size_t>(p)],
                                  out.bounds.hi[static_cast<std::size_t>(p)]);
        const RigidParams sim = unpack(theta);
        const PointCloud combined_i =
            concat(ho.train_fixed, register_moving(moving, sim, out.rotation_center));
        KrigingConfig kci = kc;
        kci.params = sim.cov;
        for (std::size_t j = 0; j < ho.locations.size(); ++j) {
            const Prediction p = krige(combined_i, ho.locations[j], kci);
            rep.ensemble(i, static_cast<Eigen::Index>(j)) =
                p.mean + std::sqrt(std::max(p.variance, 0.0)) * nd(rng);
        }
    });
}

void crossval_nonrigid(const PointCloud& moving, const Holdout& ho, const CrossvalConfig& cfg,
                       MetricReport& rep) {
    const BBox box = BBox::join(bbox(ho.train_fixed), bbox(moving));
    const WindowGrid grid = make_grid(box, cfg.grid_nx, cfg.grid_ny, cfg.overlap);
    LocalFitConfig lcfg;
    lcfg.N = cfg.subsamples;
    lcfg.penalty = cfg.penalty;
    lcfg.nu = cfg.nu;
    lcfg.trans_bound = cfg.trans_bound;
    lcfg.seed = mix_seed(cfg.seed, 1);
    lcfg.n_workers = cfg.n_workers;
    lcfg.n_starts = cfg.n_starts;
    const LocalFitReport lrep = local_fits(ho.train_fixed, moving, grid, lcfg);

    const FieldResult fr = build_field(lrep.estimates, moving, cfg.surface, lrep.rotation_center,
                                       /*with_cov_fields=*/true);
    const PointCloud registered = apply_field(moving, fr.field);
    const PointCloud combined = concat(ho.train_fixed, registered);

    // Surface order from build_field: r_x, r_y, mu_z, phi, log_sigma2, log_a,
    // log_tau2 — matching the packed parameter layout.
    KrigingConfig kc;
    kc.k = cfg.knn_k;
    kc.nu = cfg.nu;
    kc.spatially_varying = true;
    kc.log_sigma2 = &fr.surfaces[4];
    kc.log_a = &fr.surfaces[5];
    kc.log_tau2 = &fr.surfaces[6];
    Eigen::VectorXd var;
    krige_points(combined, ho.locations, kc, rep.predictions, var);

    // Uncertainty propagation: simulate each window's parameter vector from
    // its covariance, refit the surfaces to the simulated knot values,
    // conditionally simulate the transform fields, re-register, re-krige.
    const std::vector<int> knots = field_knot_indices(lrep.estimates);
    const auto n_knots = static_cast<int>(knots.size());
    std::vector<Eigen::MatrixXd> knot_sqrt;
    knot_sqrt.reserve(knots.size());
    for (int t : knots)
        knot_sqrt.push_back(psd_sqrt(lrep.estimates[static_cast<std::size_t>(t)].param_cov));

    const std::vector<Eigen::Vector2d>& mlocs = fr.field.locations;
    const bool joint_draw = static_cast<int>(mlocs.size()) <= cfg.field_sim_cap;
    std::vector<std::optional<GpPosterior>> posteriors(4);
    for (int pi = 0; pi < 4; ++pi)
        if (joint_draw && fr.surfaces[static_cast<std::size_t>(pi)].kind() == SurfaceKind::GaussianProcess)
            posteriors[static_cast<std::size_t>(pi)].emplace(
                fr.surfaces[static_cast<std::size_t>(pi)], mlocs);

    rep.ensemble.resize(cfg.n_sim, static_cast<Eigen::Index>(ho.locations.size()));
    parallel_for(cfg.n_sim, cfg.n_workers, [&](int i) {
        auto rng = make_rng(mix_seed(cfg.seed, 3, static_cast<std::uint64_t>(i)));
        std::normal_distribution<double> nd;

        Eigen::MatrixXd sim_theta(n_knots, kNumParams);
        for (int t = 0; t < n_knots; ++t) {
            const auto& est = lrep.estimates[static_cast<std::size_t>(knots[static_cast<std::size_t>(t)])];
            sim_theta.row(t) =
                (est.theta_packed + knot_sqrt[static_cast<std::size_t>(t)] *
                                        standard_normals(rng, kNumParams))
                    .transpose();
        }

        NonrigidField field;
        field.locations = mlocs;
        field.rotation_center = fr.field.rotation_center;
        std::vector<ParamSurface> log_surfaces;
        log_surfaces.reserve(3);
        for (int pi = 0; pi < kNumParams; ++pi) {
            const ParamSurface refitted =
                fr.surfaces[static_cast<std::size_t>(pi)].refit(sim_theta.col(pi));
            if (pi >= 4) {
                // Covariance fields enter only through the kriging parameters
                // at the holdout queries; the conditional mean suffices there.
                log_surfaces.push_back(refitted);
                continue;
            }
            Eigen::VectorXd values;
            if (posteriors[static_cast<std::size_t>(pi)])
                values = posteriors[static_cast<std::size_t>(pi)]->sample(
                    refitted, mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(pi),
                                       static_cast<std::uint64_t>(i)));
            else
                values = refitted.predict(mlocs);
            if (pi == kRx) field.r_x = std::move(values);
            else if (pi == kRy) field.r_y = std::move(values);
            else if (pi == kMuZ) field.mu_z = std::move(values);
            else field.phi = std::move(values);
        }

        const PointCloud combined_i = concat(ho.train_fixed, apply_field(moving, field));
        KrigingConfig kci = kc;
        kci.log_sigma2 = &log_surfaces[0];
        kci.log_a = &log_surfaces[1];
        kci.log_tau2 = &log_surfaces[2];
        for (std::size_t j = 0; j < ho.locations.size(); ++j) {
            const Prediction p = krige(combined_i, ho.locations[j], kci);
            rep.ensemble(i, static_cast<Eigen::Index>(j)) =
                p.mean + std::sqrt(std::max(p.variance, 0.0)) * nd(rng);
        }
    });
}

}  // namespace

MetricReport crossval(const PointCloud& fixed, const PointCloud& moving,
                      const CrossvalConfig& cfg) {
    cfg.validate();
    if (fixed.empty() || moving.empty()) throw empty_input_error("crossval: empty input cloud");

    const Holdout ho = split_holdout(fixed, cfg.holdout_frac, cfg.seed);

    MetricReport rep;
    rep.config = cfg;
    rep.n_test = static_cast<int>(ho.locations.size());
    rep.n_simulations = cfg.n_sim;
    rep.holdout_locations = ho.locations;
    rep.truths = ho.truths;

    if (cfg.method == CrossvalMethod::Rigid)
        crossval_rigid(moving, ho, cfg, rep);
    else
        crossval_nonrigid(moving, ho, cfg, rep);

    rep.rmse = std::sqrt((rep.predictions - rep.truths).squaredNorm() /
                         static_cast<double>(rep.truths.size()));
    rep.crps = crps_ensemble(rep.ensemble, rep.truths, cfg.fair_crps);
    return rep;
}

}  // namespace gpreg
