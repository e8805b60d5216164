#include "gpreg/windowing.hpp"

#include <atomic>
#include <cmath>
#include <optional>
#include <thread>

#include "gpreg/rng.hpp"

namespace gpreg {

Eigen::Vector2d WindowGrid::center(int k) const {
    const int ix = k % nx;
    const int iy = k / nx;
    const double sx = wx * (1.0 - overlap);
    const double sy = wy * (1.0 - overlap);
    return {box.x_min + 0.5 * wx + ix * sx, box.y_min + 0.5 * wy + iy * sy};
}

BBox WindowGrid::window_box(int k) const {
    const Eigen::Vector2d c = center(k);
    return {c.x() - 0.5 * wx, c.x() + 0.5 * wx, c.y() - 0.5 * wy, c.y() + 0.5 * wy};
}

WindowGrid make_grid(const BBox& box, int nx, int ny, double overlap) {
    if (nx < 1 || ny < 1) throw config_error("make_grid: nx, ny must be >= 1");
    if (!(overlap >= 0.0 && overlap <= 0.9))
        throw config_error("make_grid: overlap must be in [0, 0.9]");
    if (box.degenerate()) throw config_error("make_grid: degenerate bounding box");
    WindowGrid g;
    g.box = box;
    g.nx = nx;
    g.ny = ny;
    g.overlap = overlap;
    g.wx = box.width() / (1.0 + (nx - 1) * (1.0 - overlap));
    g.wy = box.height() / (1.0 + (ny - 1) * (1.0 - overlap));
    if (!(g.wx > 0.0) || !(g.wy > 0.0))
        throw config_error("make_grid: degenerate window size");
    return g;
}

std::vector<std::vector<int>> partition(const PointCloud& cloud, const WindowGrid& grid) {
    std::vector<std::vector<int>> out(grid.size());
    for (int k = 0; k < grid.size(); ++k) {
        const BBox wb = grid.window_box(k);
        const bool last_col = (k % grid.nx) == grid.nx - 1;
        const bool last_row = (k / grid.nx) == grid.ny - 1;
        auto& idx = out[k];
        for (int j = 0; j < static_cast<int>(cloud.size()); ++j) {
            const auto& p = cloud[j];
            const bool in_x = p.x >= wb.x_min && (p.x < wb.x_max || (last_col && p.x <= wb.x_max));
            const bool in_y = p.y >= wb.y_min && (p.y < wb.y_max || (last_row && p.y <= wb.y_max));
            if (in_x && in_y) idx.push_back(j);
        }
    }
    return out;
}

std::vector<int> subsample(const std::vector<int>& indices, int N, std::uint64_t seed) {
    if (N < 1) throw config_error("subsample: N must be >= 1");
    std::vector<int> v(indices);
    if (static_cast<int>(v.size()) <= N) return v;
    std::mt19937_64 rng = make_rng(seed);
    for (int i = 0; i < N; ++i) {
        std::uniform_int_distribution<std::size_t> d(i, v.size() - 1);
        std::swap(v[static_cast<std::size_t>(i)], v[d(rng)]);
    }
    v.resize(N);
    return v;
}

namespace {

PointCloud gather(const PointCloud& cloud, const std::vector<int>& idx, CloudRole role) {
    PointCloud out;
    out.role = role;
    out.points.reserve(idx.size());
    for (int j : idx) out.points.push_back(cloud[static_cast<std::size_t>(j)]);
    return out;
}

LocalEstimate fit_window(const PointCloud& fixed_sub, const PointCloud& moving_sub, int k,
                         const Eigen::Vector2d& g_center, const Eigen::Vector2d& common_center,
                         const LocalFitConfig& cfg, std::uint64_t fit_seed) {
    RigidFitSetup setup;
    setup.penalty = cfg.penalty;
    setup.nu = cfg.nu;
    setup.trans_bound = cfg.trans_bound;
    setup.n_starts = cfg.n_starts;
    setup.seed = fit_seed;
    setup.optim = cfg.optim;
    setup.estimate_cov = cfg.estimate_cov;
    setup.fixed_cov = cfg.fixed_cov;
    setup.estimate_transform = cfg.estimate_transform;
    RigidFitOutput fitted = fit_rigid_auto(fixed_sub, moving_sub, setup);
    FitResult& fit = fitted.fit;

    // Convert to the common rotation frame: r' = r + (I - R)(c_w - c0), and
    // propagate the covariance through the Jacobian of that map.
    const RigidTransform tw = fit.theta_hat.transform(fitted.rotation_center);
    const RigidTransform t0 = tw.with_center(common_center);
    LocalEstimate est;
    est.k = k;
    est.center = g_center;
    est.theta = fit.theta_hat;
    est.theta.r_x = t0.r_x;
    est.theta.r_y = t0.r_y;
    est.theta_packed = fit.theta_packed;
    est.theta_packed[kRx] = t0.r_x;
    est.theta_packed[kRy] = t0.r_y;

    Eigen::MatrixXd J = Eigen::MatrixXd::Identity(kNumParams, kNumParams);
    const Eigen::Vector2d d = fitted.rotation_center - common_center;
    const double c = std::cos(fit.theta_hat.phi), s = std::sin(fit.theta_hat.phi);
    // dR/dphi = [[-s, c], [-c, -s]]; d r'/d phi = -(dR/dphi) d.
    J(kRx, kPhi) = -(-s * d.x() + c * d.y());
    J(kRy, kPhi) = -(-c * d.x() - s * d.y());
    est.param_cov = J * fit.param_cov * J.transpose();
    est.converged = fit.converged;
    est.hessian_pd = fit.hessian_pd;
    est.n_fixed = static_cast<int>(fixed_sub.size());
    est.n_moving = static_cast<int>(moving_sub.size());
    return est;
}

}  // namespace

LocalFitReport local_fits(const PointCloud& fixed, const PointCloud& moving,
                          const WindowGrid& grid, const LocalFitConfig& cfg) {
    if (fixed.empty() || moving.empty())
        throw empty_input_error("local_fits: empty input cloud");
    if (grid.size() < 1) throw config_error("local_fits: empty grid");

    const auto part_fixed = partition(fixed, grid);
    const auto part_moving = partition(moving, grid);
    const Eigen::Vector2d common_center = grid.box.center();

    const int n_g = grid.size();
    std::vector<std::optional<LocalEstimate>> results(n_g);
    std::vector<std::optional<SkippedWindow>> skips(n_g);

    auto run_window = [&](int k) {
        const auto idx_f = subsample(part_fixed[k], cfg.N, mix_seed(cfg.seed, k, 0));
        const auto idx_m = subsample(part_moving[k], cfg.N, mix_seed(cfg.seed, k, 1));
        if (static_cast<int>(idx_f.size()) < cfg.min_points ||
            static_cast<int>(idx_m.size()) < cfg.min_points) {
            skips[k] = SkippedWindow{k, "degenerate window: fewer than " +
                                            std::to_string(cfg.min_points) +
                                            " points in one cloud"};
            return;
        }
        try {
            results[k] = fit_window(gather(fixed, idx_f, CloudRole::Fixed),
                                    gather(moving, idx_m, CloudRole::Moving), k,
                                    grid.center(k), common_center, cfg,
                                    mix_seed(cfg.seed, k, 2));
        } catch (const error& e) {
            skips[k] = SkippedWindow{k, e.what()};
        }
    };

    int workers = cfg.n_workers > 0
                      ? cfg.n_workers
                      : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, n_g);
    if (workers <= 1) {
        for (int k = 0; k < n_g; ++k) run_window(k);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (int k = next.fetch_add(1); k < n_g; k = next.fetch_add(1)) run_window(k);
            });
        }
        for (auto& t : pool) t.join();
    }

    LocalFitReport report;
    report.grid = grid;
    report.rotation_center = common_center;
    for (int k = 0; k < n_g; ++k) {
        if (results[k]) report.estimates.push_back(std::move(*results[k]));
        if (skips[k]) report.skipped.push_back(std::move(*skips[k]));
    }
    if (report.estimates.empty())
        throw empty_input_error("local_fits: every window was skipped");
    return report;
}

}  // namespace gpreg
