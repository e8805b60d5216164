#include "gpreg/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "gpreg/errors.hpp"

namespace gpreg {

namespace {

inline Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

inline double step_size(double xi, double rel, double floor_) {
    return std::max(rel * std::abs(xi), floor_);
}

}  // namespace

Eigen::VectorXd fd_gradient(const ObjectiveFn& fn, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                            double rel_step, double abs_floor, int* n_evals) {
    const Eigen::Index n = x.size();
    Eigen::VectorXd g(n);
    int evals = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double h = step_size(x[i], rel_step, abs_floor);
        // Shift the stencil inside the box; the difference stays central in form.
        double xp = std::min(x[i] + h, hi[i]);
        double xm = std::max(x[i] - h, lo[i]);
        if (xp <= xm) {
            g[i] = 0.0;  // degenerate interval
            continue;
        }
        Eigen::VectorXd e = x;
        e[i] = xp;
        const double fp = fn(e);
        e[i] = xm;
        const double fm = fn(e);
        evals += 2;
        g[i] = (fp - fm) / (xp - xm);
    }
    if (n_evals) *n_evals += evals;
    return g;
}

Eigen::MatrixXd fd_hessian(const ObjectiveFn& fn, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                           double rel_step, bool* one_sided) {
    const Eigen::Index n = x.size();
    if (one_sided) *one_sided = false;
    // Per-coordinate evaluation abscissae: prefer {x-h, x, x+h}; shift the whole
    // stencil inward when the box interferes.
    Eigen::VectorXd hvec(n), base(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double h = std::max(rel_step * std::abs(x[i]), 1e-6);
        const double span = hi[i] - lo[i];
        if (2.0 * h > span) h = 0.25 * span;
        double c = x[i];
        if (c + h > hi[i]) {
            c = hi[i] - h;
            if (one_sided) *one_sided = true;
        }
        if (c - h < lo[i]) {
            c = lo[i] + h;
            if (one_sided) *one_sided = true;
        }
        hvec[i] = h;
        base[i] = c;
    }
    const double f0 = fn(base);
    Eigen::MatrixXd H(n, n);
    std::vector<double> fpl(n), fmi(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd e = base;
        e[i] = base[i] + hvec[i];
        fpl[i] = fn(e);
        e[i] = base[i] - hvec[i];
        fmi[i] = fn(e);
        H(i, i) = (fpl[i] - 2.0 * f0 + fmi[i]) / (hvec[i] * hvec[i]);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            Eigen::VectorXd e = base;
            e[i] = base[i] + hvec[i];
            e[j] = base[j] + hvec[j];
            const double fpp = fn(e);
            e[j] = base[j] - hvec[j];
            const double fpm = fn(e);
            e[i] = base[i] - hvec[i];
            const double fmm = fn(e);
            e[j] = base[j] + hvec[j];
            const double fmp = fn(e);
            H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * hvec[i] * hvec[j]);
        }
    }
    return 0.5 * (H + H.transpose());
}

OptimResult minimize_bounded(const ObjectiveFn& fn, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                             const OptimOptions& opts) {
    const Eigen::Index n = x0.size();
    if (lo.size() != n || hi.size() != n)
        throw config_error("minimize_bounded: bound dimension mismatch");

    OptimResult res;
    Eigen::VectorXd x = project(x0, lo, hi);
    double f = fn(x);
    res.n_evals = 1;
    Eigen::VectorXd g = fd_gradient(fn, x, lo, hi, opts.fd_rel_step, opts.fd_abs_floor,
                                    &res.n_evals);

    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> mem;  // (s, y)

    auto projected_grad_norm = [&](const Eigen::VectorXd& xx, const Eigen::VectorXd& gg) {
        double m = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double gi = gg[i];
            if (xx[i] <= lo[i] && gi > 0.0) gi = 0.0;
            if (xx[i] >= hi[i] && gi < 0.0) gi = 0.0;
            m = std::max(m, std::abs(gi));
        }
        return m;
    };

    for (int iter = 0; iter < opts.max_iters; ++iter) {
        res.n_iters = iter + 1;
        if (projected_grad_norm(x, g) <= opts.grad_tol) {
            res.converged = true;
            break;
        }

        // Two-loop L-BFGS recursion.
        Eigen::VectorXd d = -g;
        if (!mem.empty()) {
            std::vector<double> alpha(mem.size());
            for (int k = static_cast<int>(mem.size()) - 1; k >= 0; --k) {
                const auto& [s, yv] = mem[k];
                const double rho = 1.0 / s.dot(yv);
                alpha[k] = rho * s.dot(d);
                d -= alpha[k] * yv;
            }
            const auto& [sl, yl] = mem.back();
            d *= sl.dot(yl) / yl.squaredNorm();
            for (std::size_t k = 0; k < mem.size(); ++k) {
                const auto& [s, yv] = mem[k];
                const double rho = 1.0 / s.dot(yv);
                const double beta = rho * yv.dot(d);
                d += (alpha[k] - beta) * s;
            }
        }
        if (!d.allFinite() || g.dot(d) >= 0.0) {
            mem.clear();
            d = -g;
        }

        // Backtracking Armijo search along the projection arc.
        double step = 1.0;
        bool accepted = false;
        Eigen::VectorXd x_new;
        double f_new = f;
        for (int ls = 0; ls < 40; ++ls) {
            x_new = project(x + step * d, lo, hi);
            Eigen::VectorXd dx = x_new - x;
            if (dx.cwiseAbs().maxCoeff() == 0.0) break;
            f_new = fn(x_new);
            ++res.n_evals;
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * g.dot(dx)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // No progress along this direction; if it was a steepest-descent
            // step we are done, otherwise restart the memory once.
            if (mem.empty()) {
                res.converged = projected_grad_norm(x, g) <= 1e2 * opts.grad_tol;
                break;
            }
            mem.clear();
            continue;
        }

        Eigen::VectorXd g_new =
            fd_gradient(fn, x_new, lo, hi, opts.fd_rel_step, opts.fd_abs_floor, &res.n_evals);
        Eigen::VectorXd s = x_new - x;
        Eigen::VectorXd yv = g_new - g;
        if (s.dot(yv) > 1e-12 * s.norm() * yv.norm()) {
            mem.emplace_back(std::move(s), std::move(yv));
            if (static_cast<int>(mem.size()) > opts.lbfgs_memory) mem.pop_front();
        }

        const double decrease = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        if (decrease <= opts.f_rel_tol * (std::abs(f) + 1.0)) {
            res.converged = true;
            res.n_iters = iter + 1;
            break;
        }
    }

    res.x = x;
    res.f = f;
    return res;
}

}  // namespace gpreg
