#include "gpreg/kriging.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>

namespace gpreg {

std::vector<int> knn(const PointCloud& cloud, const Eigen::Vector2d& query, int k) {
    if (cloud.empty()) throw empty_input_error("knn: empty cloud");
    if (k < 1) throw config_error("knn: k must be >= 1");
    const int n = static_cast<int>(cloud.size());
    std::vector<std::pair<double, int>> d(n);
    for (int i = 0; i < n; ++i) {
        const double dx = cloud[i].x - query.x();
        const double dy = cloud[i].y - query.y();
        d[i] = {dx * dx + dy * dy, i};
    }
    if (k >= n) {
        std::vector<int> all(n);
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    std::nth_element(d.begin(), d.begin() + k, d.end());
    std::sort(d.begin(), d.begin() + k);  // pair order = (distance, index) tie-break
    std::vector<int> out(k);
    for (int i = 0; i < k; ++i) out[i] = d[i].second;
    return out;
}

MaternParams KrigingConfig::params_at(const Eigen::Vector2d& q) const {
    if (!spatially_varying) return params;
    if (!log_sigma2 || !log_a || !log_tau2)
        throw config_error("KrigingConfig: spatially varying mode needs all three surfaces");
    MaternParams p;
    p.sigma2 = std::exp(log_sigma2->predict_one(q));
    p.a = std::exp(log_a->predict_one(q));
    p.tau2 = std::exp(log_tau2->predict_one(q));
    p.nu = nu;
    return p;
}

Prediction krige(const PointCloud& cloud, const Eigen::Vector2d& query,
                 const KrigingConfig& cfg) {
    if (cloud.empty()) throw empty_input_error("krige: empty cloud");
    MaternParams p = cfg.params_at(query);
    p.validate();

    const std::vector<int> nb = knn(cloud, query, cfg.k);
    const int m = static_cast<int>(nb.size());
    const MaternShape& shape = MaternShape::get(p.nu);
    const double inv_a = 1.0 / p.a;

    Eigen::MatrixXd C(m, m);
    Eigen::VectorXd c(m), y(m);
    for (int i = 0; i < m; ++i) {
        const auto& pi = cloud[static_cast<std::size_t>(nb[i])];
        y[i] = pi.z;
        const double dxq = pi.x - query.x(), dyq = pi.y - query.y();
        c[i] = p.sigma2 * shape.rho(std::sqrt(dxq * dxq + dyq * dyq) * inv_a);
        C(i, i) = p.sigma2 + p.tau2;
        for (int j = i + 1; j < m; ++j) {
            const auto& pj = cloud[static_cast<std::size_t>(nb[j])];
            const double dx = pi.x - pj.x, dy = pi.y - pj.y;
            C(j, i) = C(i, j) = p.sigma2 * shape.rho(std::sqrt(dx * dx + dy * dy) * inv_a);
        }
    }

    Eigen::LLT<Eigen::MatrixXd> llt(C);
    if (llt.info() != Eigen::Success)
        throw numeric_error("krige: singular local system (tau2 too small?)");
    const double ybar = y.mean();
    const Eigen::VectorXd w = llt.solve(c);

    Prediction out;
    out.location = query;
    out.mean = ybar + w.dot(y - Eigen::VectorXd::Constant(m, ybar));
    out.variance = std::max(0.0, p.sigma2 + p.tau2 - w.dot(c));
    return out;
}

}  // namespace gpreg
