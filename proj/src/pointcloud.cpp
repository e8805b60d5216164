#include "gpreg/pointcloud.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace gpreg {

Eigen::VectorXd PointCloud::elevations() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) v[static_cast<Eigen::Index>(i)] = points[i].z;
    return v;
}

std::vector<Eigen::Vector2d> PointCloud::planar_points() const {
    std::vector<Eigen::Vector2d> out;
    out.reserve(points.size());
    for (const auto& p : points) out.emplace_back(p.x, p.y);
    return out;
}

double BBox::diagonal() const { return std::hypot(width(), height()); }

BBox BBox::join(const BBox& a, const BBox& b) {
    return {std::min(a.x_min, b.x_min), std::max(a.x_max, b.x_max),
            std::min(a.y_min, b.y_min), std::max(a.y_max, b.y_max)};
}

BBox bbox(const PointCloud& cloud) {
    if (cloud.empty()) throw empty_input_error("bbox: empty point cloud");
    BBox b{cloud[0].x, cloud[0].x, cloud[0].y, cloud[0].y};
    for (const auto& p : cloud.points) {
        b.x_min = std::min(b.x_min, p.x);
        b.x_max = std::max(b.x_max, p.x);
        b.y_min = std::min(b.y_min, p.y);
        b.y_max = std::max(b.y_max, p.y);
    }
    return b;
}

namespace {

bool blank_or_comment(const std::string& line) {
    for (char c : line) {
        if (c == '#') return true;
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

}  // namespace

PointCloud read_cloud(const std::string& path, CloudRole role) {
    std::ifstream in(path);
    if (!in) throw io_error("read_cloud: cannot open '" + path + "'");
    PointCloud cloud;
    cloud.role = role;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank_or_comment(line)) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        Point3 p;
        if (!(ss >> p.x >> p.y >> p.z)) {
            throw parse_error("read_cloud: malformed line " + std::to_string(lineno) +
                              " in '" + path + "'");
        }
        std::string rest;
        if (ss >> rest) {
            throw parse_error("read_cloud: trailing tokens on line " + std::to_string(lineno) +
                              " in '" + path + "'");
        }
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
            throw parse_error("read_cloud: non-finite value on line " + std::to_string(lineno) +
                              " in '" + path + "'");
        }
        cloud.points.push_back(p);
    }
    if (cloud.empty()) throw empty_input_error("read_cloud: no data points in '" + path + "'");
    return cloud;
}

void write_cloud(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw io_error("write_cloud: cannot open '" + path + "' for writing");
    char buf[128];
    for (const auto& p : cloud.points) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x, p.y, p.z);
        out << buf;
    }
    if (!out) throw io_error("write_cloud: write failure on '" + path + "'");
}

PointCloud crop(const PointCloud& cloud, const BBox& box) {
    PointCloud out;
    out.role = cloud.role;
    for (const auto& p : cloud.points)
        if (box.contains(p.x, p.y)) out.points.push_back(p);
    return out;
}

}  // namespace gpreg
