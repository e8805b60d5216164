#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "gpreg/errors.hpp"

namespace gpreg {

/// One observation: planar coordinates (meters) plus measured elevation.
struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Eigen::Vector2d planar() const { return {x, y}; }
};

enum class CloudRole { Fixed, Moving };

/// An ordered point set. Point index is a persistent identity; instances are
/// immutable by convention after construction and safe to share across threads.
struct PointCloud {
    std::vector<Point3> points;
    CloudRole role = CloudRole::Fixed;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    const Point3& operator[](std::size_t i) const { return points[i]; }

    Eigen::VectorXd elevations() const;
    std::vector<Eigen::Vector2d> planar_points() const;
};

/// Tight planar bounding box.
struct BBox {
    double x_min = 0.0, x_max = 0.0;
    double y_min = 0.0, y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double diagonal() const;
    Eigen::Vector2d center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
    bool contains(double x, double y) const {
        return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
    }
    bool degenerate() const { return !(x_min < x_max) || !(y_min < y_max); }

    static BBox join(const BBox& a, const BBox& b);
};

/// Bounding box of a cloud's planar coordinates. Throws empty_input_error on an
/// empty cloud; a single point yields a degenerate (zero-area) box, flagged via
/// BBox::degenerate().
BBox bbox(const PointCloud& cloud);

/// Read the canonical xyz-text format: one "x y z" triple per line, whitespace
/// or comma separated, lines starting with '#' skipped. Line order is kept.
PointCloud read_cloud(const std::string& path, CloudRole role = CloudRole::Fixed);

/// Write xyz-text with enough digits that read_cloud round-trips to 1e-12.
void write_cloud(const PointCloud& cloud, const std::string& path);

/// Crop to a box (closed on all edges). Optional pre-processing step.
PointCloud crop(const PointCloud& cloud, const BBox& box);

}  // namespace gpreg
