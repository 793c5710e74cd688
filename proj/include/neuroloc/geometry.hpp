#pragma once

// Quaternion and pose math plus the equidistant 3-D grid quantizer.
// Quaternions are scalar-first (w, x, y, z).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "neuroloc/errors.hpp"

namespace neuroloc {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

inline double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

class UnitQuaternion {
public:
    /// Identity rotation.
    UnitQuaternion() = default;

    /// Normalizes; does not canonicalize.
    static UnitQuaternion from_components(double w, double x, double y, double z) {
        const double n = std::sqrt(w * w + x * x + y * y + z * z);
        if (!(n > 1e-12) || !std::isfinite(n)) {
            throw NumericError("degenerate quaternion (norm " + std::to_string(n) + ")");
        }
        UnitQuaternion q;
        q.c_ = {w / n, x / n, y / n, z / n};
        return q;
    }

    double w() const { return c_[0]; }
    double x() const { return c_[1]; }
    double y() const { return c_[2]; }
    double z() const { return c_[3]; }
    const std::array<double, 4>& components() const { return c_; }
    Vec3 vec() const { return {c_[1], c_[2], c_[3]}; }

    UnitQuaternion negated() const {
        UnitQuaternion q;
        q.c_ = {-c_[0], -c_[1], -c_[2], -c_[3]};
        return q;
    }

    /// Representative with w >= 0.
    UnitQuaternion canonical() const { return c_[0] < 0.0 ? negated() : *this; }

    friend bool operator==(const UnitQuaternion&, const UnitQuaternion&) = default;

private:
    std::array<double, 4> c_{1.0, 0.0, 0.0, 0.0};
};

/// Unit-norm, canonical (w >= 0) quaternion from a raw 4-vector.
inline UnitQuaternion quat_normalize(const std::array<double, 4>& q) {
    return UnitQuaternion::from_components(q[0], q[1], q[2], q[3]).canonical();
}

/// Log map: (v/|v|) * atan2(|v|, w). atan2 keeps full precision near the
/// identity, where acos(w) would round small angles to zero.
inline Vec3 quat_log(const UnitQuaternion& q) {
    const Vec3 v = q.vec();
    const double n = norm(v);
    if (n == 0.0) return {0.0, 0.0, 0.0};
    const double f = std::atan2(n, q.w()) / n;
    return {v[0] * f, v[1] * f, v[2] * f};
}

/// Exp map, inverse of quat_log on the w >= 0 hemisphere.
inline UnitQuaternion quat_exp(const Vec3& v) {
    const double n = norm(v);
    double s;  // sin(n)/n
    if (n < 1e-6) {
        s = 1.0 - n * n / 6.0;
    } else {
        s = std::sin(n) / n;
    }
    return UnitQuaternion::from_components(std::cos(n), v[0] * s, v[1] * s, v[2] * s);
}

/// Rotation angle between two orientations, in degrees [0, 180].
/// Equals 2 acos(|<a, b>|), evaluated as 2 atan2(|vec(r)|, |w(r)|) on the
/// relative rotation r = conj(a) b so that small angles keep full precision.
inline double angular_error_deg(const UnitQuaternion& a, const UnitQuaternion& b) {
    const double w = a.w() * b.w() + a.x() * b.x() + a.y() * b.y() + a.z() * b.z();
    const double x = a.w() * b.x() - b.w() * a.x() - (a.y() * b.z() - a.z() * b.y());
    const double y = a.w() * b.y() - b.w() * a.y() - (a.z() * b.x() - a.x() * b.z());
    const double z = a.w() * b.z() - b.w() * a.z() - (a.x() * b.y() - a.y() * b.x());
    const double n = std::sqrt(x * x + y * y + z * z);
    return 2.0 * std::atan2(n, std::abs(w)) * 180.0 / std::numbers::pi;
}

inline UnitQuaternion quat_multiply(const UnitQuaternion& a, const UnitQuaternion& b) {
    return UnitQuaternion::from_components(
        a.w() * b.w() - a.x() * b.x() - a.y() * b.y() - a.z() * b.z(),
        a.w() * b.x() + a.x() * b.w() + a.y() * b.z() - a.z() * b.y(),
        a.w() * b.y() - a.x() * b.z() + a.y() * b.w() + a.z() * b.x(),
        a.w() * b.z() + a.x() * b.y() - a.y() * b.x() + a.z() * b.w());
}

inline UnitQuaternion quat_from_axis_angle(const Vec3& axis, double angle) {
    const double n = norm(axis);
    if (!(n > 0.0)) throw NumericError("quat_from_axis_angle: zero axis");
    const double s = std::sin(angle / 2.0) / n;
    return UnitQuaternion::from_components(std::cos(angle / 2.0), axis[0] * s, axis[1] * s,
                                           axis[2] * s);
}

inline Mat3 quat_to_matrix(const UnitQuaternion& q) {
    const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

/// Rotation matrix to canonical quaternion (Shepperd's branch selection).
inline UnitQuaternion matrix_to_quat(const Mat3& m) {
    const double tr = m[0][0] + m[1][1] + m[2][2];
    double w, x, y, z;
    if (tr > 0.0) {
        const double s = 2.0 * std::sqrt(tr + 1.0);
        w = 0.25 * s;
        x = (m[2][1] - m[1][2]) / s;
        y = (m[0][2] - m[2][0]) / s;
        z = (m[1][0] - m[0][1]) / s;
    } else if (m[0][0] > m[1][1] && m[0][0] > m[2][2]) {
        const double s = 2.0 * std::sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]);
        w = (m[2][1] - m[1][2]) / s;
        x = 0.25 * s;
        y = (m[0][1] + m[1][0]) / s;
        z = (m[0][2] + m[2][0]) / s;
    } else if (m[1][1] > m[2][2]) {
        const double s = 2.0 * std::sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]);
        w = (m[0][2] - m[2][0]) / s;
        x = (m[0][1] + m[1][0]) / s;
        y = 0.25 * s;
        z = (m[1][2] + m[2][1]) / s;
    } else {
        const double s = 2.0 * std::sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]);
        w = (m[1][0] - m[0][1]) / s;
        x = (m[0][2] + m[2][0]) / s;
        y = (m[1][2] + m[2][1]) / s;
        z = 0.25 * s;
    }
    return UnitQuaternion::from_components(w, x, y, z).canonical();
}

struct Pose {
    Vec3 position{0.0, 0.0, 0.0};
    UnitQuaternion orientation;

    friend bool operator==(const Pose&, const Pose&) = default;
};

/// Inverse rigid transform (camera-to-world <-> world-to-camera).
inline Pose invert_pose(const Pose& p) {
    const UnitQuaternion qi =
        UnitQuaternion::from_components(p.orientation.w(), -p.orientation.x(),
                                        -p.orientation.y(), -p.orientation.z());
    const Mat3 r = quat_to_matrix(qi);
    Vec3 t{};
    for (std::size_t i = 0; i < 3; ++i)
        t[i] = -(r[i][0] * p.position[0] + r[i][1] * p.position[1] + r[i][2] * p.position[2]);
    return Pose{t, qi.canonical()};
}

inline double position_error_l2(const Vec3& a, const Vec3& b) {
    return norm(Vec3{a[0] - b[0], a[1] - b[1], a[2] - b[2]});
}

// ---------------------------------------------------------------------------
// Grid

/// Axis-aligned scene box split into equal cells.
struct GridSpec {
    Vec3 bbox_min{0.0, 0.0, 0.0};
    Vec3 bbox_max{1.0, 1.0, 1.0};
    std::array<std::size_t, 3> cells{1, 1, 1};
    Vec3 cell_size{1.0, 1.0, 1.0};
    std::size_t requested_cells = 1;

    std::size_t total_cells() const { return cells[0] * cells[1] * cells[2]; }

    Vec3 cell_center(std::size_t ix, std::size_t iy, std::size_t iz) const {
        const std::array<std::size_t, 3> idx{ix, iy, iz};
        Vec3 c{};
        for (std::size_t a = 0; a < 3; ++a)
            c[a] = bbox_min[a] + (static_cast<double>(idx[a]) + 0.5) * cell_size[a];
        return c;
    }

    /// All centers, x fastest.
    std::vector<Vec3> centers() const {
        std::vector<Vec3> out;
        out.reserve(total_cells());
        for (std::size_t k = 0; k < cells[2]; ++k)
            for (std::size_t j = 0; j < cells[1]; ++j)
                for (std::size_t i = 0; i < cells[0]; ++i) out.push_back(cell_center(i, j, k));
        return out;
    }

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Near-cubic cells of side (volume / n)^(1/3), rounded per axis.
inline GridSpec grid_spec_build(const Vec3& bbox_min, const Vec3& bbox_max, std::size_t n) {
    if (n < 1) throw DimensionError("grid_spec_build: cell count must be >= 1");
    Vec3 extent{};
    for (std::size_t a = 0; a < 3; ++a) {
        extent[a] = bbox_max[a] - bbox_min[a];
        if (!(extent[a] > 0.0) || !std::isfinite(extent[a])) {
            throw DimensionError("grid_spec_build: degenerate bounding box on axis " +
                                 std::to_string(a));
        }
    }
    const double side = std::cbrt(extent[0] * extent[1] * extent[2] / static_cast<double>(n));
    GridSpec g;
    g.bbox_min = bbox_min;
    g.bbox_max = bbox_max;
    g.requested_cells = n;
    for (std::size_t a = 0; a < 3; ++a) {
        const double c = std::round(extent[a] / side);
        g.cells[a] = c < 1.0 ? 1 : static_cast<std::size_t>(c);
        g.cell_size[a] = extent[a] / static_cast<double>(g.cells[a]);
    }
    return g;
}

/// Center of the cell containing p; p is clamped into the box first.
inline Vec3 grid_center(const GridSpec& g, const Vec3& p) {
    std::array<std::size_t, 3> idx{};
    for (std::size_t a = 0; a < 3; ++a) {
        const double clamped = std::clamp(p[a], g.bbox_min[a], g.bbox_max[a]);
        const double f = std::floor((clamped - g.bbox_min[a]) / g.cell_size[a]);
        const auto last = static_cast<double>(g.cells[a] - 1);
        idx[a] = static_cast<std::size_t>(std::clamp(f, 0.0, last));
    }
    return g.cell_center(idx[0], idx[1], idx[2]);
}

}  // namespace neuroloc
