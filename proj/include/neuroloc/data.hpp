#pragma once

// Scene samples: synthetic trajectory generation, 4x4 pose-file parsing,
// and the trajectory CSV format
//     timestamp,x,y,z,qw,qx,qy,qz[,f0,f1,...]
// where the optional f<i> columns carry the sample's input features.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "neuroloc/config.hpp"
#include "neuroloc/errors.hpp"
#include "neuroloc/geometry.hpp"
#include "neuroloc/matrix.hpp"

namespace neuroloc {

struct SceneSample {
    std::vector<double> features;
    Pose pose;
    Vec3 grid_center{0.0, 0.0, 0.0};
    double timestamp = 0.0;
};

struct Dataset {
    std::vector<SceneSample> train;
    std::vector<SceneSample> test;
};

/// ḡ = center of the grid cell containing the sample's true position.
inline Vec3 grid_truth(const SceneSample& s, const GridSpec& spec) {
    return grid_center(spec, s.pose.position);
}

inline void assign_grid_truth(std::vector<SceneSample>& samples, const GridSpec& spec) {
    for (SceneSample& s : samples) s.grid_center = grid_truth(s, spec);
}

/// Tight axis-aligned box around the sample positions, padded by `pad` on
/// each side (and at least enough that no axis is flat).
inline std::pair<Vec3, Vec3> bounding_box(const std::vector<SceneSample>& samples,
                                          double pad = 1e-6) {
    if (samples.empty()) throw DimensionError("bounding_box: no samples");
    Vec3 lo = samples.front().pose.position, hi = lo;
    for (const SceneSample& s : samples)
        for (std::size_t a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], s.pose.position[a]);
            hi[a] = std::max(hi[a], s.pose.position[a]);
        }
    for (std::size_t a = 0; a < 3; ++a) {
        lo[a] -= pad;
        hi[a] += pad;
        if (hi[a] - lo[a] < 1e-3) {
            lo[a] -= 5e-4;
            hi[a] += 5e-4;
        }
    }
    return {lo, hi};
}

inline Matrix feature_matrix(const std::vector<SceneSample>& samples, std::size_t begin,
                             std::size_t end) {
    if (begin >= end) return {};
    const std::size_t width = samples[begin].features.size();
    Matrix m(end - begin, width);
    for (std::size_t i = begin; i < end; ++i) {
        if (samples[i].features.size() != width) {
            throw DimensionError("feature_matrix: ragged feature widths");
        }
        std::copy(samples[i].features.begin(), samples[i].features.end(),
                  m.row_span(i - begin).begin());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace detail {

struct TrajectoryPoint {
    Vec3 position;
    double yaw, pitch, roll;
};

inline UnitQuaternion orientation_from_euler(double yaw, double pitch, double roll) {
    const UnitQuaternion qz = quat_from_axis_angle({0, 0, 1}, yaw);
    const UnitQuaternion qy = quat_from_axis_angle({0, 1, 0}, pitch);
    const UnitQuaternion qx = quat_from_axis_angle({1, 0, 0}, roll);
    return quat_multiply(quat_multiply(qz, qy), qx).canonical();
}

inline std::vector<TrajectoryPoint> loop_trajectory(const SceneConfig& c) {
    const std::size_t n = c.samples;
    std::vector<TrajectoryPoint> out(n);
    Vec3 center{}, extent{};
    for (std::size_t a = 0; a < 3; ++a) {
        center[a] = 0.5 * (c.bbox_min[a] + c.bbox_max[a]);
        extent[a] = c.bbox_max[a] - c.bbox_min[a];
    }
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        const double phi = two_pi * t;
        TrajectoryPoint& p = out[i];
        p.position = {center[0] + 0.35 * extent[0] * std::cos(phi),
                      center[1] + 0.35 * extent[1] * std::sin(phi),
                      center[2] + 0.2 * extent[2] * std::sin(2.0 * phi)};
        // heading follows the tangent of the ellipse
        p.yaw = std::atan2(0.35 * extent[1] * std::cos(phi), -0.35 * extent[0] * std::sin(phi));
        p.pitch = 0.15 * std::sin(3.0 * phi);
        p.roll = 0.08 * std::sin(5.0 * phi);
    }
    return out;
}

inline std::vector<TrajectoryPoint> random_walk_trajectory(const SceneConfig& c,
                                                           std::mt19937_64& rng) {
    std::vector<TrajectoryPoint> out(c.samples);
    std::normal_distribution<double> step(0.0, 1.0);
    Vec3 pos{};
    Vec3 extent{};
    for (std::size_t a = 0; a < 3; ++a) {
        pos[a] = 0.5 * (c.bbox_min[a] + c.bbox_max[a]);
        extent[a] = c.bbox_max[a] - c.bbox_min[a];
    }
    double yaw = 0.0, pitch = 0.0, roll = 0.0;
    for (TrajectoryPoint& p : out) {
        p = {pos, yaw, pitch, roll};
        for (std::size_t a = 0; a < 3; ++a) {
            pos[a] += 0.01 * extent[a] * step(rng);
            // reflect at the walls
            if (pos[a] < c.bbox_min[a]) pos[a] = 2.0 * c.bbox_min[a] - pos[a];
            if (pos[a] > c.bbox_max[a]) pos[a] = 2.0 * c.bbox_max[a] - pos[a];
            pos[a] = std::clamp(pos[a], c.bbox_min[a], c.bbox_max[a]);
        }
        yaw += 0.05 * step(rng);
        pitch = std::clamp(pitch + 0.01 * step(rng), -0.4, 0.4);
        roll = std::clamp(roll + 0.01 * step(rng), -0.3, 0.3);
    }
    return out;
}

/// Boustrophedon sweep over x/y at mid height; heading follows the lane.
inline std::vector<TrajectoryPoint> grid_sweep_trajectory(const SceneConfig& c) {
    const std::size_t n = c.samples;
    const std::size_t lanes = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(n) / 4));
    const std::size_t per_lane = (n + lanes - 1) / lanes;
    std::vector<TrajectoryPoint> out(n);
    const double z = 0.5 * (c.bbox_min[2] + c.bbox_max[2]);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lane = i / per_lane;
        const double u = per_lane == 1 ? 0.5
                                       : static_cast<double>(i % per_lane) /
                                             static_cast<double>(per_lane - 1);
        const bool forward = lane % 2 == 0;
        const double fx = 0.1 + 0.8 * (forward ? u : 1.0 - u);
        const double fy = lanes == 1 ? 0.5
                                     : 0.1 + 0.8 * static_cast<double>(lane) /
                                                 static_cast<double>(lanes - 1);
        out[i].position = {c.bbox_min[0] + fx * (c.bbox_max[0] - c.bbox_min[0]),
                           c.bbox_min[1] + fy * (c.bbox_max[1] - c.bbox_min[1]), z};
        out[i].yaw = forward ? 0.0 : std::numbers::pi;
        out[i].pitch = 0.0;
        out[i].roll = 0.0;
    }
    return out;
}

}  // namespace detail

/// Random Fourier features of a pose: cos(Omega z + b) + noise, where z
/// stacks the position and the 9 rotation-matrix entries.
class PoseFeatureMap {
public:
    PoseFeatureMap(std::size_t dim, double position_scale, double rotation_scale,
                   std::mt19937_64& rng)
        : omega_(dim, 12), phase_(dim) {
        std::normal_distribution<double> n(0.0, 1.0);
        std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = 0; j < 12; ++j) {
                omega_(i, j) = n(rng) / (j < 3 ? position_scale : rotation_scale);
            }
            phase_[i] = u(rng);
        }
    }

    std::vector<double> operator()(const Pose& p) const {
        std::array<double, 12> z{};
        for (std::size_t a = 0; a < 3; ++a) z[a] = p.position[a];
        const Mat3 r = quat_to_matrix(p.orientation);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) z[3 + 3 * i + j] = r[i][j];
        std::vector<double> f(omega_.rows());
        for (std::size_t i = 0; i < f.size(); ++i) {
            double s = phase_[i];
            for (std::size_t j = 0; j < 12; ++j) s += omega_(i, j) * z[j];
            f[i] = std::cos(s);
        }
        return f;
    }

private:
    Matrix omega_;
    std::vector<double> phase_;
};

/// Deterministic scene from (cfg, feature width, seed). Samples are split
/// by trajectory segment: segment s is held out when s % holdout_every
/// equals holdout_every / 2 (so with holdout_every == 1 every segment is a
/// test segment and the train split is empty).
inline Dataset synth_scene(const SceneConfig& cfg, std::size_t feature_dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    PoseFeatureMap features(feature_dim, cfg.position_scale, cfg.rotation_scale, rng);
    std::vector<detail::TrajectoryPoint> traj;
    switch (cfg.trajectory) {
        case TrajectoryKind::Loop: traj = detail::loop_trajectory(cfg); break;
        case TrajectoryKind::RandomWalk: traj = detail::random_walk_trajectory(cfg, rng); break;
        case TrajectoryKind::GridSweep: traj = detail::grid_sweep_trajectory(cfg); break;
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    Dataset ds;
    const std::size_t n = traj.size();
    for (std::size_t i = 0; i < n; ++i) {
        SceneSample s;
        s.pose.position = traj[i].position;
        s.pose.orientation = detail::orientation_from_euler(traj[i].yaw, traj[i].pitch, traj[i].roll);
        s.timestamp = static_cast<double>(i) * cfg.frame_interval;
        s.features = features(s.pose);
        if (cfg.noise > 0.0)
            for (double& f : s.features) f += cfg.noise * noise(rng);
        const std::size_t segment = i * cfg.segments / n;
        const bool held_out = segment % cfg.holdout_every == cfg.holdout_every / 2;
        (held_out ? ds.test : ds.train).push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Pose files (16 whitespace-separated values, row-major 4x4)

inline Pose parse_pose_matrix(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::vector<double> v;
    std::string tok;
    while (in >> tok) {
        double x = 0.0;
        const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
        if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
            throw FormatError("pose matrix: unparseable token '" + tok + "'");
        }
        v.push_back(x);
    }
    if (v.size() != 16) {
        throw FormatError("pose matrix: expected 16 values, got " + std::to_string(v.size()));
    }
    for (std::size_t c = 0; c < 4; ++c) {
        const double want = c == 3 ? 1.0 : 0.0;
        if (std::abs(v[12 + c] - want) > 1e-6) {
            throw FormatError("pose matrix: bottom row is not (0, 0, 0, 1)");
        }
    }
    Mat3 r{};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) r[i][j] = v[4 * i + j];
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < 3; ++k) dot += r[k][i] * r[k][j];
            if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-3) {
                throw FormatError("pose matrix: rotation block is not orthonormal");
            }
        }
    const double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
                       r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                       r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if (det < 0.0) throw FormatError("pose matrix: rotation block is a reflection");
    return Pose{{v[3], v[7], v[11]}, matrix_to_quat(r)};
}

inline std::string render_pose_matrix(const Pose& p) {
    const Mat3 r = quat_to_matrix(p.orientation);
    std::ostringstream out;
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < 3; ++i) {
        out << r[i][0] << ' ' << r[i][1] << ' ' << r[i][2] << ' ' << p.position[i] << '\n';
    }
    out << "0 0 0 1\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Trajectory CSV

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        std::string_view field = line.substr(start, comma - start);
        while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
        while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
            field.remove_suffix(1);
        out.push_back(field);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace detail

/// Reads a trajectory CSV; rows come back stably sorted by timestamp with
/// canonical unit quaternions.
inline std::vector<SceneSample> parse_trajectory_csv(std::istream& in) {
    static constexpr std::array<std::string_view, 8> kRequired{"timestamp", "x",  "y",  "z",
                                                               "qw",        "qx", "qy", "qz"};
    std::string line;
    if (!std::getline(in, line)) throw FormatError("trajectory csv: empty input");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = detail::split_csv_line(line);
    std::map<std::string, std::size_t, std::less<>> column;
    for (std::size_t i = 0; i < header.size(); ++i) column.emplace(std::string(header[i]), i);
    std::array<std::size_t, 8> idx{};
    for (std::size_t k = 0; k < kRequired.size(); ++k) {
        auto it = column.find(kRequired[k]);
        if (it == column.end()) {
            throw FormatError("trajectory csv: missing column '" + std::string(kRequired[k]) + "'");
        }
        idx[k] = it->second;
    }
    std::vector<std::size_t> feature_cols;
    for (std::size_t f = 0;; ++f) {
        auto it = column.find("f" + std::to_string(f));
        if (it == column.end()) break;
        feature_cols.push_back(it->second);
    }

    std::vector<SceneSample> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = detail::split_csv_line(line);
        auto number = [&](std::size_t col, std::string_view name) {
            if (col >= fields.size()) {
                throw FormatError("trajectory csv: row " + std::to_string(line_no) +
                                  ": missing value for '" + std::string(name) + "'");
            }
            const std::string_view f = fields[col];
            double x = 0.0;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), x);
            if (f.empty() || ec != std::errc{} || ptr != f.data() + f.size() || !std::isfinite(x)) {
                throw FormatError("trajectory csv: row " + std::to_string(line_no) +
                                  ": cannot parse '" + std::string(f) + "' in column '" +
                                  std::string(name) + "'");
            }
            return x;
        };
        SceneSample s;
        s.timestamp = number(idx[0], kRequired[0]);
        s.pose.position = {number(idx[1], "x"), number(idx[2], "y"), number(idx[3], "z")};
        try {
            s.pose.orientation = quat_normalize({number(idx[4], "qw"), number(idx[5], "qx"),
                                                 number(idx[6], "qy"), number(idx[7], "qz")});
        } catch (const NumericError&) {
            throw FormatError("trajectory csv: row " + std::to_string(line_no) +
                              ": degenerate quaternion");
        }
        s.features.reserve(feature_cols.size());
        for (std::size_t f = 0; f < feature_cols.size(); ++f) {
            s.features.push_back(number(feature_cols[f], "f" + std::to_string(f)));
        }
        out.push_back(std::move(s));
    }
    std::stable_sort(out.begin(), out.end(), [](const SceneSample& a, const SceneSample& b) {
        return a.timestamp < b.timestamp;
    });
    return out;
}

inline void write_trajectory_csv(std::ostream& out, const std::vector<SceneSample>& samples) {
    const std::size_t width = samples.empty() ? 0 : samples.front().features.size();
    out << "timestamp,x,y,z,qw,qx,qy,qz";
    for (std::size_t f = 0; f < width; ++f) out << ",f" << f;
    out << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const SceneSample& s : samples) {
        const auto& q = s.pose.orientation.components();
        out << s.timestamp << ',' << s.pose.position[0] << ',' << s.pose.position[1] << ','
            << s.pose.position[2] << ',' << q[0] << ',' << q[1] << ',' << q[2] << ',' << q[3];
        for (std::size_t f = 0; f < width; ++f) out << ',' << s.features.at(f);
        out << '\n';
    }
}

}  // namespace neuroloc
