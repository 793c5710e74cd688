#pragma once

// Flat key/value run configuration, stored as a JSON object.
// Unknown keys are rejected so typos surface immediately.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuroloc/errors.hpp"
#include "neuroloc/geometry.hpp"
#include "neuroloc/hebbian.hpp"

namespace neuroloc {

enum class EncoderKind { RandomProjection, Mlp };
enum class TrajectoryKind { Loop, RandomWalk, GridSweep };

struct ModelConfig {
    std::size_t input_dim = 64;
    std::size_t bins = 8;
    std::size_t bin_features = 256;
    std::size_t heads = 2;
    EncoderKind encoder = EncoderKind::Mlp;
    std::vector<std::size_t> encoder_hidden{256};
    double dropout = 0.5;
    bool use_hebbian = true;
    bool use_grid = true;
    bool use_direction = true;
    HebbianUpdateMode hebbian_mode = HebbianUpdateMode::Incremental;
    double eta_raw0 = 0.0;
    double readout_gain0 = 0.1;
    double alpha0 = 0.0;
    double beta0 = -3.0;
    double gamma0 = 0.0;
    std::uint64_t seed = 0;

    std::size_t feature_dim() const { return bins * bin_features; }
};

struct TrainConfig {
    double learning_rate = 3e-5;
    double weight_decay = 5e-3;
    std::size_t batch = 128;
    std::size_t epochs = 1200;
    /// Optimizer steps; 0 means run `epochs` full epochs.
    std::size_t steps = 0;
    std::size_t grids = 40;
};

struct SceneConfig {
    TrajectoryKind trajectory = TrajectoryKind::Loop;
    std::size_t samples = 500;
    Vec3 bbox_min{-2.0, -2.0, 0.0};
    Vec3 bbox_max{2.0, 2.0, 1.0};
    double noise = 0.01;
    std::size_t segments = 25;
    std::size_t holdout_every = 5;
    double position_scale = 1.0;
    double rotation_scale = 1.0;
    double frame_interval = 0.1;
};

struct Config {
    ModelConfig model;
    TrainConfig train;
    SceneConfig scene;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::string to_string(EncoderKind k) {
    return k == EncoderKind::Mlp ? "mlp" : "random-projection";
}
inline EncoderKind encoder_from(const std::string& s) {
    if (s == "mlp") return EncoderKind::Mlp;
    if (s == "random-projection") return EncoderKind::RandomProjection;
    throw FormatError("config: unknown encoder '" + s + "'");
}
inline std::string to_string(TrajectoryKind k) {
    switch (k) {
        case TrajectoryKind::Loop: return "loop";
        case TrajectoryKind::RandomWalk: return "random-walk";
        case TrajectoryKind::GridSweep: return "grid-sweep";
    }
    return "loop";
}
inline TrajectoryKind trajectory_from(const std::string& s) {
    if (s == "loop") return TrajectoryKind::Loop;
    if (s == "random-walk") return TrajectoryKind::RandomWalk;
    if (s == "grid-sweep") return TrajectoryKind::GridSweep;
    throw FormatError("config: unknown trajectory '" + s + "'");
}
inline std::string to_string(HebbianUpdateMode m) {
    return m == HebbianUpdateMode::Incremental ? "incremental" : "literal";
}
inline HebbianUpdateMode hebbian_mode_from(const std::string& s) {
    if (s == "incremental") return HebbianUpdateMode::Incremental;
    if (s == "literal") return HebbianUpdateMode::Literal;
    throw FormatError("config: unknown hebbian_mode '" + s + "'");
}

}  // namespace detail

inline nlohmann::json to_json(const Config& c) {
    const ModelConfig& m = c.model;
    const TrainConfig& t = c.train;
    const SceneConfig& s = c.scene;
    return nlohmann::json{
        {"seed", c.seed},
        {"input_dim", m.input_dim},
        {"feature_dim", m.feature_dim()},
        {"bins", m.bins},
        {"bin_features", m.bin_features},
        {"heads", m.heads},
        {"encoder", detail::to_string(m.encoder)},
        {"encoder_hidden", m.encoder_hidden},
        {"dropout", m.dropout},
        {"use_hebbian", m.use_hebbian},
        {"use_grid", m.use_grid},
        {"use_direction", m.use_direction},
        {"hebbian_mode", detail::to_string(m.hebbian_mode)},
        {"eta_raw0", m.eta_raw0},
        {"readout_gain0", m.readout_gain0},
        {"alpha0", m.alpha0},
        {"beta0", m.beta0},
        {"gamma0", m.gamma0},
        {"lr", t.learning_rate},
        {"weight_decay", t.weight_decay},
        {"batch", t.batch},
        {"epochs", t.epochs},
        {"steps", t.steps},
        {"grids", t.grids},
        {"trajectory", detail::to_string(s.trajectory)},
        {"samples", s.samples},
        {"bbox_min", s.bbox_min},
        {"bbox_max", s.bbox_max},
        {"noise", s.noise},
        {"segments", s.segments},
        {"holdout_every", s.holdout_every},
        {"position_scale", s.position_scale},
        {"rotation_scale", s.rotation_scale},
        {"frame_interval", s.frame_interval},
    };
}

/// Overlays the keys present in `j` onto `base` and validates the result.
inline Config config_from_json(const nlohmann::json& j, Config base = {}) {
    if (!j.is_object()) throw FormatError("config: expected a JSON object");
    Config c = std::move(base);
    ModelConfig& m = c.model;
    TrainConfig& t = c.train;
    SceneConfig& s = c.scene;
    std::size_t feature_dim = 0;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "input_dim") m.input_dim = v.get<std::size_t>();
            else if (key == "feature_dim") feature_dim = v.get<std::size_t>();
            else if (key == "bins") m.bins = v.get<std::size_t>();
            else if (key == "bin_features") m.bin_features = v.get<std::size_t>();
            else if (key == "heads") m.heads = v.get<std::size_t>();
            else if (key == "encoder") m.encoder = detail::encoder_from(v.get<std::string>());
            else if (key == "encoder_hidden") {
                m.encoder_hidden = v.is_array() ? v.get<std::vector<std::size_t>>()
                                                : std::vector<std::size_t>{v.get<std::size_t>()};
            }
            else if (key == "dropout") m.dropout = v.get<double>();
            else if (key == "use_hebbian") m.use_hebbian = v.get<bool>();
            else if (key == "use_grid") m.use_grid = v.get<bool>();
            else if (key == "use_direction") m.use_direction = v.get<bool>();
            else if (key == "hebbian_mode") m.hebbian_mode = detail::hebbian_mode_from(v.get<std::string>());
            else if (key == "eta_raw0") m.eta_raw0 = v.get<double>();
            else if (key == "readout_gain0") m.readout_gain0 = v.get<double>();
            else if (key == "alpha0") m.alpha0 = v.get<double>();
            else if (key == "beta0") m.beta0 = v.get<double>();
            else if (key == "gamma0") m.gamma0 = v.get<double>();
            else if (key == "lr") t.learning_rate = v.get<double>();
            else if (key == "weight_decay") t.weight_decay = v.get<double>();
            else if (key == "batch") t.batch = v.get<std::size_t>();
            else if (key == "epochs") t.epochs = v.get<std::size_t>();
            else if (key == "steps") t.steps = v.get<std::size_t>();
            else if (key == "grids") t.grids = v.get<std::size_t>();
            else if (key == "trajectory") s.trajectory = detail::trajectory_from(v.get<std::string>());
            else if (key == "samples") s.samples = v.get<std::size_t>();
            else if (key == "bbox_min") s.bbox_min = v.get<Vec3>();
            else if (key == "bbox_max") s.bbox_max = v.get<Vec3>();
            else if (key == "noise") s.noise = v.get<double>();
            else if (key == "segments") s.segments = v.get<std::size_t>();
            else if (key == "holdout_every") s.holdout_every = v.get<std::size_t>();
            else if (key == "position_scale") s.position_scale = v.get<double>();
            else if (key == "rotation_scale") s.rotation_scale = v.get<double>();
            else if (key == "frame_interval") s.frame_interval = v.get<double>();
            else throw FormatError("config: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    m.seed = c.seed;
    if (feature_dim != 0 && feature_dim != m.feature_dim()) {
        throw FormatError("config: feature_dim " + std::to_string(feature_dim) +
                          " != bins * bin_features = " + std::to_string(m.feature_dim()));
    }
    if (m.bins == 0 || m.bin_features == 0 || m.heads == 0 || m.bin_features % m.heads != 0) {
        throw FormatError("config: bin_features must be a positive multiple of heads");
    }
    if (m.dropout < 0.0 || m.dropout >= 1.0) throw FormatError("config: dropout must be in [0, 1)");
    if (t.batch == 0) throw FormatError("config: batch must be >= 1");
    if (t.grids == 0) throw FormatError("config: grids must be >= 1");
    if (s.samples == 0) throw FormatError("config: samples must be >= 1");
    if (s.noise < 0.0) throw FormatError("config: noise must be >= 0");
    if (s.segments == 0 || s.holdout_every == 0) {
        throw FormatError("config: segments and holdout_every must be >= 1");
    }
    return c;
}

inline Config load_config(const std::filesystem::path& path, Config base = {}) {
    std::ifstream in(path);
    if (!in) throw FormatError("config: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config: " + path.string() + ": " + e.what());
    }
    return config_from_json(j, std::move(base));
}

}  // namespace neuroloc
