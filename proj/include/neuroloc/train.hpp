#pragma once

// Training loop, evaluation metrics, reports, and model persistence.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuroloc/checkpoint.hpp"
#include "neuroloc/config.hpp"
#include "neuroloc/data.hpp"
#include "neuroloc/model.hpp"
#include "neuroloc/optim.hpp"

namespace neuroloc {

struct LossLogRow {
    std::size_t epoch = 0;
    double loss = 0.0;
    double position_term = 0.0;
    double rotation_term = 0.0;
    double grid_term = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
};

struct TrainResult {
    std::vector<LossLogRow> log;
    std::size_t steps = 0;
};

inline PoseTargets make_targets(const std::vector<SceneSample>& samples, std::size_t begin,
                                std::size_t end) {
    PoseTargets t{Matrix(end - begin, 3), Matrix(end - begin, 4), Matrix(end - begin, 3)};
    for (std::size_t i = begin; i < end; ++i) {
        const SceneSample& s = samples[i];
        const auto q = s.pose.orientation.canonical().components();
        for (std::size_t c = 0; c < 3; ++c) {
            t.position(i - begin, c) = s.pose.position[c];
            t.grid(i - begin, c) = s.grid_center[c];
        }
        for (std::size_t c = 0; c < 4; ++c) t.rotation(i - begin, c) = q[c];
    }
    return t;
}

inline std::vector<double> timestamps_of(const std::vector<SceneSample>& samples, std::size_t begin,
                                         std::size_t end) {
    std::vector<double> ts;
    ts.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) ts.push_back(samples[i].timestamp);
    return ts;
}

/// Grid over the training bounding box; fills each sample's grid truth.
inline GridSpec prepare_grid(std::vector<SceneSample>& samples, std::size_t cells) {
    const auto [lo, hi] = bounding_box(samples);
    GridSpec spec = grid_spec_build(lo, hi, cells);
    assign_grid_truth(samples, spec);
    return spec;
}

/// Splits one epoch into batches: a seeded shuffle cut into `batch`-sized
/// groups, each group re-sorted by timestamp so the Hebbian memory is still
/// written in time order.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                           std::mt19937_64& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t begin = 0; begin < n; begin += batch) {
        const auto first = order.begin() + static_cast<std::ptrdiff_t>(begin);
        const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(n, begin + batch));
        std::vector<std::size_t> b(first, last);
        std::sort(b.begin(), b.end());
        out.push_back(std::move(b));
    }
    return out;
}

inline std::vector<SceneSample> gather(const std::vector<SceneSample>& samples,
                                       const std::vector<std::size_t>& idx) {
    std::vector<SceneSample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(samples[i]);
    return out;
}

/// Runs epochs of time-ordered batches. The Hebbian memory is reset at each
/// epoch start and carried across batches inside the epoch. After the last
/// step the memory is rebuilt from the full training split with the final
/// parameters and left frozen for evaluation. `samples` must be time-sorted
/// with grid truth assigned; `shuffle_seed` fixes the batch composition.
inline TrainResult train(NeuroLocModel& model, const TrainConfig& cfg,
                         const std::vector<SceneSample>& samples, std::uint64_t shuffle_seed = 0,
                         const std::function<void(const LossLogRow&)>& on_epoch = {}) {
    if (samples.empty()) throw ContractError("train: empty training set");
    for (std::size_t i = 1; i < samples.size(); ++i) {
        if (samples[i].timestamp < samples[i - 1].timestamp) {
            throw ContractError("train: samples are not time-sorted");
        }
    }
    std::vector<Parameter*> params = model.parameters();
    AdamState adam;
    adam.config.learning_rate = cfg.learning_rate;
    adam.config.weight_decay = cfg.weight_decay;
    std::mt19937_64 rng(shuffle_seed);

    TrainResult result;
    const std::size_t n = samples.size();
    const bool by_steps = cfg.steps > 0;
    for (std::size_t epoch = 1;; ++epoch) {
        if (by_steps ? result.steps >= cfg.steps : epoch > cfg.epochs) break;
        model.memory.reset();
        LossLogRow row;
        row.epoch = epoch;
        std::size_t batches = 0;
        for (const auto& idx : epoch_batches(n, cfg.batch, rng)) {
            if (by_steps && result.steps >= cfg.steps) break;
            const std::vector<SceneSample> batch = gather(samples, idx);
            ad::Graph g;
            const std::vector<double> ts = timestamps_of(batch, 0, batch.size());
            Prediction pred = model.forward(g, g.constant(feature_matrix(batch, 0, batch.size())),
                                            ts, Mode::Train);
            LossBreakdown lb = model.loss(g, pred, make_targets(batch, 0, batch.size()));
            const double loss = lb.total.value()[0];
            if (!std::isfinite(loss)) {
                throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch));
            }
            zero_grads(params);
            g.backward(lb.total);
            adam_step(params, adam);
            ++result.steps;
            ++batches;
            row.loss += loss;
            row.position_term += lb.position_term;
            row.rotation_term += lb.rotation_term;
            row.grid_term += lb.grid_term;
        }
        const double k = static_cast<double>(std::max<std::size_t>(batches, 1));
        row.loss /= k;
        row.position_term /= k;
        row.rotation_term /= k;
        row.grid_term /= k;
        row.alpha = model.loss_weights.alpha.value[0];
        row.beta = model.loss_weights.beta.value[0];
        row.gamma = model.loss_weights.gamma.value[0];
        result.log.push_back(row);
        if (on_epoch) on_epoch(row);
    }
    model.consolidate(feature_matrix(samples, 0, n));
    return result;
}

inline void write_loss_log(std::ostream& out, const std::vector<LossLogRow>& log) {
    out << "epoch,loss,pos_term,rot_term,grid_term,alpha,beta,gamma\n";
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const LossLogRow& r : log) {
        out << r.epoch << ',' << r.loss << ',' << r.position_term << ',' << r.rotation_term << ','
            << r.grid_term << ',' << r.alpha << ',' << r.beta << ',' << r.gamma << '\n';
    }
}

// ---------------------------------------------------------------------------
// Evaluation

struct PosePrediction {
    Pose pose;
    Vec3 grid{0.0, 0.0, 0.0};
};

/// Eval-mode forward (frozen memory, no dropout) in fixed-size chunks.
inline std::vector<PosePrediction> predict(NeuroLocModel& model,
                                           const std::vector<SceneSample>& samples,
                                           std::size_t chunk = 64) {
    std::vector<PosePrediction> out;
    out.reserve(samples.size());
    for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
        const std::size_t end = std::min(samples.size(), begin + chunk);
        ad::Graph g;
        const std::vector<double> ts = timestamps_of(samples, begin, end);
        Prediction p =
            model.forward(g, g.constant(feature_matrix(samples, begin, end)), ts, Mode::Eval);
        for (std::size_t r = 0; r < end - begin; ++r) {
            PosePrediction pp;
            const Matrix& pos = p.position.value();
            const Matrix& rot = p.rotation_raw.value();
            pp.pose.position = {pos(r, 0), pos(r, 1), pos(r, 2)};
            pp.pose.orientation = quat_normalize({rot(r, 0), rot(r, 1), rot(r, 2), rot(r, 3)});
            if (p.grid.valid()) {
                const Matrix& gr = p.grid.value();
                pp.grid = {gr(r, 0), gr(r, 1), gr(r, 2)};
            }
            out.push_back(pp);
        }
    }
    return out;
}

/// Lower-middle element for even counts; 0 for an empty list.
inline double median_lower(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = (v.size() - 1) / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    return v[mid];
}

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct SplitMetrics {
    std::string name;
    double median_position = 0.0;     ///< L2, scene units
    double mean_position = 0.0;
    double median_orientation = 0.0;  ///< degrees
    double mean_orientation = 0.0;
    double mean_position_l1 = 0.0;    ///< the training-loss norm, for reference
    std::vector<double> position_errors;
    std::vector<double> orientation_errors;
};

struct MetricsReport {
    int schema_version = 1;
    std::vector<SplitMetrics> splits;
    nlohmann::json config = nlohmann::json::object();
    /// Wall time; kept out of the machine-readable report unless asked for
    /// so repeated runs produce identical files.
    double runtime_seconds = 0.0;

    const SplitMetrics* split(const std::string& name) const {
        for (const SplitMetrics& s : splits)
            if (s.name == name) return &s;
        return nullptr;
    }
};

inline SplitMetrics score_predictions(const std::string& name,
                                      const std::vector<PosePrediction>& preds,
                                      const std::vector<SceneSample>& truth) {
    if (preds.size() != truth.size()) {
        throw DimensionError("score_predictions: " + std::to_string(preds.size()) +
                             " predictions for " + std::to_string(truth.size()) + " samples");
    }
    SplitMetrics m;
    m.name = name;
    std::vector<double> l1;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Vec3& p = preds[i].pose.position;
        const Vec3& t = truth[i].pose.position;
        m.position_errors.push_back(position_error_l2(p, t));
        l1.push_back(std::abs(p[0] - t[0]) + std::abs(p[1] - t[1]) + std::abs(p[2] - t[2]));
        m.orientation_errors.push_back(
            angular_error_deg(preds[i].pose.orientation, truth[i].pose.orientation));
    }
    m.median_position = median_lower(m.position_errors);
    m.mean_position = mean_of(m.position_errors);
    m.median_orientation = median_lower(m.orientation_errors);
    m.mean_orientation = mean_of(m.orientation_errors);
    m.mean_position_l1 = mean_of(l1);
    return m;
}

inline SplitMetrics evaluate(NeuroLocModel& model, const std::vector<SceneSample>& samples,
                             const std::string& name) {
    return score_predictions(name, predict(model, samples), samples);
}

// ---------------------------------------------------------------------------
// Reports

/// "<pos>m, <deg>°" with two decimals.
inline std::string format_pose_error(double position, double degrees) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2fm, %.2f°", position, degrees);
    return buf;
}

inline std::string report_table(const MetricsReport& r) {
    std::ostringstream out;
    out << "split      median              mean\n";
    for (const SplitMetrics& s : r.splits) {
        std::string name = s.name;
        name.resize(std::max<std::size_t>(name.size(), 10), ' ');
        std::string median = format_pose_error(s.median_position, s.median_orientation);
        // the degree sign is two bytes but one column
        median.resize(std::max<std::size_t>(median.size(), 21), ' ');
        out << name << ' ' << median << format_pose_error(s.mean_position, s.mean_orientation)
            << "  (n=" << s.position_errors.size() << ")\n";
    }
    out << "position error: euclidean; orientation error: 2*acos(|<q,q'>|)\n";
    return out.str();
}

inline nlohmann::json report_json(const MetricsReport& r, bool include_runtime = false) {
    nlohmann::json splits = nlohmann::json::array();
    for (const SplitMetrics& s : r.splits) {
        splits.push_back({{"name", s.name},
                          {"count", s.position_errors.size()},
                          {"median_position", s.median_position},
                          {"mean_position", s.mean_position},
                          {"median_orientation_deg", s.median_orientation},
                          {"mean_orientation_deg", s.mean_orientation},
                          {"mean_position_l1", s.mean_position_l1},
                          {"position_errors", s.position_errors},
                          {"orientation_errors_deg", s.orientation_errors}});
    }
    nlohmann::json j{{"schema_version", r.schema_version},
                     {"position_metric", "l2"},
                     {"orientation_metric", "2*acos(|<q,q'>|) degrees"},
                     {"splits", splits},
                     {"config", r.config}};
    if (include_runtime) j["runtime_seconds"] = r.runtime_seconds;
    return j;
}

inline MetricsReport parse_metrics_json(const nlohmann::json& j) {
    MetricsReport r;
    try {
        r.schema_version = j.at("schema_version").get<int>();
        if (r.schema_version != 1) {
            throw FormatError("metrics: unknown schema_version " + std::to_string(r.schema_version));
        }
        r.config = j.value("config", nlohmann::json::object());
        r.runtime_seconds = j.value("runtime_seconds", 0.0);
        for (const auto& s : j.at("splits")) {
            SplitMetrics m;
            m.name = s.at("name").get<std::string>();
            m.median_position = s.at("median_position").get<double>();
            m.mean_position = s.at("mean_position").get<double>();
            m.median_orientation = s.at("median_orientation_deg").get<double>();
            m.mean_orientation = s.at("mean_orientation_deg").get<double>();
            m.mean_position_l1 = s.at("mean_position_l1").get<double>();
            m.position_errors = s.at("position_errors").get<std::vector<double>>();
            m.orientation_errors = s.at("orientation_errors_deg").get<std::vector<double>>();
            r.splits.push_back(std::move(m));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metrics: ") + e.what());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Model persistence

inline constexpr const char* kMemoryParameterName = "hebbian.memory";

inline void save_model(const std::filesystem::path& dir, NeuroLocModel& model, const Config& cfg,
                       const nlohmann::json& metric_history = nlohmann::json::array(),
                       bool include_memory = false) {
    std::vector<Parameter*> params = model.parameters();
    std::vector<const Parameter*> out(params.begin(), params.end());
    Parameter memory(kMemoryParameterName, model.memory.state);
    if (include_memory && model.config().use_hebbian) out.push_back(&memory);
    save_checkpoint(dir, out, to_json(cfg), metric_history);
}

struct LoadedModel {
    Config config;
    NeuroLocModel model;
    bool has_memory = false;
};

/// Rebuilds the model from the config snapshot, then restores parameters.
inline LoadedModel load_model(const std::filesystem::path& dir) {
    const Checkpoint ck = load_checkpoint(dir);
    LoadedModel out;
    out.config = config_from_json(ck.config);
    out.model = NeuroLocModel(out.config.model);
    Parameter memory(kMemoryParameterName, Matrix(out.model.memory.dim(), out.model.memory.dim()));
    std::vector<Parameter*> params = out.model.parameters();
    std::vector<Parameter*> optional;
    if (out.config.model.use_hebbian) optional.push_back(&memory);
    restore_parameters(ck, params, optional);
    for (const Parameter& p : ck.parameters) out.has_memory = out.has_memory || p.name == memory.name;
    if (out.has_memory) out.model.memory.state = memory.value;
    return out;
}

}  // namespace neuroloc
