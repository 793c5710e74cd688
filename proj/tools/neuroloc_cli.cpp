// neuroloc: generate synthetic scenes, train, evaluate, infer and inspect.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "neuroloc/neuroloc.hpp"

namespace fs = std::filesystem;
using namespace neuroloc;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
};

Config effective_config(const Globals& g) {
    Config c = g.config_path.empty() ? Config{} : load_config(g.config_path);
    if (g.seed) {
        c.seed = *g.seed;
        c.model.seed = *g.seed;
    }
    return c;
}

std::vector<SceneSample> read_csv(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw FormatError("cannot open " + p.string());
    try {
        return parse_trajectory_csv(in);
    } catch (const FormatError& e) {
        throw FormatError(p.string() + ": " + e.what());
    }
}

void write_csv(const fs::path& p, const std::vector<SceneSample>& samples) {
    std::ofstream out(p);
    if (!out) throw FormatError("cannot write " + p.string());
    write_trajectory_csv(out, samples);
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw FormatError("cannot write " + p.string());
    out << text;
}

/// A directory resolves to its train.csv / test.csv; a file is one split
/// named after its stem.
std::vector<std::pair<std::string, fs::path>> resolve_splits(const fs::path& data) {
    std::vector<std::pair<std::string, fs::path>> out;
    if (fs::is_directory(data)) {
        for (const char* name : {"train", "test"}) {
            const fs::path p = data / (std::string(name) + ".csv");
            if (fs::exists(p)) out.emplace_back(name, p);
        }
        if (out.empty()) throw FormatError(data.string() + ": no train.csv or test.csv");
    } else {
        out.emplace_back(data.stem().string(), data);
    }
    return out;
}

void require_features(const std::vector<SceneSample>& samples, std::size_t dim, const fs::path& p) {
    for (const SceneSample& s : samples) {
        if (s.features.size() != dim) {
            throw DimensionError(p.string() + ": samples carry " + std::to_string(s.features.size()) +
                                 " features, model expects " + std::to_string(dim));
        }
    }
}

nlohmann::json log_to_json(const std::vector<LossLogRow>& log) {
    nlohmann::json j = nlohmann::json::array();
    for (const LossLogRow& r : log) {
        j.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"pos_term", r.position_term},
                     {"rot_term", r.rotation_term}, {"grid_term", r.grid_term},
                     {"alpha", r.alpha}, {"beta", r.beta}, {"gamma", r.gamma}});
    }
    return j;
}

/// Loads a checkpoint and makes sure a Hebbian model has a frozen memory,
/// rebuilding it from `replay` when the checkpoint carries none.
LoadedModel open_model(const fs::path& checkpoint, const std::string& replay) {
    LoadedModel lm = load_model(checkpoint);
    if (!replay.empty()) {
        std::vector<SceneSample> samples = read_csv(replay);
        require_features(samples, lm.config.model.input_dim, replay);
        lm.model.consolidate(feature_matrix(samples, 0, samples.size()));
        lm.has_memory = true;
    }
    if (lm.config.model.use_hebbian && !lm.has_memory) {
        throw ContractError("checkpoint has no Hebbian memory; pass --replay <train.csv>");
    }
    return lm;
}

void print_pose_row(std::ostream& out, double timestamp, const Pose& p) {
    const auto& q = p.orientation;
    out << "timestamp,x,y,z,qw,qx,qy,qz\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", timestamp,
                  p.position[0], p.position[1], p.position[2], q.w(), q.x(), q.y(), q.z());
    out << buf;
}

// ---------------------------------------------------------------------------

int cmd_generate(const Globals& g) {
    const Config c = effective_config(g);
    const Dataset ds = synth_scene(c.scene, c.model.input_dim, c.seed);
    const fs::path out = g.out;
    fs::create_directories(out);
    write_csv(out / "train.csv", ds.train);
    write_csv(out / "test.csv", ds.test);
    write_text(out / "config.json", to_json(c).dump(2) + "\n");
    std::cout << "wrote " << ds.train.size() << " train and " << ds.test.size()
              << " held-out samples to " << out.string() << "\n";
    return 0;
}

int cmd_train(const Globals& g, const std::string& data, bool no_memory) {
    const Config c = effective_config(g);
    std::vector<SceneSample> samples;
    if (data.empty()) {
        samples = synth_scene(c.scene, c.model.input_dim, c.seed).train;
    } else {
        const auto splits = resolve_splits(data);
        samples = read_csv(splits.front().second);
        require_features(samples, c.model.input_dim, splits.front().second);
    }
    if (samples.empty()) throw ContractError("train: no training samples");
    prepare_grid(samples, c.train.grids);

    NeuroLocModel model(c.model);
    const fs::path out = g.out;
    fs::create_directories(out);
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult r = train(model, c.train, samples, c.seed, [](const LossLogRow& row) {
        if (row.epoch == 1 || row.epoch % 50 == 0) {
            std::cerr << "epoch " << row.epoch << " loss " << row.loss << "\n";
        }
    });
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    {
        std::ofstream log(out / "loss_log.csv");
        if (!log) throw FormatError("cannot write " + (out / "loss_log.csv").string());
        write_loss_log(log, r.log);
    }
    save_model(out / "checkpoint", model, c, log_to_json(r.log), !no_memory);
    std::cout << "trained " << r.steps << " steps (" << r.log.size() << " epochs) in " << seconds
              << " s; checkpoint at " << (out / "checkpoint").string() << "\n";
    return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& data,
             const std::string& replay, const std::string& format) {
    LoadedModel lm = open_model(checkpoint, replay);
    MetricsReport report;
    report.config = to_json(lm.config);
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& [name, path] : resolve_splits(data)) {
        const std::vector<SceneSample> samples = read_csv(path);
        require_features(samples, lm.config.model.input_dim, path);
        report.splits.push_back(evaluate(lm.model, samples, name));
    }
    report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const fs::path out = g.out;
    fs::create_directories(out);
    write_text(out / "metrics.json", report_json(report).dump(2) + "\n");
    if (format == "json") {
        std::cout << report_json(report, true).dump(2) << "\n";
    } else {
        std::cout << report_table(report);
    }
    return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& data, std::size_t row,
              const std::vector<double>& features, const std::string& replay) {
    LoadedModel lm = open_model(checkpoint, replay);
    SceneSample s;
    if (!features.empty()) {
        s.features = features;
    } else {
        if (data.empty()) throw ContractError("infer: pass --features or --data");
        const std::vector<SceneSample> samples = read_csv(data);
        if (row >= samples.size()) {
            throw ContractError("infer: row " + std::to_string(row) + " out of range (" +
                                std::to_string(samples.size()) + " samples)");
        }
        s = samples[row];
    }
    require_features({s}, lm.config.model.input_dim, data.empty() ? "--features" : data);
    const std::vector<PosePrediction> p = predict(lm.model, {s});
    print_pose_row(std::cout, s.timestamp, p.front().pose);
    return 0;
}

int cmd_saliency(const Globals& g, const std::string& checkpoint, const std::string& data,
                 std::size_t row, const std::string& replay, std::size_t top) {
    LoadedModel lm = open_model(checkpoint, replay);
    const std::vector<SceneSample> samples = read_csv(data);
    require_features(samples, lm.config.model.input_dim, data);
    if (row >= samples.size()) throw ContractError("saliency: row out of range");
    const Matrix m = saliency(lm.model, Matrix::row(samples[row].features), samples[row].timestamp);

    const fs::path out = g.out;
    fs::create_directories(out);
    std::ofstream csv(out / "saliency.csv");
    if (!csv) throw FormatError("cannot write " + (out / "saliency.csv").string());
    csv << "dim,saliency\n";
    csv.precision(9);
    std::vector<std::size_t> order(m.cols());
    for (std::size_t i = 0; i < m.cols(); ++i) {
        csv << i << ',' << m[i] << '\n';
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m[a] > m[b]; });
    std::cout << "top input dims:";
    for (std::size_t i = 0; i < std::min(top, order.size()); ++i) {
        std::cout << ' ' << order[i] << '(' << m[order[i]] << ')';
    }
    std::cout << "\nwrote " << (out / "saliency.csv").string() << "\n";
    return 0;
}

int cmd_gridspec(const std::vector<double>& lo, const std::vector<double>& hi, std::size_t cells,
                 const std::vector<double>& point) {
    const GridSpec s = grid_spec_build({lo[0], lo[1], lo[2]}, {hi[0], hi[1], hi[2]}, cells);
    std::cout << "cells: " << s.cells[0] << 'x' << s.cells[1] << 'x' << s.cells[2] << " (requested "
              << s.requested_cells << ", built " << s.total_cells() << ")\n";
    std::cout << "cell_size: " << s.cell_size[0] << ' ' << s.cell_size[1] << ' ' << s.cell_size[2]
              << "\n";
    if (!point.empty()) {
        const Vec3 c = grid_center(s, {point[0], point[1], point[2]});
        std::cout << "center: (" << c[0] << ',' << c[1] << ',' << c[2] << ")\n";
        return 0;
    }
    std::cout << "centers:\n";
    for (const Vec3& c : s.centers()) std::cout << "  (" << c[0] << ',' << c[1] << ',' << c[2] << ")\n";
    return 0;
}

int cmd_convert(const Globals& g, const std::vector<std::string>& poses, bool world_to_camera) {
    const Config c = effective_config(g);
    std::vector<SceneSample> samples;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        std::ifstream in(poses[i]);
        if (!in) throw FormatError("cannot open " + poses[i]);
        std::stringstream text;
        text << in.rdbuf();
        SceneSample s;
        try {
            s.pose = parse_pose_matrix(text.str());
        } catch (const FormatError& e) {
            throw FormatError(poses[i] + ": " + e.what());
        }
        if (world_to_camera) s.pose = invert_pose(s.pose);
        s.timestamp = static_cast<double>(i) * c.scene.frame_interval;
        samples.push_back(std::move(s));
    }
    const fs::path out = g.out;
    fs::create_directories(out);
    write_csv(out / "trajectory.csv", samples);
    std::cout << "wrote " << samples.size() << " poses to " << (out / "trajectory.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neuroloc: Hebbian memory + direction attention pose regression"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "flat JSON config file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "overrides the config seed");
    app.add_option("--out", g.out, "output directory")->capture_default_str();

    auto* generate = app.add_subcommand("generate", "write a synthetic scene (train.csv, test.csv)");

    std::string data, checkpoint, replay, format = "table";
    bool no_memory = false;
    auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint/ and loss_log.csv");
    train_cmd->add_option("--data", data, "train.csv or a directory holding one (default: synthesize)");
    train_cmd->add_flag("--no-memory", no_memory, "do not store the frozen Hebbian memory");

    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint; writes metrics.json");
    eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--data", data, "CSV file or directory with train.csv/test.csv")
        ->required()
        ->check(CLI::ExistingPath);
    eval_cmd->add_option("--replay", replay, "rebuild the Hebbian memory from this CSV")
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--format", format)->check(CLI::IsMember({"table", "json"}));

    std::size_t row = 0;
    std::vector<double> features;
    auto* infer_cmd = app.add_subcommand("infer", "predict the pose of one sample");
    infer_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingDirectory);
    auto* infer_data = infer_cmd->add_option("--data", data)->check(CLI::ExistingFile);
    infer_cmd->add_option("--row", row, "sample index in --data");
    auto* infer_features =
        infer_cmd->add_option("--features", features, "comma-separated input features")->delimiter(',');
    infer_data->excludes(infer_features);
    infer_cmd->add_option("--replay", replay)->check(CLI::ExistingFile);

    std::size_t top = 10;
    auto* sal_cmd = app.add_subcommand("saliency", "per-input-dimension saliency; writes saliency.csv");
    sal_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingDirectory);
    sal_cmd->add_option("--data", data)->required()->check(CLI::ExistingFile);
    sal_cmd->add_option("--row", row);
    sal_cmd->add_option("--replay", replay)->check(CLI::ExistingFile);
    sal_cmd->add_option("--top", top, "dimensions to print");

    std::vector<double> lo, hi, point;
    std::size_t cells = 0;
    auto* grid_cmd = app.add_subcommand("gridspec", "print the equidistant grid for a box");
    grid_cmd->add_option("--min", lo, "x,y,z")->required()->delimiter(',')->expected(3);
    grid_cmd->add_option("--max", hi, "x,y,z")->required()->delimiter(',')->expected(3);
    grid_cmd->add_option("--cells", cells, "requested cell count")->required();
    grid_cmd->add_option("--point", point, "x,y,z: print only this point's cell center")
        ->delimiter(',')
        ->expected(3);

    std::vector<std::string> poses;
    bool world_to_camera = false;
    auto* convert_cmd = app.add_subcommand("convert", "pose files (4x4) to trajectory.csv");
    convert_cmd->add_option("poses", poses)->required()->check(CLI::ExistingFile);
    convert_cmd->add_flag("--world-to-camera", world_to_camera, "invert each pose first");

    for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code == 0) return 0;
        std::cerr << app.help();
        return 1;
    }

    try {
        if (*generate) return cmd_generate(g);
        if (*train_cmd) return cmd_train(g, data, no_memory);
        if (*eval_cmd) return cmd_eval(g, checkpoint, data, replay, format);
        if (*infer_cmd) return cmd_infer(checkpoint, data, row, features, replay);
        if (*sal_cmd) return cmd_saliency(g, checkpoint, data, row, replay, top);
        if (*grid_cmd) return cmd_gridspec(lo, hi, cells, point);
        if (*convert_cmd) return cmd_convert(g, poses, world_to_camera);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
