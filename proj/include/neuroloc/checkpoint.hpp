#pragma once

// Checkpoint directory layout:
//   manifest.json  format_version, dtype, parameter names and shapes (in
//                  payload order), config snapshot, metric history
//   params.bin     little-endian float32 values, concatenated in manifest order

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuroloc/autodiff.hpp"
#include "neuroloc/errors.hpp"

namespace neuroloc {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json metric_history = nlohmann::json::array();
    /// Values are exactly the float32 payload widened to double.
    std::vector<Parameter> parameters;
};

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    }
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, std::span<const Parameter* const> params,
                            const nlohmann::json& config = nlohmann::json::object(),
                            const nlohmann::json& metric_history = nlohmann::json::array()) {
    std::filesystem::create_directories(dir);
    nlohmann::json entries = nlohmann::json::array();
    std::vector<std::uint32_t> payload;
    for (const Parameter* p : params) {
        entries.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}});
        for (double v : p->value.data()) {
            const auto f = static_cast<float>(v);
            payload.push_back(detail::to_little_endian(std::bit_cast<std::uint32_t>(f)));
        }
    }
    const nlohmann::json manifest{{"format_version", kCheckpointFormatVersion},
                                  {"dtype", "float32"},
                                  {"byte_order", "little"},
                                  {"parameters", entries},
                                  {"config", config},
                                  {"metric_history", metric_history}};
    {
        std::ofstream out(dir / "manifest.json");
        if (!out) throw FormatError("checkpoint: cannot write " + (dir / "manifest.json").string());
        out << manifest.dump(2) << '\n';
    }
    std::ofstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw FormatError("checkpoint: cannot write " + (dir / "params.bin").string());
    bin.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(std::uint32_t)));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("checkpoint: missing " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
    }
    if (!manifest.contains("format_version")) throw FormatError("checkpoint: missing format_version");
    if (manifest["format_version"] != kCheckpointFormatVersion) {
        throw FormatError("checkpoint: unknown format version " + manifest["format_version"].dump());
    }
    if (manifest.value("dtype", "") != "float32") throw FormatError("checkpoint: dtype must be float32");

    std::ifstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw FormatError("checkpoint: missing " + (dir / "params.bin").string());
    const std::vector<char> bytes{std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>()};

    Checkpoint ck;
    ck.config = manifest.value("config", nlohmann::json::object());
    ck.metric_history = manifest.value("metric_history", nlohmann::json::array());
    std::size_t expected = 0;
    try {
        for (const auto& e : manifest.at("parameters")) {
            const auto shape = e.at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 2) throw FormatError("checkpoint: shapes must be 2-D");
            ck.parameters.emplace_back(e.at("name").get<std::string>(), Matrix(shape[0], shape[1]));
            expected += shape[0] * shape[1];
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad parameter table: ") + e.what());
    }
    if (bytes.size() != expected * sizeof(float)) {
        throw FormatError("checkpoint: payload length mismatch (manifest wants " +
                          std::to_string(expected * sizeof(float)) + " bytes, found " +
                          std::to_string(bytes.size()) + ")");
    }
    std::size_t offset = 0;
    for (Parameter& p : ck.parameters) {
        for (double& v : p.value.data()) {
            std::uint32_t raw;
            std::memcpy(&raw, bytes.data() + offset, sizeof raw);
            offset += sizeof raw;
            v = static_cast<double>(std::bit_cast<float>(detail::to_little_endian(raw)));
        }
    }
    return ck;
}

/// Copies checkpoint values into `params`. Names and shapes must match
/// exactly in both directions; `optional` names may be absent from the
/// checkpoint.
inline void restore_parameters(const Checkpoint& ck, std::span<Parameter* const> params,
                               std::span<Parameter* const> optional = {}) {
    std::map<std::string, const Parameter*> stored;
    for (const Parameter& p : ck.parameters) {
        if (!stored.emplace(p.name, &p).second) {
            throw FormatError("checkpoint: duplicate parameter '" + p.name + "'");
        }
    }
    std::size_t used = 0;
    auto copy_into = [&](Parameter* dst, bool required) {
        auto it = stored.find(dst->name);
        if (it == stored.end()) {
            if (required) {
                throw FormatError("checkpoint: shape reconciliation failed, parameter '" +
                                  dst->name + "' missing");
            }
            return;
        }
        if (!it->second->value.same_shape(dst->value)) {
            throw FormatError("checkpoint: shape reconciliation failed for '" + dst->name +
                              "': stored " + it->second->value.shape() + ", model " +
                              dst->value.shape());
        }
        dst->value = it->second->value;
        ++used;
    };
    for (Parameter* p : params) copy_into(p, true);
    for (Parameter* p : optional) copy_into(p, false);
    if (used != stored.size()) {
        for (const auto& [name, _] : stored) {
            bool known = false;
            for (Parameter* p : params) known = known || p->name == name;
            for (Parameter* p : optional) known = known || p->name == name;
            if (!known) {
                throw FormatError("checkpoint: shape reconciliation failed, unexpected parameter '" +
                                  name + "'");
            }
        }
    }
}

}  // namespace neuroloc
