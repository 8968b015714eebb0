#pragma once

// Checkpoint directory: index.json lists {name, file, dtype, shape, role} per
// tensor plus the full model config; each tensor is one OAVT file. Adapters
// keep their lora.* names, so they stay separate from base weights.

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "oav/dit.hpp"
#include "oav/tensor.hpp"

namespace oav {

namespace detail {

inline std::string tensor_filename(const std::string& name) {
    std::string f = name;
    for (char& c : f) {
        if (c == '/' || c == '\\') c = '_';
    }
    return f + ".oavt";
}

}  // namespace detail

inline void save_checkpoint(const std::string& dir, const ModelParams& params,
                            TensorDType dtype = TensorDType::f64) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const auto& [name, t] : params.tensors) {
        const std::string file = detail::tensor_filename(name);
        save_tensor((fs::path(dir) / file).string(), t, dtype);
        nlohmann::ordered_json shape_j = nlohmann::ordered_json::array();
        for (std::size_t e : t.shape) shape_j.push_back(e);
        entries.push_back({{"name", name},
                           {"file", file},
                           {"dtype", dtype == TensorDType::f64 ? "float64" : "float32"},
                           {"shape", shape_j},
                           {"role", param_role(name)}});
    }
    nlohmann::ordered_json j{{"format_version", 1},
                             {"config", params.config.to_json()},
                             {"entries", entries}};
    std::ofstream out((fs::path(dir) / "index.json").string(), std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint index in " + dir);
    out << j.dump(2) << "\n";
}

inline ModelParams load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string index_path = (fs::path(dir) / "index.json").string();
    std::ifstream in(index_path);
    if (!in) throw IoError("cannot open checkpoint index: " + index_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint index parse error: " + std::string(e.what()));
    }
    if (j.at("format_version") != 1) {
        throw FormatError("unknown checkpoint format version in " + index_path);
    }
    ModelParams p;
    p.config = DiTConfig::from_json(j.at("config"));
    for (const auto& ej : j.at("entries")) {
        const std::string name = ej.at("name");
        const std::string file = ej.at("file");
        p.tensors[name] = load_tensor((fs::path(dir) / file).string());
    }
    return p;
}

}  // namespace oav
