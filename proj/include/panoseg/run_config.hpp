#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "panoseg/data_synth.hpp"
#include "panoseg/inference.hpp"
#include "panoseg/loss.hpp"
#include "panoseg/model.hpp"
#include "panoseg/train.hpp"

namespace panoseg {

/// The single configuration document every command consumes. Defaults are
/// the working desk-scale setup; schema validation rejects unknown keys.
struct RunConfig {
    std::string precision = "float32";  // float32 | float64
    DataConfig data;
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;
    InferConfig infer;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    void validate() const;
};

/// Loads a config file (or the defaults when path is empty) and applies
/// `key.path=value` overrides.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides);

/// Writes the resolved config snapshot into an output directory.
void write_config_snapshot(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace panoseg
