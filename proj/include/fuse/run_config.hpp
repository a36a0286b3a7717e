#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "fuse/fuse_model.hpp"
#include "fuse/synth_pde.hpp"

namespace fuse {

inline constexpr const char* kCsvFormat = "fuse-csv/1";

struct DataConfig {
    SplitCounts counts{2048, 128, 256};
    std::uint64_t seed = 0;
    NormalizationMode normalization = NormalizationMode::min_max;
};

struct EvalConfig {
    Eigen::Index ensemble_size = 128;
    int ode_steps = 64;
    std::string mask = "none";
    std::uint64_t seed = 0;
};

/// Everything needed to reproduce a run from (config, dataset, seed).
///
/// JSON schema (every key optional, defaults shown by `fuse config`):
///   problem: {sensors, t_start, t_end, points, domain: [lo, hi], prior: {names, lower, upper}}
///   data:    {n_train, n_val, n_test, seed, normalization}
///   model:   {forward: {...}, encoder: {...}, flow: {...}}
///   train:   {epochs, batch_size, learning_rate, final_learning_rate, mask_probability, divergence_factor, seed}
///   eval:    {ensemble_size, ode_steps, mask, seed}
///   output_root: directory prefix for relative output paths
struct RunConfig {
    synth::SynthProblem problem = synth::SynthProblem::standard();
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;
    std::string output_root;

    nlohmann::json to_json() const;
    /// Unknown keys are rejected with ConfigError so typos do not silently fall back to defaults.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);

    /// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
    std::string hash() const;
};

std::string json_hash(const nlohmann::json& j);

/// First line of every CSV output.
std::string csv_header(const std::string& config_hash);

}  // namespace fuse
