#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuse/core_types.hpp"

namespace fuse {

inline constexpr const char* kDatasetFormat = "fuse-dataset/1";

struct DatasetWriteOptions {
    NormalizationMode normalization = NormalizationMode::min_max;
    std::string config_hash;
    bool force = false;
};

/// Writes `manifest.json`, `params.bin` (n x m), `u.bin` (n x d_u x N) and `s.bin` (n x d_s x N).
/// Records are written grouped train, val, test; the manifest stores the split sizes.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset, const DatasetWriteOptions& options);

struct LoadedDataset {
    Dataset dataset;
    NormalizationMode normalization = NormalizationMode::min_max;
    nlohmann::json manifest;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

/// Little-endian float64 blob helpers shared with the checkpoint writer.
void write_f64_file(const std::filesystem::path& path, std::span<const double> data);
std::vector<double> read_f64_file(const std::filesystem::path& path);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace fuse
