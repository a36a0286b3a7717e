#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fuse/error.hpp"

namespace fuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Finite-dimensional PDE parameters in problem units.
struct ParameterVector {
    std::vector<double> values;

    ParameterVector() = default;
    explicit ParameterVector(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const noexcept { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double& operator[](std::size_t i) { return values[i]; }

    /// Throws ConfigError unless the vector has length `m` and only finite entries.
    void validate(std::size_t m) const;

    friend bool operator==(const ParameterVector&, const ParameterVector&) = default;
};

/// Box-uniform prior over the parameter space.
class ParameterPrior {
public:
    ParameterPrior() = default;
    ParameterPrior(std::vector<std::string> names, std::vector<double> lower, std::vector<double> upper);

    std::size_t dim() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::vector<double>& lower() const noexcept { return lower_; }
    const std::vector<double>& upper() const noexcept { return upper_; }
    double width(std::size_t i) const { return upper_[i] - lower_[i]; }

    /// Index of a named parameter; throws ConfigError when absent.
    std::size_t index_of(const std::string& name) const;

    ParameterVector midpoint() const;
    ParameterVector sample(std::mt19937_64& rng) const;
    bool contains(const ParameterVector& xi) const;

    /// Affine map of each component onto [0, 1] using the prior bounds.
    Vector to_unit(const ParameterVector& xi) const;
    ParameterVector from_unit(const Eigen::Ref<const Vector>& z) const;

    friend bool operator==(const ParameterPrior&, const ParameterPrior&) = default;

private:
    std::vector<std::string> names_;
    std::vector<double> lower_;
    std::vector<double> upper_;
};

/// A multichannel time series sampled on an explicit, strictly increasing grid.
class FunctionSample {
public:
    FunctionSample() = default;
    FunctionSample(std::vector<double> grid, Matrix values, std::vector<std::string> channel_names);

    const std::vector<double>& grid() const noexcept { return grid_; }
    const Matrix& values() const noexcept { return values_; }
    const std::vector<std::string>& channel_names() const noexcept { return channel_names_; }
    Eigen::Index channels() const noexcept { return values_.rows(); }
    Eigen::Index points() const noexcept { return values_.cols(); }

    /// Same grid and channels, new values (validated).
    FunctionSample with_values(Matrix values) const;

    friend bool operator==(const FunctionSample& a, const FunctionSample& b)
    {
        return a.grid_ == b.grid_ && a.channel_names_ == b.channel_names_ && a.values_ == b.values_;
    }

private:
    std::vector<double> grid_;
    Matrix values_;
    std::vector<std::string> channel_names_;
};

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct SplitCounts {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
    std::size_t total() const noexcept { return train + val + test; }
};

struct Record {
    ParameterVector xi;
    FunctionSample u;
    FunctionSample s;
    Split split = Split::train;
};

/// Training/validation/test records sharing one grid and channel layout.
class Dataset {
public:
    Dataset() = default;
    Dataset(ParameterPrior prior, std::vector<double> grid, std::vector<std::string> u_channels,
            std::vector<std::string> s_channels);

    const ParameterPrior& prior() const noexcept { return prior_; }
    const std::vector<double>& grid() const noexcept { return grid_; }
    const std::vector<std::string>& u_channels() const noexcept { return u_channels_; }
    const std::vector<std::string>& s_channels() const noexcept { return s_channels_; }
    const std::vector<Record>& records() const noexcept { return records_; }
    const Record& operator[](std::size_t i) const { return records_[i]; }
    std::size_t size() const noexcept { return records_.size(); }

    /// Appends a record after checking it against the shared layout.
    void add(Record r);

    std::vector<std::size_t> indices(Split s) const;
    SplitCounts counts() const;

    /// New dataset holding the first `n` records of each split, or all of them when smaller.
    Dataset subset(const SplitCounts& limit) const;

private:
    ParameterPrior prior_;
    std::vector<double> grid_;
    std::vector<std::string> u_channels_;
    std::vector<std::string> s_channels_;
    std::vector<Record> records_;
};

enum class NormalizationMode : std::uint8_t { max_scale, min_max };

std::string to_string(NormalizationMode m);
NormalizationMode normalization_from_string(const std::string& s);

enum class Field : std::uint8_t { input, output };

/// Per-channel affine scaling x -> (x - lower) / (upper - lower); lower is 0 in max-scale mode.
struct NormalizationStats {
    NormalizationMode mode = NormalizationMode::min_max;
    std::vector<double> lower;
    std::vector<double> upper;

    std::size_t channels() const noexcept { return lower.size(); }
    friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

/// Statistics over the train split of the chosen field (u or s).
NormalizationStats fit_normalization(const Dataset& dataset, NormalizationMode mode, Field field = Field::input);

Matrix normalize(const Eigen::Ref<const Matrix>& values, const NormalizationStats& stats);
Matrix denormalize(const Eigen::Ref<const Matrix>& values, const NormalizationStats& stats);
FunctionSample normalize(const FunctionSample& sample, const NormalizationStats& stats);
FunctionSample denormalize(const FunctionSample& sample, const NormalizationStats& stats);

struct ChannelMask {
    std::vector<bool> keep;

    static ChannelMask all(std::size_t channels) { return {std::vector<bool>(channels, true)}; }
    static ChannelMask none(std::size_t channels) { return {std::vector<bool>(channels, false)}; }
    std::size_t size() const noexcept { return keep.size(); }
};

/// Zero-fills masked channels; kept channels and the grid are unchanged.
FunctionSample apply_mask(const FunctionSample& sample, const ChannelMask& mask);
void apply_mask_inplace(Eigen::Ref<Matrix> values, const ChannelMask& mask);

/// Mask from a comma-separated channel list; "all" masks everything and "none" or "" keeps everything.
ChannelMask parse_mask(const std::string& text, const std::vector<std::string>& channels);

/// Uniform grid of `n` points on [t0, t1], both ends included.
std::vector<double> linspace(double t0, double t1, std::size_t n);

/// Deterministic generator for stream `index` of the family `seed`.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0);

}  // namespace fuse
