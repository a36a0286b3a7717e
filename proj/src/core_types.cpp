#include "fuse/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fuse {

void ParameterVector::validate(std::size_t m) const
{
    if (values.size() != m) {
        throw ConfigError("parameter vector has length " + std::to_string(values.size()) + ", expected " +
                          std::to_string(m));
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (!std::isfinite(values[i])) throw ConfigError("parameter " + std::to_string(i) + " is not finite");
    }
}

ParameterPrior::ParameterPrior(std::vector<std::string> names, std::vector<double> lower, std::vector<double> upper)
    : names_(std::move(names)), lower_(std::move(lower)), upper_(std::move(upper))
{
    if (names_.empty()) throw ConfigError("prior needs at least one parameter");
    if (lower_.size() != names_.size() || upper_.size() != names_.size()) {
        throw ConfigError("prior bounds do not match the number of parameter names");
    }
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (!std::isfinite(lower_[i]) || !std::isfinite(upper_[i]) || !(lower_[i] < upper_[i])) {
            throw ConfigError("prior bounds for '" + names_[i] + "' must satisfy lower < upper");
        }
    }
}

std::size_t ParameterPrior::index_of(const std::string& name) const
{
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return static_cast<std::size_t>(it - names_.begin());
}

ParameterVector ParameterPrior::midpoint() const
{
    std::vector<double> v(dim());
    for (std::size_t i = 0; i < dim(); ++i) v[i] = 0.5 * (lower_[i] + upper_[i]);
    return ParameterVector(std::move(v));
}

ParameterVector ParameterPrior::sample(std::mt19937_64& rng) const
{
    std::vector<double> v(dim());
    for (std::size_t i = 0; i < dim(); ++i) {
        std::uniform_real_distribution<double> dist(lower_[i], upper_[i]);
        v[i] = dist(rng);
    }
    return ParameterVector(std::move(v));
}

bool ParameterPrior::contains(const ParameterVector& xi) const
{
    if (xi.size() != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i) {
        if (xi[i] < lower_[i] || xi[i] > upper_[i]) return false;
    }
    return true;
}

Vector ParameterPrior::to_unit(const ParameterVector& xi) const
{
    xi.validate(dim());
    Vector z(static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < dim(); ++i) z[static_cast<Eigen::Index>(i)] = (xi[i] - lower_[i]) / width(i);
    return z;
}

ParameterVector ParameterPrior::from_unit(const Eigen::Ref<const Vector>& z) const
{
    if (static_cast<std::size_t>(z.size()) != dim()) throw ConfigError("unit vector has wrong length");
    std::vector<double> v(dim());
    for (std::size_t i = 0; i < dim(); ++i) v[i] = lower_[i] + z[static_cast<Eigen::Index>(i)] * width(i);
    return ParameterVector(std::move(v));
}

FunctionSample::FunctionSample(std::vector<double> grid, Matrix values, std::vector<std::string> channel_names)
    : grid_(std::move(grid)), values_(std::move(values)), channel_names_(std::move(channel_names))
{
    if (static_cast<std::size_t>(values_.rows()) != channel_names_.size()) {
        throw ConfigError("function sample has " + std::to_string(values_.rows()) + " rows but " +
                          std::to_string(channel_names_.size()) + " channel names");
    }
    if (static_cast<std::size_t>(values_.cols()) != grid_.size()) {
        throw ConfigError("function sample has " + std::to_string(values_.cols()) + " columns but grid of " +
                          std::to_string(grid_.size()));
    }
    for (std::size_t i = 1; i < grid_.size(); ++i) {
        if (!(grid_[i] > grid_[i - 1])) throw ConfigError("grid must be strictly increasing");
    }
    if (!values_.allFinite()) throw NumericalError("function sample contains non-finite values");
}

FunctionSample FunctionSample::with_values(Matrix values) const
{
    return FunctionSample(grid_, std::move(values), channel_names_);
}

std::string to_string(Split s)
{
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s)
{
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "'");
}

Dataset::Dataset(ParameterPrior prior, std::vector<double> grid, std::vector<std::string> u_channels,
                 std::vector<std::string> s_channels)
    : prior_(std::move(prior)), grid_(std::move(grid)), u_channels_(std::move(u_channels)),
      s_channels_(std::move(s_channels))
{
    for (std::size_t i = 1; i < grid_.size(); ++i) {
        if (!(grid_[i] > grid_[i - 1])) throw ConfigError("dataset grid must be strictly increasing");
    }
}

void Dataset::add(Record r)
{
    r.xi.validate(prior_.dim());
    if (r.u.grid() != grid_ || r.s.grid() != grid_) throw DataError("record grid differs from dataset grid");
    if (r.u.channel_names() != u_channels_) throw DataError("record u channels differ from dataset layout");
    if (r.s.channel_names() != s_channels_) throw DataError("record s channels differ from dataset layout");
    records_.push_back(std::move(r));
}

std::vector<std::size_t> Dataset::indices(Split s) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        if (records_[i].split == s) out.push_back(i);
    }
    return out;
}

SplitCounts Dataset::counts() const
{
    SplitCounts c;
    for (const auto& r : records_) {
        switch (r.split) {
        case Split::train: ++c.train; break;
        case Split::val: ++c.val; break;
        case Split::test: ++c.test; break;
        }
    }
    return c;
}

Dataset Dataset::subset(const SplitCounts& limit) const
{
    Dataset out(prior_, grid_, u_channels_, s_channels_);
    SplitCounts taken;
    for (const auto& r : records_) {
        std::size_t* n = nullptr;
        std::size_t cap = 0;
        switch (r.split) {
        case Split::train: n = &taken.train; cap = limit.train; break;
        case Split::val: n = &taken.val; cap = limit.val; break;
        case Split::test: n = &taken.test; cap = limit.test; break;
        }
        if (*n < cap) {
            out.records_.push_back(r);
            ++*n;
        }
    }
    return out;
}

std::string to_string(NormalizationMode m)
{
    return m == NormalizationMode::max_scale ? "max-scale" : "min-max";
}

NormalizationMode normalization_from_string(const std::string& s)
{
    if (s == "max-scale") return NormalizationMode::max_scale;
    if (s == "min-max") return NormalizationMode::min_max;
    throw ConfigError("unknown normalization mode '" + s + "' (expected max-scale or min-max)");
}

NormalizationStats fit_normalization(const Dataset& dataset, NormalizationMode mode, Field field)
{
    const auto train = dataset.indices(Split::train);
    if (train.empty()) throw DataError("cannot fit normalization: train split is empty");
    const auto& names = field == Field::input ? dataset.u_channels() : dataset.s_channels();
    const std::size_t channels = names.size();

    std::vector<double> lo(channels, std::numeric_limits<double>::infinity());
    std::vector<double> hi(channels, -std::numeric_limits<double>::infinity());
    for (std::size_t idx : train) {
        const Matrix& v = field == Field::input ? dataset[idx].u.values() : dataset[idx].s.values();
        for (std::size_t c = 0; c < channels; ++c) {
            const auto row = v.row(static_cast<Eigen::Index>(c));
            lo[c] = std::min(lo[c], row.minCoeff());
            hi[c] = std::max(hi[c], row.maxCoeff());
        }
    }

    NormalizationStats stats;
    stats.mode = mode;
    stats.upper = hi;
    if (mode == NormalizationMode::min_max) {
        stats.lower = lo;
        for (std::size_t c = 0; c < channels; ++c) {
            if (!(lo[c] < hi[c])) throw DataError("channel '" + names[c] + "' has zero range; min-max undefined");
        }
    } else {
        stats.lower.assign(channels, 0.0);
        for (std::size_t c = 0; c < channels; ++c) {
            if (!(hi[c] > 0.0)) throw DataError("channel '" + names[c] + "' has non-positive maximum");
        }
    }
    return stats;
}

namespace {

void check_channels(Eigen::Index rows, const NormalizationStats& stats)
{
    if (static_cast<std::size_t>(rows) != stats.channels()) {
        throw ConfigError("normalization has " + std::to_string(stats.channels()) + " channels, sample has " +
                          std::to_string(rows));
    }
}

}  // namespace

Matrix normalize(const Eigen::Ref<const Matrix>& values, const NormalizationStats& stats)
{
    check_channels(values.rows(), stats);
    Matrix out(values.rows(), values.cols());
    for (Eigen::Index c = 0; c < values.rows(); ++c) {
        const double lo = stats.lower[static_cast<std::size_t>(c)];
        const double span = stats.upper[static_cast<std::size_t>(c)] - lo;
        out.row(c) = (values.row(c).array() - lo) / span;
    }
    return out;
}

Matrix denormalize(const Eigen::Ref<const Matrix>& values, const NormalizationStats& stats)
{
    check_channels(values.rows(), stats);
    Matrix out(values.rows(), values.cols());
    for (Eigen::Index c = 0; c < values.rows(); ++c) {
        const double lo = stats.lower[static_cast<std::size_t>(c)];
        const double span = stats.upper[static_cast<std::size_t>(c)] - lo;
        out.row(c) = values.row(c).array() * span + lo;
    }
    return out;
}

FunctionSample normalize(const FunctionSample& sample, const NormalizationStats& stats)
{
    return sample.with_values(normalize(sample.values(), stats));
}

FunctionSample denormalize(const FunctionSample& sample, const NormalizationStats& stats)
{
    return sample.with_values(denormalize(sample.values(), stats));
}

void apply_mask_inplace(Eigen::Ref<Matrix> values, const ChannelMask& mask)
{
    if (mask.size() != static_cast<std::size_t>(values.rows())) {
        throw ConfigError("mask has " + std::to_string(mask.size()) + " entries for " +
                          std::to_string(values.rows()) + " channels");
    }
    for (Eigen::Index c = 0; c < values.rows(); ++c) {
        if (!mask.keep[static_cast<std::size_t>(c)]) values.row(c).setZero();
    }
}

FunctionSample apply_mask(const FunctionSample& sample, const ChannelMask& mask)
{
    Matrix v = sample.values();
    apply_mask_inplace(v, mask);
    return sample.with_values(std::move(v));
}

ChannelMask parse_mask(const std::string& text, const std::vector<std::string>& channels)
{
    if (text.empty() || text == "none") return ChannelMask::all(channels.size());
    if (text == "all") return ChannelMask::none(channels.size());
    ChannelMask mask = ChannelMask::all(channels.size());
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        auto it = std::find(channels.begin(), channels.end(), item);
        if (it == channels.end()) throw ConfigError("unknown channel '" + item + "' in mask");
        mask.keep[static_cast<std::size_t>(it - channels.begin())] = false;
    }
    return mask;
}

std::vector<double> linspace(double t0, double t1, std::size_t n)
{
    std::vector<double> g(n);
    if (n == 1) {
        g[0] = t0;
        return g;
    }
    const double step = (t1 - t0) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) g[i] = t0 + step * static_cast<double>(i);
    g[n - 1] = t1;
    return g;
}

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t salt)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace fuse
