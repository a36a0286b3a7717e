#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuse/core_types.hpp"
#include "fuse/inverse_model.hpp"

namespace fuse::metrics {

/// Plug-in CRPS (1/M) sum |x_i - y| - 1/(2 M^2) sum_ij |x_i - x_j|, O(M log M).
double crps_empirical(std::span<const double> ensemble, double y);

/// Mean over components of crps_empirical in prior-normalized coordinates.
double crps_parameters(const PosteriorEnsemble& ensemble, const Vector& xi_true, const ParameterPrior& prior);

/// ||pred - truth||_p / ||truth||_p over all entries jointly, p in {1, 2}.
double relative_lp_error(const Eigen::Ref<const Matrix>& pred, const Eigen::Ref<const Matrix>& truth, int p);

/// 1/2 sum |p_i - q_i| for probability vectors on the same support.
double total_variation(std::span<const double> p, std::span<const double> q);

/// Push-forward of p through map[i] -> target index on a support of `target_size` points.
std::vector<double> pushforward(std::span<const double> p, std::span<const std::size_t> map, std::size_t target_size);

struct TvCheck {
    double before = 0.0;
    double after = 0.0;
};

TvCheck tv_pushforward_check(std::span<const double> p, std::span<const double> q, std::span<const std::size_t> map,
                             std::size_t target_size);

/// sup_x |F_emp(x) - F_uniform(x)| for the uniform law on [lower, upper].
double ks_uniform(std::span<const double> samples, double lower, double upper);

struct Summary {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n - 1); 0 for a single value
    std::size_t count = 0;
};

Summary summarize(std::span<const double> values);

/// Per-sample metrics of one evaluation block. Empty vectors mean "not computed for this block".
struct MetricBlock {
    std::string name;
    std::vector<double> crps;  // unit-box CRPS (the x100 convention is applied only when reporting)
    std::vector<double> rel_l1;
    std::vector<double> rel_l2;
};

struct MetricReport {
    std::vector<MetricBlock> blocks;
    nlohmann::json info = nlohmann::json::object();

    const MetricBlock& block(const std::string& name) const;

    /// Per-sample arrays plus mean/std aggregates; CRPS aggregates are also given x100.
    nlohmann::json to_json() const;
    /// One row per (block, metric): block,metric,count,mean,std.
    std::string to_csv(const std::string& header_comment) const;
};

}  // namespace fuse::metrics
