#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fuse/core_types.hpp"

namespace fuse::synth {

/// Parameter order of the synthetic advection-diffusion problem.
enum ParamIndex : std::size_t { kAmplitude = 0, kCenter = 1, kRadius = 2, kSpeed = 3, kDiffusivity = 4 };

/// 1D advection-diffusion of a Gaussian cold anomaly observed by point sensors.
///
/// The initial condition is T(x, 0) = a * exp(-(x - x_c)^2 / (2 x_r^2)); it advects with speed c and
/// diffuses with diffusivity kappa. Initial-condition parameters (a, x_c, x_r) and model parameters
/// (c, kappa) are inferred jointly from the sensor time series.
struct SynthProblem {
    ParameterPrior prior;
    std::vector<double> sensors;
    std::vector<double> grid;
    double domain_lo = 0.0;
    double domain_hi = 20.0;

    /// Sensors {5, 8, 12, 15} on [0, 20], 128 time points on [0, 10], and the default box prior.
    static SynthProblem standard();

    std::vector<std::string> channel_names() const;
    void validate() const;
};

/// Exact infinite-domain solution sampled at every sensor and grid time.
FunctionSample solve_closed_form(const ParameterVector& xi, std::span<const double> sensors,
                                 std::span<const double> grid, const std::vector<std::string>& names = {});

struct FiniteDifferenceSetup {
    double domain_lo = -30.0;
    double domain_hi = 50.0;
    double dx = 0.01;
    double dt = 1e-4;
};

/// Explicit upwind advection with central diffusion and zero Dirichlet boundaries.
/// Integrates exactly to each requested output time; sensors are read by linear interpolation.
FunctionSample solve_finite_difference(const ParameterVector& xi, const FiniteDifferenceSetup& setup,
                                       std::span<const double> sensors, std::span<const double> grid);

/// Draws xi uniformly per record from stream (seed, global index); u = s = sensor series.
/// Records are ordered train, val, test.
Dataset generate_dataset(const SynthProblem& problem, const SplitCounts& counts, std::uint64_t seed);
Dataset generate_dataset(const SynthProblem& problem, std::size_t n, std::uint64_t seed);

}  // namespace fuse::synth
