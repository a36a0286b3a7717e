#include "fuse/synth_pde.hpp"

#include <cmath>
#include <sstream>

namespace fuse::synth {

SynthProblem SynthProblem::standard()
{
    SynthProblem p;
    p.prior = ParameterPrior({"a", "x_c", "x_r", "c", "kappa"}, {0.5, 1.0, 0.5, 0.5, 0.0}, {2.5, 3.0, 2.0, 2.0, 0.5});
    p.sensors = {5.0, 8.0, 12.0, 15.0};
    p.grid = linspace(0.0, 10.0, 128);
    return p;
}

std::vector<std::string> SynthProblem::channel_names() const
{
    std::vector<std::string> names;
    names.reserve(sensors.size());
    for (double x : sensors) {
        std::ostringstream os;
        os << "T@x=" << x;
        names.push_back(os.str());
    }
    return names;
}

void SynthProblem::validate() const
{
    if (prior.dim() != 5) throw ConfigError("synthetic problem has exactly 5 parameters");
    if (sensors.empty()) throw ConfigError("synthetic problem needs at least one sensor");
    for (double x : sensors) {
        if (x < domain_lo || x > domain_hi) throw ConfigError("sensor outside the problem domain");
    }
    if (grid.size() < 2) throw ConfigError("time grid needs at least two points");
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (!(grid[i] > grid[i - 1])) throw ConfigError("time grid must be strictly increasing");
    }
    if (prior.lower()[kRadius] <= 0.0) throw ConfigError("prior must keep x_r > 0");
    if (prior.lower()[kDiffusivity] < 0.0) throw ConfigError("prior must keep kappa >= 0");
}

namespace {

void check_physical(const ParameterVector& xi)
{
    xi.validate(5);
    if (!(xi[kRadius] > 0.0)) throw ConfigError("x_r must be positive");
    if (xi[kDiffusivity] < 0.0) throw ConfigError("kappa must be non-negative");
}

std::vector<std::string> default_names(std::span<const double> sensors)
{
    std::vector<std::string> names;
    for (double x : sensors) {
        std::ostringstream os;
        os << "T@x=" << x;
        names.push_back(os.str());
    }
    return names;
}

}  // namespace

FunctionSample solve_closed_form(const ParameterVector& xi, std::span<const double> sensors,
                                 std::span<const double> grid, const std::vector<std::string>& names)
{
    check_physical(xi);
    const double a = xi[kAmplitude], xc = xi[kCenter], xr = xi[kRadius], c = xi[kSpeed], kappa = xi[kDiffusivity];
    Matrix values(static_cast<Eigen::Index>(sensors.size()), static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double var = xr * xr + 2.0 * kappa * grid[i];
        const double amp = a * xr / std::sqrt(var);
        const double center = xc + c * grid[i];
        for (std::size_t j = 0; j < sensors.size(); ++j) {
            const double d = sensors[j] - center;
            values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = amp * std::exp(-d * d / (2.0 * var));
        }
    }
    return FunctionSample(std::vector<double>(grid.begin(), grid.end()), std::move(values),
                          names.empty() ? default_names(sensors) : names);
}

FunctionSample solve_finite_difference(const ParameterVector& xi, const FiniteDifferenceSetup& setup,
                                       std::span<const double> sensors, std::span<const double> grid)
{
    check_physical(xi);
    if (!(setup.dx > 0.0) || !(setup.dt > 0.0) || !(setup.domain_hi > setup.domain_lo)) {
        throw ConfigError("finite-difference setup needs dx > 0, dt > 0 and a non-empty domain");
    }
    const double a = xi[kAmplitude], xc = xi[kCenter], xr = xi[kRadius], c = xi[kSpeed], kappa = xi[kDiffusivity];
    const double courant = std::abs(c) * setup.dt / setup.dx;
    const double diffusion = kappa * setup.dt / (setup.dx * setup.dx);
    if (courant > 1.0) throw ConfigError("CFL violation: advection ratio c*dt/dx = " + std::to_string(courant));
    if (diffusion > 0.5) {
        throw ConfigError("CFL violation: diffusion ratio kappa*dt/dx^2 = " + std::to_string(diffusion));
    }
    for (double x : sensors) {
        if (x <= setup.domain_lo || x >= setup.domain_hi) throw ConfigError("sensor outside finite-difference domain");
    }
    if (grid.empty() || grid.front() < 0.0) throw ConfigError("output times must be non-negative");

    const auto cells = static_cast<std::size_t>(std::llround((setup.domain_hi - setup.domain_lo) / setup.dx)) + 1;
    const double dx = (setup.domain_hi - setup.domain_lo) / static_cast<double>(cells - 1);
    std::vector<double> field(cells), next(cells, 0.0);
    for (std::size_t i = 0; i < cells; ++i) {
        const double d = setup.domain_lo + dx * static_cast<double>(i) - xc;
        field[i] = a * std::exp(-d * d / (2.0 * xr * xr));
    }
    field.front() = 0.0;
    field.back() = 0.0;

    auto step = [&](double dt) {
        const double adv = c * dt / dx;
        const double dif = kappa * dt / (dx * dx);
        for (std::size_t i = 1; i + 1 < cells; ++i) {
            const double upwind = c >= 0.0 ? field[i] - field[i - 1] : field[i + 1] - field[i];
            next[i] = field[i] - adv * upwind + dif * (field[i + 1] - 2.0 * field[i] + field[i - 1]);
        }
        next.front() = 0.0;
        next.back() = 0.0;
        field.swap(next);
    };

    auto sample = [&](std::size_t j) {
        const double pos = (sensors[j] - setup.domain_lo) / dx;
        const auto left = static_cast<std::size_t>(std::floor(pos));
        const double w = pos - static_cast<double>(left);
        return (1.0 - w) * field[left] + w * field[left + 1];
    };

    Matrix values(static_cast<Eigen::Index>(sensors.size()), static_cast<Eigen::Index>(grid.size()));
    double now = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double span = grid[i] - now;
        if (span > 0.0) {
            const auto n_steps = static_cast<std::size_t>(std::ceil(span / setup.dt - 1e-9));
            const double dt = span / static_cast<double>(n_steps);
            for (std::size_t s = 0; s < n_steps; ++s) step(dt);
            now = grid[i];
        }
        for (std::size_t j = 0; j < sensors.size(); ++j) {
            values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = sample(j);
        }
    }
    return FunctionSample(std::vector<double>(grid.begin(), grid.end()), std::move(values), default_names(sensors));
}

Dataset generate_dataset(const SynthProblem& problem, const SplitCounts& counts, std::uint64_t seed)
{
    problem.validate();
    const auto names = problem.channel_names();
    Dataset ds(problem.prior, problem.grid, names, names);
    const std::size_t n = counts.total();
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = make_stream(seed, i);
        Record r;
        r.xi = problem.prior.sample(rng);
        r.s = solve_closed_form(r.xi, problem.sensors, problem.grid, names);
        r.u = r.s;
        r.split = i < counts.train ? Split::train : (i < counts.train + counts.val ? Split::val : Split::test);
        ds.add(std::move(r));
    }
    return ds;
}

Dataset generate_dataset(const SynthProblem& problem, std::size_t n, std::uint64_t seed)
{
    return generate_dataset(problem, SplitCounts{n, 0, 0}, seed);
}

}  // namespace fuse::synth
