#include <doctest.h>

#include <cmath>

#include "fuse/inverse_model.hpp"

using namespace fuse;

namespace {

InverseModel tiny(std::uint64_t seed, int latent = 32)
{
    InverseModel m(3, 2, EncoderConfig{4, 6, 2, latent}, FlowConfig{8, 2, 2, 1e-4});
    m.initialize(seed);
    return m;
}

/// Two-channel band-limited signal with modes below 6, sampled on n uniform points.
Matrix band_limited(Eigen::Index n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    spectral::Spectrum s{Matrix(2, 6), Matrix(2, 6)};
    for (Eigen::Index i = 0; i < s.re.size(); ++i) {
        s.re.data()[i] = d(rng);
        s.im.data()[i] = d(rng);
    }
    s.im.col(0).setZero();
    return spectral::idft_on_grid(s, spectral::uniform_points(n));
}

}  // namespace

TEST_CASE("zero input with zero lifting bias encodes to zero")
{
    InverseModel m = tiny(1);
    const auto& b = m.layout.find("enc.lift.bias");
    std::fill_n(m.weights.begin() + static_cast<long>(b.offset), b.count, 0.0);
    const Vector e = m.encoder.encode(m.encoder_weights(), Matrix::Zero(2, 32));
    CHECK(e.isZero(0.0));
}

TEST_CASE("embeddings are resolution independent for band-limited inputs")
{
    const InverseModel m = tiny(2);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const Vector ref = m.encoder.encode(m.encoder_weights(), band_limited(32, seed));
        for (Eigen::Index n : {16, 64, 128, 256}) {
            const Vector e = m.encoder.encode(m.encoder_weights(), band_limited(n, seed));
            CHECK(e.size() == m.encoder.embedding_size());
            CHECK((e - ref).cwiseAbs().maxCoeff() < 1e-8);
        }
    }
    CHECK(m.encoder.embedding_size() == 2 * 4 * 6);
    CHECK_THROWS_AS(m.encoder.encode(m.encoder_weights(), Matrix::Zero(3, 32)), ConfigError);
}

TEST_CASE("optimal transport path endpoints and targets")
{
    const Vector x0 = Vector::LinSpaced(3, -1.0, 1.0), x1 = Vector::LinSpaced(3, 0.2, 0.9);
    const PathPoint p0 = ot_path(x0, x1, 0.0, 1e-4);
    CHECK((p0.xi_t - x0).cwiseAbs().maxCoeff() == 0.0);
    const PathPoint near1 = ot_path(x0, x1, 1.0 - 1e-12, 0.0);
    CHECK((near1.xi_t - x1).cwiseAbs().maxCoeff() < 1e-11);
    const PathPoint l0 = ot_path(x0, x1, 0.0, 0.0);
    CHECK((l0.target - (x1 - x0)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK_THROWS_AS(ot_path(x0, x1, 1.0, 1e-4), ConfigError);
    CHECK_THROWS_AS(ot_path(x0, x1, 1.5, 1e-4), ConfigError);
}

TEST_CASE("FMPE loss of the analytic conditional field vanishes")
{
    const double sigma = 1e-4;
    Matrix xi1(3, 1);
    xi1 << 0.3, 0.7, 0.1;
    std::mt19937_64 rng(11);
    const Eigen::Index draws_n = 100000;
    const FmpeDraws draws = draw_fmpe(3, draws_n, rng);
    const Matrix target = xi1.replicate(1, draws_n);
    const VelocityFn exact = [&](std::span<const double> t, const Matrix& x) {
        Matrix v(x.rows(), x.cols());
        for (Eigen::Index b = 0; b < x.cols(); ++b) {
            const double s = 1.0 - (1.0 - sigma) * t[static_cast<std::size_t>(b)];
            v.col(b) = (target.col(b) - (1.0 - sigma) * x.col(b)) / s;
        }
        return v;
    };
    CHECK(fmpe_monte_carlo(exact, target, draws, sigma) < 1e-3);
}

TEST_CASE("FMPE loss of the zero field is the mean squared target")
{
    Matrix xi1(2, 1);
    xi1 << 0.4, 0.9;
    const Eigen::Index n = 20000;
    const Matrix target = xi1.replicate(1, n);
    std::mt19937_64 rng(12);
    const FmpeDraws draws = draw_fmpe(2, n, rng);
    const VelocityFn zero = [](std::span<const double>, const Matrix& x) { return Matrix::Zero(x.rows(), x.cols()).eval(); };
    const double loss = fmpe_monte_carlo(zero, target, draws, 0.0);
    // With sigma_min = 0 the target is xi1 - xi0, so the same draws give the oracle directly.
    double oracle = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) oracle += (target.col(b) - draws.base.col(b)).squaredNorm();
    oracle /= static_cast<double>(n);
    CHECK(loss == doctest::Approx(oracle).epsilon(1e-10));
    // And the closed-form expectation ||xi1||^2 + m within Monte Carlo error.
    CHECK(std::abs(loss - (xi1.squaredNorm() + 2.0)) < 0.1);

    const VelocityFn broken = [](std::span<const double>, const Matrix& x) {
        return Matrix::Constant(x.rows(), x.cols(), std::nan("")).eval();
    };
    CHECK_THROWS_AS(fmpe_monte_carlo(broken, target, draws, 0.0), NumericalError);
}

TEST_CASE("FMPE loss is deterministic, non-negative and thread independent")
{
    const InverseModel m = tiny(3);
    const Eigen::Index batch = 40;
    Matrix inputs(2, batch * 32);
    for (Eigen::Index b = 0; b < batch; ++b) inputs.middleCols(b * 32, 32) = band_limited(32, static_cast<std::uint64_t>(b));
    Matrix xi1 = (Matrix::Random(3, batch).array() + 1.0) * 0.5;
    std::mt19937_64 r1(5), r2(5);
    const double a = fmpe_loss(m, inputs, xi1, r1), b = fmpe_loss(m, inputs, xi1, r2);
    CHECK(a == b);
    CHECK(a >= 0.0);

    std::mt19937_64 r3(6);
    const FmpeDraws d = draw_fmpe(3, batch, r3);
    std::vector<double> g1, g3;
    const double l1 = fmpe_loss(m, inputs, xi1, d, &g1, 1);
    const double l3 = fmpe_loss(m, inputs, xi1, d, &g3, 3);
    CHECK(l1 == l3);
    CHECK(g1 == g3);
}

TEST_CASE("sampler: zero field returns the base draws in prior units")
{
    const Matrix base = base_draws(2, 5, 9);
    const Matrix out = integrate_flow([](double, const Matrix& x) { return Matrix::Zero(x.rows(), x.cols()).eval(); }, base, 7);
    CHECK(out == base);
    const ParameterPrior prior({"a", "b"}, {1.0, -2.0}, {3.0, 2.0});
    const PosteriorEnsemble e = to_prior_units(out, prior);
    CHECK(e.size() == 5);
    CHECK(e.samples(3, 0) == doctest::Approx(1.0 + 2.0 * base(0, 3)));
    CHECK(e.samples(3, 1) == doctest::Approx(-2.0 + 4.0 * base(1, 3)));
}

TEST_CASE("sampler: constant field shifts the base exactly")
{
    const Matrix base = base_draws(3, 6, 1);
    Vector c(3);
    c << 0.5, -1.25, 2.0;
    for (int steps : {1, 3, 64}) {
        const Matrix out = integrate_flow([&](double, const Matrix& x) { return c.replicate(1, x.cols()).eval(); }, base, steps);
        CHECK(((out - base).colwise() - c).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("sampler: linear decay matches exp(-1) with RK4")
{
    const Matrix base = base_draws(4, 50, 2);
    const Matrix out = integrate_flow([](double, const Matrix& x) { return (-x).eval(); }, base, 100);
    const Matrix exact = std::exp(-1.0) * base;
    CHECK(((out - exact).cwiseAbs().array() / exact.cwiseAbs().array()).maxCoeff() < 1e-6);
}

TEST_CASE("sampler reports the time of a non-finite state")
{
    const Matrix base = base_draws(1, 2, 3);
    try {
        integrate_flow([](double t, const Matrix& x) { return t > 0.5 ? Matrix::Constant(x.rows(), x.cols(), INFINITY).eval() : Matrix::Zero(x.rows(), x.cols()).eval(); },
                       base, 4);
        FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("t = 0.75") != std::string::npos);
    }
    CHECK_THROWS_AS(integrate_flow([](double, const Matrix& x) { return x; }, base, 0), ConfigError);
}

TEST_CASE("posterior sampling is deterministic, prefix-stable and thread independent")
{
    const InverseModel m = tiny(4);
    const Matrix u = band_limited(32, 8);
    const Matrix a = sample_unit(m, u, 70, 8, 5, 1);
    const Matrix b = sample_unit(m, u, 70, 8, 5, 1);
    const Matrix c = sample_unit(m, u, 70, 8, 5, 3);
    const Matrix big = sample_unit(m, u, 150, 8, 5, 2);
    CHECK(a == b);
    CHECK(a == c);
    CHECK(big.leftCols(70) == a);
    CHECK(sample_unit(m, u, 70, 8, 6, 1) != a);
    CHECK(a.allFinite());
}

TEST_CASE("flow field rejects an invalid path floor")
{
    CHECK_THROWS_AS(FlowField(3, 4, FlowConfig{8, 2, 2, 0.0}), ConfigError);
    CHECK_THROWS_AS(FlowField(3, 4, FlowConfig{8, 2, 2, 0.2}), ConfigError);
    CHECK_NOTHROW(FlowField(3, 4, FlowConfig{8, 2, 2, 0.1}));
}
