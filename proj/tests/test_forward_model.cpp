#include <doctest.h>

#include "fuse/forward_model.hpp"

using namespace fuse;

namespace {

ForwardModel tiny(std::uint64_t seed, int latent = 16)
{
    ForwardModel m(3, 2, ForwardConfig{4, 4, 2, 6, latent});
    m.initialize(seed);
    return m;
}

Matrix random_unit(Eigen::Index r, Eigen::Index c, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
    return m;
}

}  // namespace

TEST_CASE("zero final projection gives the zero function")
{
    ForwardModel m = tiny(1);
    const auto& w = m.layout().find("proj2.weight");
    const auto& b = m.layout().find("proj2.bias");
    std::fill_n(m.weights().begin() + static_cast<long>(w.offset), w.count, 0.0);
    std::fill_n(m.weights().begin() + static_cast<long>(b.offset), b.count, 0.0);
    CHECK(m.predict_latent(random_unit(3, 4, 2)).isZero(0.0));
}

TEST_CASE("fixed seed initialization and prediction are bit-identical")
{
    const ForwardModel a = tiny(5), b = tiny(5), c = tiny(6);
    CHECK(a.weights() == b.weights());
    CHECK(a.weights() != c.weights());
    const Matrix z = random_unit(3, 3, 9);
    CHECK(a.predict_latent(z) == b.predict_latent(z));
}

TEST_CASE("forward loss examples")
{
    const ForwardModel m = tiny(2);
    const Matrix z = random_unit(3, 2, 3);
    const Matrix pred = m.predict_latent(z);
    CHECK(forward_loss(m, z, pred) == 0.0);
    CHECK(forward_loss(m, z, pred.array() - 0.3) == doctest::Approx(0.3).epsilon(1e-12));

    // Per-sample errors 0.1 and 0.3 average to 0.2.
    Matrix t = pred;
    t.leftCols(16).array() -= 0.1;
    t.rightCols(16).array() += 0.3;
    CHECK(forward_loss(m, z, t) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("forward loss is non-negative and zero only on exact agreement")
{
    const ForwardModel m = tiny(3);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> d(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        const Matrix z = random_unit(3, 1 + trial % 4, static_cast<std::uint64_t>(trial));
        Matrix t = m.predict_latent(z);
        CHECK(forward_loss(m, z, t) == 0.0);
        t(rng() % 2, static_cast<Eigen::Index>(rng() % static_cast<unsigned>(t.cols()))) += 1e-3 * (1.0 + std::abs(d(rng)));
        CHECK(forward_loss(m, z, t) > 0.0);
    }
}

TEST_CASE("forward loss rejects NaN predictions and shape mismatches")
{
    ForwardModel m = tiny(4);
    const Matrix z = random_unit(3, 2, 1);
    CHECK_THROWS_AS(forward_loss(m, z, Matrix::Zero(2, 16)), ConfigError);
    CHECK_THROWS_AS(m.predict_latent(random_unit(2, 2, 1)), ConfigError);
    m.weights()[m.layout().find("proj2.bias").offset] = std::nan("");
    CHECK_THROWS_AS(forward_loss(m, z, Matrix::Zero(2, 32)), NumericalError);
}

TEST_CASE("predictions on a doubled grid subsample to the latent grid")
{
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const ForwardModel m = tiny(seed, 32);
        const Matrix z = random_unit(3, 1, seed + 10);
        const Matrix latent = m.predict_latent(z);
        const auto fine_pts = spectral::uniform_points(64);
        const Matrix fine = m.predict_at(z.col(0), fine_pts);
        Matrix even(2, 32);
        for (Eigen::Index i = 0; i < 32; ++i) even.col(i) = fine.col(2 * i);
        CHECK((even - latent).cwiseAbs().maxCoeff() < 1e-6);

        // Retained coefficients of the hidden interpolant agree on the two grids.
        const Matrix again = m.predict_at(z.col(0), spectral::uniform_points(32));
        CHECK((again - latent).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("arbitrary query points must lie in one normalized period")
{
    const ForwardModel m = tiny(1);
    const std::vector<double> bad{0.2, 1.0};
    CHECK_THROWS_AS(m.predict_at(Vector::Constant(3, 0.5), bad), ConfigError);
    const std::vector<double> ok{0.0, 0.31, 0.999};
    CHECK(m.predict_at(Vector::Constant(3, 0.5), ok).cols() == 3);
}

TEST_CASE("grid convention maps the training grid to n / N")
{
    const auto g = linspace(0.0, 10.0, 128);
    const GridConvention c = GridConvention::from_uniform_grid(g);
    CHECK(c.origin == 0.0);
    CHECK(c.period == doctest::Approx(10.0 * 128.0 / 127.0));
    const auto tau = c.normalize(g);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(tau[i] == doctest::Approx(static_cast<double>(i) / 128.0));
    CHECK(c.is_uniform(g));
    const std::vector<double> outside{-1.0};
    CHECK_THROWS_AS(c.normalize(outside), ConfigError);
}
