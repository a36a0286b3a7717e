#include <doctest.h>

#include "fuse/forward_model.hpp"
#include "fuse/inverse_model.hpp"
#include "gradcheck.hpp"

using namespace fuse;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double lo = 0.0, double hi = 1.0)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = d(rng);
    return m;
}

}  // namespace

TEST_CASE("forward L1 gradient matches central differences on a tiny model")
{
    ForwardConfig cfg{4, 4, 2, 6, 16};
    ForwardModel model(3, 2, cfg);
    model.initialize(7);
    const Matrix z = random_matrix(3, 5, 1);
    const Matrix targets = random_matrix(2, 5 * 16, 2, -1.0, 1.0);

    std::vector<double> grad;
    forward_loss_gradient(model, z, targets, grad);
    auto& w = model.weights();
    const auto res = testing::check_gradient(w, grad, [&] { return forward_loss(model, z, targets); }, 100, 11);
    CHECK(res.max_rel < 1e-4);
}

TEST_CASE("forward gradient is unchanged by the thread count")
{
    ForwardConfig cfg{4, 4, 2, 6, 16};
    ForwardModel model(3, 2, cfg);
    model.initialize(3);
    const Matrix z = random_matrix(3, 40, 4);
    const Matrix targets = random_matrix(2, 40 * 16, 5);
    std::vector<double> g1, g3;
    const double l1 = forward_loss_gradient(model, z, targets, g1, 1);
    const double l3 = forward_loss_gradient(model, z, targets, g3, 3);
    CHECK(l1 == l3);
    CHECK(g1 == g3);
}

TEST_CASE("FMPE gradient matches central differences on a tiny model")
{
    InverseModel model(3, 2, EncoderConfig{4, 4, 2, 16}, FlowConfig{8, 2, 2, 1e-4});
    model.initialize(5);
    const Eigen::Index batch = 6;
    const Matrix inputs = random_matrix(2, batch * 16, 6);
    const Matrix xi1 = random_matrix(3, batch, 7);
    std::mt19937_64 rng(8);
    const FmpeDraws draws = draw_fmpe(3, batch, rng);

    std::vector<double> grad;
    fmpe_loss(model, inputs, xi1, draws, &grad);
    const auto loss = [&] { return fmpe_loss(model, inputs, xi1, draws, nullptr); };

    // Encoder and flow weights separately, so both halves are exercised.
    std::vector<double> enc(model.weights.begin(), model.weights.begin() + static_cast<long>(model.flow_offset));
    std::vector<double> enc_grad(grad.begin(), grad.begin() + static_cast<long>(model.flow_offset));
    const auto sync_loss = [&] {
        std::copy(enc.begin(), enc.end(), model.weights.begin());
        return loss();
    };
    const auto r_enc = testing::check_gradient(enc, enc_grad, sync_loss, 100, 21);
    std::copy(enc.begin(), enc.end(), model.weights.begin());
    CHECK(r_enc.max_rel < 1e-4);

    const auto r_all = testing::check_gradient(model.weights, grad, loss, 100, 22);
    CHECK(r_all.max_rel < 1e-4);
}
