#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include <unistd.h>

#include "fuse/dataset_io.hpp"
#include "fuse/synth_pde.hpp"

using namespace fuse;
namespace fs = std::filesystem;

namespace {

Dataset two_channel_dataset()
{
    ParameterPrior prior({"p"}, {0.0}, {1.0});
    Dataset d(prior, {0.0, 1.0, 2.0}, {"u0", "u1"}, {"s0"});
    auto add = [&](double p, Matrix u, Split split) {
        Matrix s = u.topRows(1);
        d.add({ParameterVector({p}), FunctionSample(d.grid(), u, d.u_channels()), FunctionSample(d.grid(), s, d.s_channels()), split});
    };
    Matrix a(2, 3), b(2, 3), c(2, 3);
    a << 2, 3, 4, -1, 0, 1;
    b << 2.5, 3.5, 2, 5, 7, 6;
    c << 100, -100, 0, 100, 100, -100;  // validation only, must not affect the statistics
    add(0.1, a, Split::train);
    add(0.2, b, Split::train);
    add(0.3, c, Split::val);
    return d;
}

fs::path temp_dir(const std::string& name)
{
    fs::path p = fs::temp_directory_path() / ("fuse_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("min-max statistics map the training range onto [0, 1]")
{
    const Dataset d = two_channel_dataset();
    const auto st = fit_normalization(d, NormalizationMode::min_max);
    // Direct scan of the train records, per row.
    for (Eigen::Index ch = 0; ch < 2; ++ch) {
        double lo = 1e300, hi = -1e300;
        for (auto i : d.indices(Split::train)) {
            lo = std::min(lo, d[i].u.values().row(ch).minCoeff());
            hi = std::max(hi, d[i].u.values().row(ch).maxCoeff());
        }
        CHECK(st.lower[static_cast<std::size_t>(ch)] == lo);
        CHECK(st.upper[static_cast<std::size_t>(ch)] == hi);
    }
    CHECK(st.lower[0] == 2.0);
    CHECK(st.upper[0] == 4.0);
    const Matrix n = normalize(d[0].u.values(), st);
    CHECK(n(0, 0) == 0.0);
    CHECK(n(0, 2) == 1.0);
}

TEST_CASE("max-scale divides by the per-channel maximum")
{
    ParameterPrior prior({"p"}, {0.0}, {1.0});
    Dataset d(prior, {0.0, 1.0}, {"u"}, {"s"});
    Matrix v(1, 2);
    v << 5, 2;
    d.add({ParameterVector({0.5}), FunctionSample(d.grid(), v, {"u"}), FunctionSample(d.grid(), v, {"s"}), Split::train});
    const auto st = fit_normalization(d, NormalizationMode::max_scale);
    CHECK(st.lower[0] == 0.0);
    CHECK(st.upper[0] == 5.0);

    NormalizationStats four{NormalizationMode::max_scale, {0.0}, {4.0}};
    Matrix x(1, 1);
    x << 2.0;
    CHECK(normalize(x, four)(0, 0) == 0.5);
    NormalizationStats two{NormalizationMode::min_max, {0.0}, {2.0}};
    x << 1.0;
    CHECK(normalize(x, two)(0, 0) == 0.5);
}

TEST_CASE("zero-range channel in min-max mode names the channel")
{
    ParameterPrior prior({"p"}, {0.0}, {1.0});
    Dataset d(prior, {0.0, 1.0}, {"flat", "ok"}, {"s"});
    Matrix u(2, 2);
    u << 3, 3, 0, 1;
    d.add({ParameterVector({0.5}), FunctionSample(d.grid(), u, d.u_channels()),
           FunctionSample(d.grid(), u.topRows(1), {"s"}), Split::train});
    try {
        fit_normalization(d, NormalizationMode::min_max);
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("flat") != std::string::npos);
    }
}

TEST_CASE("normalization round trip is the identity for both modes")
{
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> d(-50.0, 50.0), w(0.1, 30.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int ch = 1 + trial % 4;
        NormalizationStats st{trial % 2 ? NormalizationMode::min_max : NormalizationMode::max_scale, {}, {}};
        for (int c = 0; c < ch; ++c) {
            const double lo = st.mode == NormalizationMode::min_max ? d(rng) : 0.0;
            st.lower.push_back(lo);
            st.upper.push_back(lo + w(rng));
        }
        Matrix x(ch, 17);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
        const Matrix back = denormalize(normalize(x, st), st);
        CHECK((back - x).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("normalization rejects a channel mismatch")
{
    NormalizationStats st{NormalizationMode::min_max, {0.0}, {1.0}};
    CHECK_THROWS(normalize(Matrix::Zero(2, 3), st));
}

TEST_CASE("masking zero-fills exactly the masked channels")
{
    Matrix v(2, 4);
    v << 1, 2, 3, 4, 5, 6, 7, 8;
    const FunctionSample s({0, 1, 2, 3}, v, {"a", "b"});
    CHECK(apply_mask(s, ChannelMask::all(2)) == s);
    const auto none = apply_mask(s, ChannelMask::none(2));
    CHECK(none.values().isZero(0.0));
    CHECK(none.grid() == s.grid());
    ChannelMask keep0{{true, false}};
    const auto k0 = apply_mask(s, keep0);
    for (Eigen::Index t = 0; t < 4; ++t) {
        CHECK(k0.values()(0, t) == v(0, t));
        CHECK(k0.values()(1, t) == 0.0);
    }
    CHECK_THROWS_AS(apply_mask(s, ChannelMask::all(3)), ConfigError);
}

TEST_CASE("masking is idempotent on random masks")
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(-1, 1);
    for (int trial = 0; trial < 100; ++trial) {
        const int ch = 1 + trial % 5;
        Matrix v(ch, 9);
        for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = d(rng);
        std::vector<std::string> names;
        ChannelMask m;
        for (int c = 0; c < ch; ++c) {
            names.push_back("c" + std::to_string(c));
            m.keep.push_back(rng() % 2 == 0);
        }
        const FunctionSample s(linspace(0, 1, 9), v, names);
        const auto once = apply_mask(s, m);
        CHECK(apply_mask(once, m) == once);
    }
}

TEST_CASE("mask specs: all, none, channel lists and unknown names")
{
    const std::vector<std::string> ch{"T@x=5", "T@x=8"};
    CHECK(parse_mask("none", ch).keep == std::vector<bool>{true, true});
    CHECK(parse_mask("", ch).keep == std::vector<bool>{true, true});
    CHECK(parse_mask("all", ch).keep == std::vector<bool>{false, false});
    CHECK(parse_mask("T@x=8", ch).keep == std::vector<bool>{true, false});
    CHECK_THROWS_AS(parse_mask("T@x=9", ch), ConfigError);
}

TEST_CASE("function samples validate shape, grid order and finiteness")
{
    CHECK_THROWS(FunctionSample({0.0, 1.0}, Matrix::Zero(1, 3), {"a"}));
    CHECK_THROWS(FunctionSample({0.0, 0.0}, Matrix::Zero(1, 2), {"a"}));
    CHECK_THROWS(FunctionSample({0.0, 1.0}, Matrix::Zero(2, 2), {"a"}));
    Matrix bad = Matrix::Zero(1, 2);
    bad(0, 1) = std::nan("");
    CHECK_THROWS(FunctionSample({0.0, 1.0}, bad, {"a"}));
}

TEST_CASE("parameter vectors and prior maps")
{
    ParameterPrior prior({"a", "b"}, {0.0, -2.0}, {2.0, 2.0});
    CHECK_THROWS(ParameterVector({1.0}).validate(2));
    CHECK_THROWS(ParameterVector({1.0, std::nan("")}).validate(2));
    CHECK_THROWS(ParameterPrior({"a"}, {1.0}, {1.0}));
    const ParameterVector x({1.5, 1.0});
    const Vector z = prior.to_unit(x);
    CHECK(z(0) == doctest::Approx(0.75));
    CHECK(z(1) == doctest::Approx(0.75));
    CHECK(prior.from_unit(z)[0] == doctest::Approx(1.5));
    CHECK(prior.index_of("b") == 1);
    CHECK_THROWS_AS(prior.index_of("zz"), ConfigError);
}

TEST_CASE("split sizes sum to the record count")
{
    const auto p = synth::SynthProblem::standard();
    for (std::size_t tr : {1u, 5u, 13u}) {
        const Dataset d = synth::generate_dataset(p, SplitCounts{tr, 3, 2}, 4);
        const auto c = d.counts();
        CHECK(c.train + c.val + c.test == d.size());
        CHECK(c.train == tr);
        const auto sub = d.subset({2, 1, 5});
        CHECK(sub.counts().train == std::min<std::size_t>(tr, 2));
        CHECK(sub.counts().val == 1);
        CHECK(sub.counts().test == 2);
    }
}

TEST_CASE("dataset files round trip and are byte-identical for a fixed seed")
{
    const auto p = synth::SynthProblem::standard();
    const Dataset d = synth::generate_dataset(p, SplitCounts{4, 2, 1}, 9);
    const fs::path a = temp_dir("ds_a"), b = temp_dir("ds_b");
    save_dataset(a, d, {NormalizationMode::min_max, "abc", false});
    save_dataset(b, synth::generate_dataset(p, SplitCounts{4, 2, 1}, 9), {NormalizationMode::min_max, "abc", false});
    for (const char* f : {"manifest.json", "params.bin", "u.bin", "s.bin"}) CHECK(slurp(a / f) == slurp(b / f));
    CHECK(fs::file_size(a / "params.bin") == 7 * 5 * 8);
    CHECK(fs::file_size(a / "u.bin") == 7 * 4 * 128 * 8);

    CHECK_THROWS_AS(save_dataset(a, d, {}), ConfigError);
    save_dataset(a, d, {NormalizationMode::min_max, "abc", true});

    const LoadedDataset back = load_dataset(a);
    REQUIRE(back.dataset.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(back.dataset[i].xi == d[i].xi);
        CHECK(back.dataset[i].u == d[i].u);
        CHECK(back.dataset[i].split == d[i].split);
    }
    CHECK(back.manifest["config_hash"] == "abc");
    CHECK(back.manifest["splits"]["train"] == 4);
    CHECK_THROWS_AS(load_dataset(temp_dir("missing")), DataError);
    fs::remove_all(a);
    fs::remove_all(b);
}
