// End-to-end acceptance run on the synthetic advection-diffusion problem.
// Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
//
// Trained checkpoints are cached under --cache keyed by the run hash; training is
// deterministic, so a cached model is the model a fresh run would produce.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "fuse/dataset_io.hpp"
#include "fuse/fuse_model.hpp"
#include "fuse/run_config.hpp"
#include "fuse/synth_pde.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace fuse;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Settings {
    fs::path cache;
    bool fresh = false;
    int threads = 1;
    std::size_t epochs = 400;
    std::size_t subset = 64;  // test inputs used for the M = 4096 and full-mask checks
};

std::map<int, std::pair<bool, std::string>> g_results;

void report(int id, const std::string& name, bool pass, const std::string& detail)
{
    std::string line = (pass ? "PASS" : "FAIL") + std::string(" criterion-") + std::to_string(id) + " " + name + ": " + detail;
    std::cerr << line << "\n";
    g_results[id] = {pass, std::move(line)};
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

RunConfig acceptance_config(const Settings& s)
{
    RunConfig c;
    c.model.flow.hidden = 128;
    c.model.flow.layers = 3;
    c.train.epochs = s.epochs;
    c.train.seed = 0;
    return c;
}

struct Trained {
    FuseModel model;
    double train_seconds = 0.0;
};

Trained train_or_load(const RunConfig& cfg, const Dataset& data, const Settings& s, const std::string& tag)
{
    nlohmann::json key = cfg.to_json();
    key["train_subset"] = data.counts().train;
    const fs::path dir = s.cache / (tag + "_" + json_hash(key));
    if (!s.fresh && fs::exists(dir / "model.json") && fs::exists(dir / "training_log.json")) {
        Trained t{load_checkpoint(dir)};
        const nlohmann::json log = read_json_file(dir / "training_log.json");
        for (const auto& e : log.at("epochs")) t.train_seconds += e.at("seconds").get<double>();
        std::cerr << tag << ": loaded cached model from " << dir << "\n";
        return t;
    }
    FuseModel model = FuseModel::create(data, cfg.model, cfg.train);
    Trainer trainer(model, data, s.threads);
    const TrainingLog log = trainer.run([&](const EpochLog& e) {
        if (e.epoch % 25 == 0 || e.epoch + 1 == cfg.train.epochs) {
            std::cerr << tag << " epoch " << e.epoch << " l1 " << e.train_l1 << " fmpe " << e.train_fmpe << " val "
                      << e.val_l1 << " " << e.val_fmpe << " (" << e.seconds << " s)\n";
        }
    });
    Trained t{std::move(model)};
    for (const auto& e : log.epochs) t.train_seconds += e.seconds;
    save_checkpoint(dir, t.model, cfg.hash(), true);
    write_json_file(dir / "training_log.json", log.to_json());
    return t;
}

double mean_of(const std::vector<double>& v) { return metrics::summarize(v).mean; }

// ---------------------------------------------------------------------------------------------

void oracle_suite()
{
    const auto t0 = Clock::now();
    std::vector<std::string> failed;
    auto need = [&](bool ok, const char* what) {
        if (!ok) failed.emplace_back(what);
    };

    std::mt19937_64 rng(2024);
    double crps_err = 0.0;
    for (int i = 0; i < 50; ++i) {
        const auto c = testing::lattice_case(rng);
        crps_err = std::max(crps_err, std::abs(metrics::crps_empirical(c.ensemble, c.y) -
                                               testing::crps_cdf_integral(c.ensemble, c.y)));
    }
    need(crps_err < 1e-6, "crps");

    const Matrix ones = Matrix::Ones(1, 4);
    Matrix bumped = ones;
    bumped(0, 0) += 1.0;
    need(metrics::relative_lp_error(ones, ones, 1) == 0.0, "lp-equal");
    need(std::abs(metrics::relative_lp_error(1.1 * ones, ones, 1) - 0.1) < 1e-12, "lp-scale-1");
    need(std::abs(metrics::relative_lp_error(1.1 * ones, ones, 2) - 0.1) < 1e-12, "lp-scale-2");
    need(std::abs(metrics::relative_lp_error(bumped, ones, 1) - 0.25) < 1e-12, "lp-point");

    std::normal_distribution<double> nd(0.0, 1.0);
    auto randm = [&](Eigen::Index r, Eigen::Index c) {
        Matrix m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
        return m;
    };
    double dft_err = 0.0;
    for (Eigen::Index n : {8, 33, 128, 256}) {
        const Matrix x = randm(3, n);
        const Matrix back = spectral::idft_on_grid(spectral::dft_truncated(x, {static_cast<int>(n / 2 + 1)}),
                                                   spectral::uniform_points(n));
        dft_err = std::max(dft_err, (back - x).cwiseAbs().maxCoeff());
    }
    need(dft_err < 1e-10, "dft");

    // Band-limited discretization invariance.
    spectral::LiftingWeights lw(spectral::LiftingShape{5, 3, 16});
    for (double& v : lw.data()) v = nd(rng);
    const Vector xi = randm(5, 1);
    const auto la = spectral::dft_truncated(spectral::band_limited_lifting(xi, lw, spectral::uniform_points(128)), {16});
    const auto lb = spectral::dft_truncated(spectral::band_limited_lifting(xi, lw, spectral::uniform_points(256)), {16});
    const double lift_err = std::max((la.re - lb.re).cwiseAbs().maxCoeff(), (la.im - lb.im).cwiseAbs().maxCoeff());
    need(lift_err < 1e-8, "lifting");

    InverseModel inv(5, 4, EncoderConfig{}, FlowConfig{32, 2, 4, 1e-4});
    inv.initialize(3);
    spectral::Spectrum band{randm(4, 12), randm(4, 12)};
    band.im.col(0).setZero();
    const Vector e128 = inv.encoder.encode(inv.encoder_weights(), spectral::idft_on_grid(band, spectral::uniform_points(128)));
    const Vector e256 = inv.encoder.encode(inv.encoder_weights(), spectral::idft_on_grid(band, spectral::uniform_points(256)));
    const double enc_err = (e128 - e256).cwiseAbs().maxCoeff();
    need(enc_err < 1e-8, "encoder");

    ForwardModel fwd(5, 4, ForwardConfig{});
    fwd.initialize(4);
    const Vector z = (randm(5, 1).array() * 0.2 + 0.5).matrix();
    const Matrix coarse = fwd.predict_latent(z);
    const Matrix fine = fwd.predict_at(z, spectral::uniform_points(256));
    double fwd_err = 0.0;
    for (Eigen::Index i = 0; i < 128; ++i) fwd_err = std::max(fwd_err, (fine.col(2 * i) - coarse.col(i)).cwiseAbs().maxCoeff());
    need(fwd_err < 1e-8, "forward");

    const Matrix base = base_draws(5, 64, 1);
    const Matrix decayed = integrate_flow([](double, const Matrix& x) { return (-x).eval(); }, base, 100);
    const double ode_err = ((decayed - std::exp(-1.0) * base).cwiseAbs().array() / (std::exp(-1.0) * base).cwiseAbs().array()).maxCoeff();
    need(ode_err < 1e-6, "sampler");

    const double sigma = 1e-4;
    Matrix xi1(3, 1);
    xi1 << 0.2, 0.6, 0.95;
    const Eigen::Index nd_draws = 100000;
    const Matrix target = xi1.replicate(1, nd_draws);
    const FmpeDraws draws = draw_fmpe(3, nd_draws, rng);
    const VelocityFn analytic = [&](std::span<const double> t, const Matrix& x) {
        Matrix v(x.rows(), x.cols());
        for (Eigen::Index b = 0; b < x.cols(); ++b) {
            v.col(b) = (target.col(b) - (1.0 - sigma) * x.col(b)) / (1.0 - (1.0 - sigma) * t[static_cast<std::size_t>(b)]);
        }
        return v;
    };
    const double fm = fmpe_monte_carlo(analytic, target, draws, sigma);
    need(fm < 1e-3, "fmpe");

    int violations = 0;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 8, k = 1 + rng() % 8;
        std::vector<double> p(n), q(n);
        double sp = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sp += p[i] = u01(rng);
            sq += q[i] = u01(rng);
        }
        for (std::size_t i = 0; i < n; ++i) {
            p[i] /= sp;
            q[i] /= sq;
        }
        std::vector<std::size_t> map(n);
        for (auto& m : map) m = rng() % k;
        const auto c = metrics::tv_pushforward_check(p, q, map, k);
        if (c.after > c.before + 1e-12) ++violations;
    }
    need(violations == 0, "tv");

    const double secs = seconds_since(t0);
    need(secs < 60.0, "time");
    std::string f;
    for (const auto& s : failed) f += " " + s;
    report(4, "oracle-suites", failed.empty(),
           fmt("crps %.1e, dft %.1e, lifting %.1e, encoder %.1e, forward %.1e, rk4 %.1e, fmpe %.1e, tv violations %d, %.1f s%s%s",
               crps_err, dft_err, lift_err, enc_err, fwd_err, ode_err, fm, violations, secs,
               failed.empty() ? "" : "; failed:", f.c_str()));
}

void gradient_checks()
{
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto randm = [&](Eigen::Index r, Eigen::Index c, double lo, double hi) {
        Matrix m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * u(rng);
        return m;
    };

    ForwardModel fwd(3, 2, ForwardConfig{4, 4, 2, 6, 16});
    fwd.initialize(7);
    const Matrix z = randm(3, 5, 0.0, 1.0), s = randm(2, 80, -1.0, 1.0);
    std::vector<double> gf;
    forward_loss_gradient(fwd, z, s, gf);
    const auto rf = testing::check_gradient(fwd.weights(), gf, [&] { return forward_loss(fwd, z, s); }, 100, 11);

    InverseModel inv(3, 2, EncoderConfig{4, 4, 2, 16}, FlowConfig{8, 2, 2, 1e-4});
    inv.initialize(5);
    const Matrix inputs = randm(2, 6 * 16, 0.0, 1.0), xi1 = randm(3, 6, 0.0, 1.0);
    const FmpeDraws draws = draw_fmpe(3, 6, rng);
    std::vector<double> gi;
    fmpe_loss(inv, inputs, xi1, draws, &gi);
    const auto ri = testing::check_gradient(inv.weights, gi, [&] { return fmpe_loss(inv, inputs, xi1, draws, nullptr); }, 100, 22);

    report(5, "gradient-checks", rf.max_rel < 1e-4 && ri.max_rel < 1e-4,
           fmt("L1 max rel %.2e, FMPE max rel %.2e (100 weights each, tol 1e-4)", rf.max_rel, ri.max_rel));
}

// ---------------------------------------------------------------------------------------------

struct PosteriorChecks {
    double crps_512 = 0.0, crps_4096 = 0.0;
    double coverage = 0.0;
    double ks_max = 0.0;
    std::vector<double> ks_per_param;
    double seconds = 0.0;
};

PosteriorChecks posterior_checks(const FuseModel& model, const Dataset& data, const Settings& s)
{
    const auto t0 = Clock::now();
    const auto test = data.indices(Split::test);
    const auto m = static_cast<Eigen::Index>(model.params());
    const std::size_t sub = std::min(s.subset, test.size());
    PosteriorChecks out;
    out.ks_per_param.assign(static_cast<std::size_t>(m), 0.0);
    std::vector<double> c512, c4096;
    std::size_t covered = 0;

    for (std::size_t r = 0; r < test.size(); ++r) {
        const Record& rec = data[test[r]];
        const std::uint64_t seed = make_stream(7, test[r], 0xC0)();
        const Eigen::Index count = r < sub ? 4096 : 512;
        const PosteriorEnsemble ens = model.sample_posterior(rec.u.values(), ChannelMask{}, count, 64, seed, s.threads);
        const Eigen::Map<const Vector> truth(rec.xi.values.data(), m);
        // Base draws are prefix-stable, so the first 512 members are the M = 512 ensemble.
        const PosteriorEnsemble head{ens.samples.topRows(512)};
        bool inside = true;
        for (Eigen::Index j = 0; j < m; ++j) {
            inside = inside && truth(j) >= head.samples.col(j).minCoeff() && truth(j) <= head.samples.col(j).maxCoeff();
        }
        covered += inside ? 1 : 0;
        if (r < sub) {
            c512.push_back(metrics::crps_parameters(head, truth, model.prior));
            c4096.push_back(metrics::crps_parameters(ens, truth, model.prior));
        }
    }
    out.crps_512 = mean_of(c512);
    out.crps_4096 = mean_of(c4096);
    out.coverage = static_cast<double>(covered) / static_cast<double>(test.size());

    const ChannelMask none = ChannelMask::none(model.u_channels.size());
    for (std::size_t r = 0; r < sub; ++r) {
        const Record& rec = data[test[r]];
        const PosteriorEnsemble ens = model.sample_posterior(rec.u.values(), none, 512, 64, make_stream(8, test[r], 0xC1)(), s.threads);
        for (Eigen::Index j = 0; j < m; ++j) {
            const std::vector<double> col(ens.samples.col(j).data(), ens.samples.col(j).data() + ens.size());
            const auto ju = static_cast<std::size_t>(j);
            const double ks = metrics::ks_uniform(col, model.prior.lower()[ju], model.prior.upper()[ju]);
            out.ks_per_param[ju] = std::max(out.ks_per_param[ju], ks);
            out.ks_max = std::max(out.ks_max, ks);
        }
    }
    out.seconds = seconds_since(t0);
    return out;
}

void sensitivity_check(const FuseModel& model, const synth::SynthProblem& problem)
{
    const std::size_t ia = model.prior.index_of("a"), ic = model.prior.index_of("c");
    const double lo = model.prior.lower()[ia], w = model.prior.width(ia);
    const std::vector<double> ga = linspace(lo - 0.1 * w, lo + 1.1 * w, 20);
    const std::vector<double> gc = linspace(model.prior.lower()[ic], model.prior.upper()[ic], 20);
    const ParameterVector mid = model.prior.midpoint();
    FingerprintOptions opt;
    opt.allow_ood = true;
    const Matrix pred = pairwise_fingerprint(model, ia, ic, ga, gc, mid, opt);

    double num = 0.0, den = 0.0, worst_in = 0.0, worst_ood = 0.0;
    for (std::size_t i = 0; i < ga.size(); ++i) {
        for (std::size_t j = 0; j < gc.size(); ++j) {
            ParameterVector x = mid;
            x[ia] = ga[i];
            x[ic] = gc[j];
            const FunctionSample truth = synth::solve_closed_form(x, problem.sensors, problem.grid, problem.channel_names());
            const double t = truth.values().row(0).maxCoeff();
            const double err = std::abs(pred(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - t);
            num += err;
            den += std::abs(t);
            const bool ood = ga[i] < lo || ga[i] > lo + w;
            double& worst = ood ? worst_ood : worst_in;
            worst = std::max(worst, err / std::abs(t));
        }
    }
    const double agg = num / den;
    report(7, "sensitivity-fingerprint", agg < 0.05,
           fmt("20x20 (a, c) peak of %s, a in [%.2f, %.2f]: aggregate rel L1 %.4f < 0.05 (worst point in-prior %.4f, out-of-prior %.4f)",
               problem.channel_names()[0].c_str(), ga.front(), ga.back(), agg, worst_in, worst_ood));
}

}  // namespace

int main(int argc, char** argv)
{
    Settings s;
    s.cache = "acceptance_cache";
    const unsigned hw = std::thread::hardware_concurrency();
    s.threads = hw > 0 ? static_cast<int>(hw) : 1;
    CLI::App app{"FUSE acceptance run"};
    app.add_option("--cache", s.cache, "Directory for trained checkpoints");
    app.add_flag("--fresh", s.fresh, "Retrain even when a cached checkpoint exists");
    app.add_option("--threads", s.threads);
    app.add_option("--epochs", s.epochs);
    app.add_option("--subset", s.subset, "Test inputs for the M = 4096 and full-mask checks");
    CLI11_PARSE(app, argc, argv);

    try {
        oracle_suite();
        gradient_checks();

        const RunConfig cfg = acceptance_config(s);
        const auto tg = Clock::now();
        const Dataset data = synth::generate_dataset(cfg.problem, cfg.data.counts, cfg.data.seed);
        const double gen_seconds = seconds_since(tg);

        // Criterion 1 on the full training set.
        const Trained full = train_or_load(cfg, data, s, "n2048");
        EvaluateOptions eo;
        eo.ensemble_size = 128;
        eo.steps = 64;
        eo.threads = s.threads;
        const auto te = Clock::now();
        const metrics::MetricReport r2048 = evaluate(full.model, data, eo);
        const double eval_seconds = seconds_since(te);
        const double fwd = mean_of(r2048.block("forward").rel_l1);
        const double uni = mean_of(r2048.block("unified").rel_l1);
        const double crps = 100.0 * mean_of(r2048.block("inverse").crps);
        const double prior_crps = 100.0 * mean_of(r2048.block("prior_baseline").crps);
        const double minutes = (gen_seconds + full.train_seconds + eval_seconds) / 60.0;
        report(1, "synthetic-end-to-end", fwd < 0.02 && uni < 0.05 && crps < 5.0 && minutes < 45.0,
               fmt("forward rel L1 %.4f < 0.02, unified rel L1 %.4f < 0.05, CRPSx100 %.3f < 5 (prior %.3f), %zu epochs, %.1f min < 45",
                   fwd, uni, crps, prior_crps, cfg.train.epochs, minutes));

        // Criterion 2: same configuration on the first 128 and 512 training records.
        std::vector<double> crps_n, uni_n;
        for (std::size_t n : {128u, 512u}) {
            const Dataset sub = data.subset(SplitCounts{n, cfg.data.counts.val, cfg.data.counts.test});
            const Trained t = train_or_load(cfg, sub, s, "n" + std::to_string(n));
            const metrics::MetricReport r = evaluate(t.model, sub, eo);
            crps_n.push_back(100.0 * mean_of(r.block("inverse").crps));
            uni_n.push_back(mean_of(r.block("unified").rel_l1));
        }
        crps_n.push_back(crps);
        uni_n.push_back(uni);
        report(2, "data-scaling", crps_n[0] > crps_n[1] && crps_n[1] > crps_n[2] && uni_n[0] > uni_n[1] && uni_n[1] > uni_n[2],
               fmt("n = 128/512/2048: CRPSx100 %.3f > %.3f > %.3f, unified rel L1 %.4f > %.4f > %.4f", crps_n[0], crps_n[1],
                   crps_n[2], uni_n[0], uni_n[1], uni_n[2]));

        const PosteriorChecks pc = posterior_checks(full.model, data, s);
        const double rel = std::abs(pc.crps_512 - pc.crps_4096) / pc.crps_4096;
        report(3, "ensemble-size-plateau", rel < 0.10,
               fmt("first %zu test inputs: CRPSx100 M=512 %.4f vs M=4096 %.4f, relative difference %.4f < 0.10", s.subset,
                   100.0 * pc.crps_512, 100.0 * pc.crps_4096, rel));

        std::ostringstream ks;
        for (std::size_t j = 0; j < pc.ks_per_param.size(); ++j) {
            ks << (j ? ", " : "") << full.model.prior.names()[j] << ' ' << fmt("%.3f", pc.ks_per_param[j]);
        }
        report(6, "posterior-sanity", pc.coverage >= 0.90 && pc.ks_max < 0.2,
               fmt("min-max box coverage at M=512 %.4f >= 0.90 over %zu test inputs; full-mask max KS %.3f < 0.2 (%s) over %zu inputs",
                   pc.coverage, data.indices(Split::test).size(), pc.ks_max, ks.str().c_str(), s.subset));

        sensitivity_check(full.model, cfg.problem);
    } catch (const std::exception& e) {
        for (int id = 1; id <= 7; ++id) {
            if (!g_results.count(id)) g_results[id] = {false, "FAIL criterion-" + std::to_string(id) + ": not reached, run aborted: " + e.what()};
        }
    }
    bool ok = true;
    for (const auto& [id, r] : g_results) {
        std::printf("%s\n", r.second.c_str());
        ok = ok && r.first;
    }
    return ok ? 0 : 1;
}
