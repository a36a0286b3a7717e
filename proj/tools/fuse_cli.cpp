#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fuse/dataset_io.hpp"
#include "fuse/fuse_model.hpp"
#include "fuse/run_config.hpp"
#include "fuse/synth_pde.hpp"

namespace fs = std::filesystem;
using namespace fuse;

namespace {

fs::path output_path(const std::string& p, const RunConfig* cfg)
{
    fs::path path(p);
    if (path.is_absolute()) return path;
    if (const char* root = std::getenv("FUSE_OUTPUT_ROOT"); root && *root) return fs::path(root) / path;
    if (cfg && !cfg->output_root.empty()) return fs::path(cfg->output_root) / path;
    return path;
}

RunConfig load_config(const std::string& path)
{
    return path.empty() ? RunConfig{} : RunConfig::load(path);
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::string fmt(double v)
{
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string model_hash(const fs::path& dir)
{
    return read_json_file(dir / "model.json").value("config_hash", std::string{});
}

ParameterVector parse_defaults(const std::string& spec, const ParameterPrior& prior)
{
    ParameterVector d = prior.midpoint();
    if (spec.empty()) return d;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("--defaults entries look like name=value, got '" + item + "'");
        try {
            d[prior.index_of(item.substr(0, eq))] = std::stod(item.substr(eq + 1));
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad number in --defaults entry '" + item + "'");
        }
    }
    return d;
}

std::pair<double, double> parse_range(const std::string& s)
{
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ConfigError("ranges look like lo:hi, got '" + s + "'");
    try {
        return {std::stod(s.substr(0, colon)), std::stod(s.substr(colon + 1))};
    } catch (const std::invalid_argument&) {
        throw ConfigError("bad number in range '" + s + "'");
    }
}

// ---------------------------------------------------------------------------------------------

struct GenerateArgs {
    std::string config, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n_train, n_val, n_test;
    bool force = false;
};

int run_generate(const GenerateArgs& a)
{
    RunConfig cfg = load_config(a.config);
    if (a.seed) cfg.data.seed = *a.seed;
    if (a.n_train) cfg.data.counts.train = *a.n_train;
    if (a.n_val) cfg.data.counts.val = *a.n_val;
    if (a.n_test) cfg.data.counts.test = *a.n_test;
    if (cfg.data.counts.total() == 0) throw ConfigError("dataset needs at least one record");
    const fs::path out = output_path(a.out, &cfg);
    const Dataset d = synth::generate_dataset(cfg.problem, cfg.data.counts, cfg.data.seed);
    save_dataset(out, d, {cfg.data.normalization, cfg.hash(), a.force});
    const auto c = d.counts();
    std::cout << "wrote " << out.string() << ": " << c.total() << " records (train " << c.train << ", val " << c.val
              << ", test " << c.test << "), m=" << d.prior().dim() << ", channels=" << d.u_channels().size()
              << ", N=" << d.grid().size() << ", seed=" << cfg.data.seed << ", config_hash=" << cfg.hash() << "\n";
    return 0;
}

struct TrainArgs {
    std::string data, config, out;
    std::optional<std::size_t> epochs;
    std::optional<std::uint64_t> seed;
    bool force = false;
    bool quiet = false;
    int threads = 1;
};

int run_train(const TrainArgs& a)
{
    RunConfig cfg = load_config(a.config);
    if (a.epochs) cfg.train.epochs = *a.epochs;
    if (a.seed) cfg.train.seed = *a.seed;
    const fs::path out = output_path(a.out, &cfg);
    if (fs::exists(out) && !a.force) throw ConfigError("output '" + out.string() + "' exists; pass --force to overwrite");
    const LoadedDataset loaded = load_dataset(a.data);
    cfg.train.normalization = loaded.normalization;
    const auto n = static_cast<int>(loaded.dataset.grid().size());
    if (cfg.model.forward.latent_points != n || cfg.model.encoder.latent_points != n) {
        if (!a.config.empty()) {
            throw ConfigError("config architecture expects " + std::to_string(cfg.model.forward.latent_points) +
                              " grid points but the dataset has " + std::to_string(n));
        }
        cfg.model.forward.latent_points = cfg.model.encoder.latent_points = n;
    }
    FuseModel model = FuseModel::create(loaded.dataset, cfg.model, cfg.train);
    Trainer trainer(model, loaded.dataset, a.threads);
    const TrainingLog log = trainer.run([&](const EpochLog& e) {
        if (a.quiet) return;
        std::cout << "epoch " << e.epoch << "  L1 " << e.train_l1 << "  FMPE " << e.train_fmpe << "  val L1 " << e.val_l1
                  << "  val FMPE " << e.val_fmpe << "  lr " << e.learning_rate << "\n";
    });
    const std::string hash = cfg.hash();
    save_checkpoint(out, model, hash, true);
    nlohmann::json j = log.to_json();
    j["format"] = "fuse-training-log/1";
    j["config_hash"] = hash;
    j["config"] = cfg.to_json();
    write_json_file(out / "training_log.json", j);
    std::cout << "wrote checkpoint " << out.string() << " (best epoch " << log.best_epoch << ", val metric "
              << log.best_metric << ")\n";
    return 0;
}

struct EvaluateArgs {
    std::string model, data, split = "test", mask = "none", report;
    Eigen::Index big_m = 128;
    int steps = 64;
    std::uint64_t seed = 0;
    std::size_t limit = 0;
    bool dirac = false;
    int threads = 1;
};

int run_evaluate(const EvaluateArgs& a)
{
    const FuseModel model = load_checkpoint(a.model);
    const LoadedDataset loaded = load_dataset(a.data);
    EvaluateOptions o;
    o.split = split_from_string(a.split);
    o.ensemble_size = a.big_m;
    o.steps = a.steps;
    o.seed = a.seed;
    o.mask = parse_mask(a.mask, model.u_channels);
    o.dirac = a.dirac;
    o.limit = a.limit;
    o.threads = a.threads;
    metrics::MetricReport r = evaluate(model, loaded.dataset, o);
    const std::string hash = model_hash(a.model);
    r.info["config_hash"] = hash;
    r.info["format"] = "fuse-report/1";
    const std::string csv = r.to_csv(csv_header(hash).substr(2));
    std::cout << csv;
    if (!a.report.empty()) {
        fs::path path = output_path(a.report, nullptr);
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        write_json_file(path, r.to_json());
        write_text(fs::path(path).replace_extension(".csv"), csv);
    }
    return 0;
}

struct InferArgs {
    std::string model, input, out, mask = "none";
    std::size_t index = 0;
    Eigen::Index big_m = 128;
    int steps = 64;
    int bins = 20;
    std::uint64_t seed = 0;
    int threads = 1;
};

int run_infer(const InferArgs& a)
{
    const FuseModel model = load_checkpoint(a.model);
    const LoadedDataset loaded = load_dataset(a.input);
    const Dataset& d = loaded.dataset;
    if (d.u_channels() != model.u_channels || d.grid().size() < 2) throw ConfigError("input layout does not match the model");
    if (a.index >= d.size()) throw ConfigError("--index " + std::to_string(a.index) + " out of range");
    if (a.bins < 1) throw ConfigError("--bins must be positive");
    const ChannelMask mask = parse_mask(a.mask, model.u_channels);
    const PosteriorEnsemble ens = model.sample_posterior(d[a.index].u.values(), mask, a.big_m, a.steps, a.seed, a.threads);
    const std::string header = csv_header(model_hash(a.model));

    std::ostringstream samples;
    samples << header << "\n";
    for (std::size_t j = 0; j < model.prior.dim(); ++j) samples << (j ? "," : "") << model.prior.names()[j];
    samples << "\n";
    for (Eigen::Index i = 0; i < ens.size(); ++i) {
        for (Eigen::Index j = 0; j < ens.dim(); ++j) samples << (j ? "," : "") << fmt(ens.samples(i, j));
        samples << "\n";
    }
    const fs::path out = output_path(a.out, nullptr);
    write_text(out, samples.str());

    std::ostringstream hist;
    hist << header << "\nparameter,bin_lo,bin_hi,count\n";
    for (std::size_t j = 0; j < model.prior.dim(); ++j) {
        const double lo = model.prior.lower()[j], w = model.prior.width(j) / a.bins;
        std::vector<std::size_t> counts(static_cast<std::size_t>(a.bins), 0);
        std::size_t below = 0, above = 0;
        for (Eigen::Index i = 0; i < ens.size(); ++i) {
            const double v = ens.samples(i, static_cast<Eigen::Index>(j));
            if (v < lo) ++below;
            else if (v > model.prior.upper()[j]) ++above;
            else counts[std::min<std::size_t>(static_cast<std::size_t>((v - lo) / w), counts.size() - 1)]++;
        }
        const auto& name = model.prior.names()[j];
        hist << name << ",-inf," << fmt(lo) << "," << below << "\n";
        for (int b = 0; b < a.bins; ++b) {
            hist << name << "," << fmt(lo + b * w) << "," << fmt(lo + (b + 1) * w) << "," << counts[static_cast<std::size_t>(b)] << "\n";
        }
        hist << name << "," << fmt(model.prior.upper()[j]) << ",inf," << above << "\n";
    }
    fs::path hist_path = out;
    hist_path.replace_filename(out.stem().string() + "_hist.csv");
    write_text(hist_path, hist.str());
    std::cout << "wrote " << ens.size() << " samples to " << out.string() << " and histograms to " << hist_path.string()
              << "\n";
    return 0;
}

struct FingerprintArgs {
    std::string model, param, pair, grid = "10", stat = "max", range, defaults, out, channel;
    bool ood = false;
};

int run_fingerprint(const FingerprintArgs& a)
{
    const FuseModel model = load_checkpoint(a.model);
    if (a.param.empty() == a.pair.empty()) throw ConfigError("give exactly one of --param or --pair");
    FingerprintOptions o;
    o.allow_ood = a.ood;
    o.statistic = statistic_from_string(a.stat);
    if (!a.channel.empty()) {
        const auto it = std::find(model.s_channels.begin(), model.s_channels.end(), a.channel);
        if (it == model.s_channels.end()) throw ConfigError("unknown output channel '" + a.channel + "'");
        o.channel = static_cast<std::size_t>(it - model.s_channels.begin());
    }
    const ParameterVector defaults = parse_defaults(a.defaults, model.prior);
    auto parse_count = [](const std::string& s) {
        try {
            const long v = std::stol(s);
            if (v < 1) throw ConfigError("grid sizes must be positive");
            return static_cast<std::size_t>(v);
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad grid size '" + s + "'");
        }
    };
    std::ostringstream csv;
    csv << csv_header(model_hash(a.model)) << "\n";

    if (!a.param.empty()) {
        const std::size_t idx = model.prior.index_of(a.param);
        std::optional<std::pair<double, double>> range;
        if (!a.range.empty()) range = parse_range(a.range);
        const Fingerprint f = fingerprint(model, idx, parse_count(a.grid), defaults, range, o);
        csv << a.param;
        for (const auto& ch : model.s_channels)
            for (std::size_t t = 0; t < model.grid.size(); ++t) csv << "," << ch << "@t=" << fmt(model.grid[t]);
        csv << "\n";
        for (std::size_t r = 0; r < f.values.size(); ++r) {
            csv << fmt(f.values[r]);
            const Matrix& y = f.outputs[r];
            for (Eigen::Index c = 0; c < y.rows(); ++c)
                for (Eigen::Index t = 0; t < y.cols(); ++t) csv << "," << fmt(y(c, t));
            csv << "\n";
        }
    } else {
        const auto comma = a.pair.find(',');
        if (comma == std::string::npos) throw ConfigError("--pair takes two names separated by a comma");
        const std::string ni = a.pair.substr(0, comma), nj = a.pair.substr(comma + 1);
        const std::size_t i = model.prior.index_of(ni), j = model.prior.index_of(nj);
        std::size_t gi = 0, gj = 0;
        if (const auto c = a.grid.find(','); c != std::string::npos) {
            gi = parse_count(a.grid.substr(0, c));
            gj = parse_count(a.grid.substr(c + 1));
        } else {
            gi = gj = parse_count(a.grid);
        }
        std::pair<double, double> ri{model.prior.lower()[i], model.prior.upper()[i]};
        std::pair<double, double> rj{model.prior.lower()[j], model.prior.upper()[j]};
        if (!a.range.empty()) {
            const auto c = a.range.find(',');
            if (c == std::string::npos) throw ConfigError("--range for --pair looks like lo:hi,lo:hi");
            ri = parse_range(a.range.substr(0, c));
            rj = parse_range(a.range.substr(c + 1));
        }
        const auto grid_i = gi == 1 ? std::vector<double>{ri.first} : linspace(ri.first, ri.second, gi);
        const auto grid_j = gj == 1 ? std::vector<double>{rj.first} : linspace(rj.first, rj.second, gj);
        const Matrix v = pairwise_fingerprint(model, i, j, grid_i, grid_j, defaults, o);
        csv << ni << "," << nj << "," << to_string(o.statistic) << "(" << model.s_channels[o.channel] << ")\n";
        for (Eigen::Index r = 0; r < v.rows(); ++r)
            for (Eigen::Index c = 0; c < v.cols(); ++c)
                csv << fmt(grid_i[static_cast<std::size_t>(r)]) << "," << fmt(grid_j[static_cast<std::size_t>(c)]) << ","
                    << fmt(v(r, c)) << "\n";
    }
    const fs::path out = output_path(a.out, nullptr);
    write_text(out, csv.str());
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"fuse: forward surrogate and flow-matching posterior estimation for parametric PDEs"};
    app.require_subcommand(1);
    const int env_threads = nn::default_threads();

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate-data", "Generate the synthetic advection-diffusion dataset");
    g->add_option("--config", gen.config, "Run config (JSON)");
    g->add_option("--out", gen.out, "Output dataset directory")->required();
    g->add_option("--seed", gen.seed, "Data seed (overrides config)");
    g->add_option("--n-train", gen.n_train, "Training records");
    g->add_option("--n-val", gen.n_val, "Validation records");
    g->add_option("--n-test", gen.n_test, "Test records");
    g->add_flag("--force", gen.force, "Overwrite an existing directory");

    TrainArgs tr;
    tr.threads = env_threads;
    auto* t = app.add_subcommand("train", "Train forward and inverse models with decoupled objectives");
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--config", tr.config, "Run config (JSON)");
    t->add_option("--out", tr.out, "Checkpoint directory")->required();
    t->add_option("--epochs", tr.epochs, "Override train.epochs");
    t->add_option("--seed", tr.seed, "Override train.seed");
    t->add_option("--threads", tr.threads, "Worker threads (never changes results)")->check(CLI::PositiveNumber);
    t->add_flag("--force", tr.force, "Overwrite an existing checkpoint");
    t->add_flag("--quiet", tr.quiet, "No per-epoch output");

    EvaluateArgs ev;
    ev.threads = env_threads;
    auto* e = app.add_subcommand("evaluate", "Forward-only, inverse-only and unified metrics on one split");
    e->add_option("--model", ev.model, "Checkpoint directory")->required();
    e->add_option("--data", ev.data, "Dataset directory")->required();
    e->add_option("--split", ev.split, "train, val or test");
    e->add_option("--M", ev.big_m, "Posterior ensemble size")->check(CLI::PositiveNumber);
    e->add_option("--steps", ev.steps, "RK4 steps")->check(CLI::PositiveNumber);
    e->add_option("--seed", ev.seed, "Sampling seed");
    e->add_option("--mask", ev.mask, "Comma-separated input channels to zero, 'all' or 'none'");
    e->add_option("--report", ev.report, "Write the report as JSON (and CSV next to it)");
    e->add_option("--limit", ev.limit, "Evaluate only the first N records of the split");
    e->add_option("--threads", ev.threads, "Worker threads")->check(CLI::PositiveNumber);
    e->add_flag("--dirac", ev.dirac, "Debug: replace the posterior by the true parameters");

    InferArgs in;
    in.threads = env_threads;
    auto* i = app.add_subcommand("infer", "Posterior samples and histograms for one observation");
    i->add_option("--model", in.model, "Checkpoint directory")->required();
    i->add_option("--input", in.input, "Dataset directory holding the observation")->required();
    i->add_option("--index", in.index, "Record index inside the input dataset");
    i->add_option("--M", in.big_m, "Number of samples")->check(CLI::PositiveNumber);
    i->add_option("--steps", in.steps, "RK4 steps")->check(CLI::PositiveNumber);
    i->add_option("--seed", in.seed, "Sampling seed");
    i->add_option("--mask", in.mask, "Input channels to zero");
    i->add_option("--bins", in.bins, "Histogram bins per parameter");
    i->add_option("--out", in.out, "Samples CSV (histograms go to <stem>_hist.csv)")->required();
    i->add_option("--threads", in.threads, "Worker threads")->check(CLI::PositiveNumber);

    FingerprintArgs fp;
    auto* f = app.add_subcommand("fingerprint", "One-at-a-time or pairwise sensitivity sweeps of the surrogate");
    f->add_option("--model", fp.model, "Checkpoint directory")->required();
    f->add_option("--param", fp.param, "Parameter to sweep");
    f->add_option("--pair", fp.pair, "Two parameters 'a,c' for a pairwise sweep");
    f->add_option("--grid", fp.grid, "Sweep size, or 'n_i,n_j' for a pair");
    f->add_option("--stat", fp.stat, "Pairwise statistic: max, mean or min");
    f->add_option("--channel", fp.channel, "Output channel for the pairwise statistic (default: first)");
    f->add_option("--range", fp.range, "lo:hi (or lo:hi,lo:hi for a pair); default prior bounds");
    f->add_option("--defaults", fp.defaults, "Fixed values 'name=value,...'; default prior midpoint");
    f->add_flag("--ood", fp.ood, "Allow sweeps outside the prior box");
    f->add_option("--out", fp.out, "Output CSV")->required();

    auto* c = app.add_subcommand("config", "Print the default run config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*g) return run_generate(gen);
        if (*t) return run_train(tr);
        if (*e) return run_evaluate(ev);
        if (*i) return run_infer(in);
        if (*f) return run_fingerprint(fp);
        if (*c) {
            std::cout << RunConfig{}.to_json().dump(2) << "\n";
            return 0;
        }
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return err.exit_code();
    } catch (const fs::filesystem_error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return DataError("").exit_code();
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 0;
}
