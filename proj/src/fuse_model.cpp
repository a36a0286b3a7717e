#include "fuse/fuse_model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fuse/dataset_io.hpp"

namespace fuse {

namespace {

constexpr std::uint64_t kEpochSalt = 0xE0;
constexpr std::uint64_t kValSalt = 0x7A1;
constexpr std::uint64_t kEvalSalt = 0xEA;
constexpr std::uint64_t kBaselineSalt = 0xBA5E;
constexpr std::size_t kPredictChunk = 64;

nlohmann::json stats_json(const NormalizationStats& s)
{
    return {{"mode", to_string(s.mode)}, {"lower", s.lower}, {"upper", s.upper}};
}

NormalizationStats stats_from_json(const nlohmann::json& j)
{
    NormalizationStats s;
    s.mode = normalization_from_string(j.at("mode").get<std::string>());
    s.lower = j.at("lower").get<std::vector<double>>();
    s.upper = j.at("upper").get<std::vector<double>>();
    if (s.lower.size() != s.upper.size()) throw DataError("normalization bounds differ in length");
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Configs

nlohmann::json ModelConfig::to_json() const
{
    return {{"forward", forward.to_json()}, {"encoder", encoder.to_json()}, {"flow", flow.to_json()}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j)
{
    ModelConfig c;
    if (j.contains("forward")) c.forward = ForwardConfig::from_json(j["forward"]);
    if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j["encoder"]);
    if (j.contains("flow")) c.flow = FlowConfig::from_json(j["flow"]);
    return c;
}

nlohmann::json TrainConfig::to_json() const
{
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"final_learning_rate", final_learning_rate},
            {"mask_probability", mask_probability},
            {"divergence_factor", divergence_factor},
            {"normalization", to_string(normalization)},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j)
{
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.final_learning_rate = j.value("final_learning_rate", c.final_learning_rate);
    c.mask_probability = j.value("mask_probability", c.mask_probability);
    c.divergence_factor = j.value("divergence_factor", c.divergence_factor);
    if (j.contains("normalization")) c.normalization = normalization_from_string(j["normalization"].get<std::string>());
    c.seed = j.value("seed", c.seed);
    if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (c.mask_probability < 0.0 || c.mask_probability > 1.0) throw ConfigError("mask_probability must lie in [0, 1]");
    if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    return c;
}

// ---------------------------------------------------------------------------------------------
// Model

FuseModel FuseModel::create(const Dataset& data, const ModelConfig& config, const TrainConfig& train)
{
    const auto n = static_cast<int>(data.grid().size());
    if (config.forward.latent_points != n || config.encoder.latent_points != n) {
        throw ConfigError("dataset grid has " + std::to_string(n) + " points but the architecture expects " +
                          std::to_string(config.forward.latent_points) + " (forward) and " +
                          std::to_string(config.encoder.latent_points) + " (encoder)");
    }
    if (data.counts().train == 0) throw DataError("dataset has no training records");

    FuseModel m;
    m.prior = data.prior();
    m.grid = data.grid();
    m.u_channels = data.u_channels();
    m.s_channels = data.s_channels();
    m.convention = GridConvention::from_uniform_grid(m.grid);
    if (!m.convention.is_uniform(m.grid)) throw ConfigError("training grid must be uniform");
    m.stats_u = fit_normalization(data, train.normalization, Field::input);
    m.stats_s = fit_normalization(data, train.normalization, Field::output);
    m.config = config;
    m.train_config = train;
    const auto params = static_cast<int>(m.prior.dim());
    m.forward = ForwardModel(params, static_cast<int>(m.s_channels.size()), config.forward);
    m.inverse = InverseModel(params, static_cast<int>(m.u_channels.size()), config.encoder, config.flow);
    m.forward.initialize(train.seed);
    m.inverse.initialize(train.seed);
    return m;
}

Matrix FuseModel::predict_unit(const Matrix& z) const
{
    Matrix out = forward.predict_latent(z);
    return denormalize(out, stats_s);
}

Matrix FuseModel::predict(const ParameterVector& xi) const
{
    xi.validate(prior.dim());
    return predict_unit(prior.to_unit(xi));
}

Matrix FuseModel::predict_at(const ParameterVector& xi, std::span<const double> times) const
{
    xi.validate(prior.dim());
    const auto pts = convention.normalize(times);
    return denormalize(forward.predict_at(prior.to_unit(xi), pts), stats_s);
}

Matrix FuseModel::prepare_input(const Eigen::Ref<const Matrix>& u, const ChannelMask& mask) const
{
    if (u.rows() != static_cast<Eigen::Index>(u_channels.size())) {
        throw ConfigError("input has " + std::to_string(u.rows()) + " channels, model expects " +
                          std::to_string(u_channels.size()));
    }
    Matrix x = normalize(u, stats_u);
    if (mask.size() != 0) apply_mask_inplace(x, mask);
    return x;
}

PosteriorEnsemble FuseModel::sample_posterior(const Eigen::Ref<const Matrix>& u, const ChannelMask& mask,
                                              Eigen::Index count, int steps, std::uint64_t seed, int threads) const
{
    const Matrix x = prepare_input(u, mask);
    return to_prior_units(sample_unit(inverse, x, count, steps, seed, threads), prior);
}

// ---------------------------------------------------------------------------------------------
// Training

nlohmann::json TrainingLog::to_json() const
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : epochs) {
        arr.push_back({{"epoch", e.epoch},
                       {"train_l1", e.train_l1},
                       {"train_fmpe", e.train_fmpe},
                       {"val_l1", e.val_l1},
                       {"val_fmpe", e.val_fmpe},
                       {"val_metric", e.val_l1 + e.val_fmpe},
                       {"learning_rate", e.learning_rate},
                       {"seconds", e.seconds}});
    }
    return {{"epochs", arr},
            {"best_epoch", best_epoch},
            {"best_val_metric", best_metric},
            {"initial_train_l1", initial_l1},
            {"initial_train_fmpe", initial_fmpe}};
}

Trainer::Trainer(FuseModel& model, const Dataset& data, int threads)
    : model_(model),
      data_(data),
      threads_(threads),
      forward_opt_(model.forward.layout().total(), {}),
      inverse_opt_(model.inverse.layout.total(), {})
{
    if (data.grid() != model.grid || data.u_channels() != model.u_channels || data.s_channels() != model.s_channels ||
        !(data.prior() == model.prior)) {
        throw ConfigError("dataset layout does not match the model");
    }
    train_ = data.indices(Split::train);
    val_ = data.indices(Split::val);
    if (train_.empty()) throw DataError("dataset has no training records");
    if (val_.empty()) throw DataError("dataset has no validation records");

    const auto n = static_cast<Eigen::Index>(model.grid.size());
    const auto count = static_cast<Eigen::Index>(data.size());
    const auto m = static_cast<Eigen::Index>(model.prior.dim());
    z_all_.resize(m, count);
    s_all_.resize(static_cast<Eigen::Index>(model.s_channels.size()), count * n);
    u_all_.resize(static_cast<Eigen::Index>(model.u_channels.size()), count * n);
    for (Eigen::Index r = 0; r < count; ++r) {
        const auto& rec = data[static_cast<std::size_t>(r)];
        z_all_.col(r) = model.prior.to_unit(rec.xi);
        s_all_.middleCols(r * n, n) = normalize(rec.s.values(), model.stats_s);
        u_all_.middleCols(r * n, n) = normalize(rec.u.values(), model.stats_u);
    }
    auto rng = make_stream(model.train_config.seed, 0, kValSalt);
    val_draws_ = draw_fmpe(m, static_cast<Eigen::Index>(val_.size()), rng);
}

void Trainer::gather(std::span<const std::size_t> idx, Matrix& z, Matrix& s, Matrix& u) const
{
    const auto n = static_cast<Eigen::Index>(model_.grid.size());
    const auto b = static_cast<Eigen::Index>(idx.size());
    z.resize(z_all_.rows(), b);
    s.resize(s_all_.rows(), b * n);
    u.resize(u_all_.rows(), b * n);
    for (Eigen::Index j = 0; j < b; ++j) {
        const auto r = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]);
        z.col(j) = z_all_.col(r);
        s.middleCols(j * n, n) = s_all_.middleCols(r * n, n);
        u.middleCols(j * n, n) = u_all_.middleCols(r * n, n);
    }
}

double Trainer::forward_step(std::span<const std::size_t> batch, double learning_rate)
{
    Matrix z, s, u;
    gather(batch, z, s, u);
    std::vector<double> grad;
    const double loss = forward_loss_gradient(model_.forward, z, s, grad, threads_);
    forward_opt_.step(model_.forward.weights(), grad, learning_rate);
    return loss;
}

double Trainer::inverse_step(std::span<const std::size_t> batch, double learning_rate, std::mt19937_64& rng)
{
    Matrix z, s, u;
    gather(batch, z, s, u);
    const auto n = static_cast<Eigen::Index>(model_.grid.size());
    const auto channels = static_cast<int>(u.rows());
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<int> how_many(1, channels);
    std::vector<int> order(static_cast<std::size_t>(channels));
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        if (!(coin(rng) < model_.train_config.mask_probability)) continue;
        const int k = how_many(rng);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (int c = 0; c < k; ++c) u.block(order[static_cast<std::size_t>(c)], j * n, 1, n).setZero();
    }
    const FmpeDraws draws = draw_fmpe(z.rows(), z.cols(), rng);
    std::vector<double> grad;
    const double loss = fmpe_loss(model_.inverse, u, z, draws, &grad, threads_);
    inverse_opt_.step(model_.inverse.weights, grad, learning_rate);
    return loss;
}

double Trainer::validation_l1() const
{
    Matrix z, s, u;
    gather(val_, z, s, u);
    return forward_loss(model_.forward, z, s);
}

double Trainer::validation_fmpe() const
{
    Matrix z, s, u;
    gather(val_, z, s, u);
    return fmpe_loss(model_.inverse, u, z, val_draws_, nullptr, threads_);
}

TrainingLog Trainer::run(const std::function<void(const EpochLog&)>& progress)
{
    const auto& cfg = model_.train_config;
    const std::size_t batch = std::min(cfg.batch_size, train_.size());
    const std::size_t per_epoch = (train_.size() + batch - 1) / batch;
    const std::size_t total_steps = cfg.epochs * per_epoch;

    TrainingLog log;
    {
        Matrix z, s, u;
        gather(train_, z, s, u);
        log.initial_l1 = forward_loss(model_.forward, z, s);
        auto rng = make_stream(cfg.seed, 1, kValSalt);
        const FmpeDraws draws = draw_fmpe(z.rows(), z.cols(), rng);
        log.initial_fmpe = fmpe_loss(model_.inverse, u, z, draws, nullptr, threads_);
    }
    const double l1_limit = cfg.divergence_factor * log.initial_l1;
    const double fmpe_limit = cfg.divergence_factor * log.initial_fmpe;

    std::vector<double> best_forward = model_.forward.weights();
    std::vector<double> best_inverse = model_.inverse.weights;
    bool have_best = false;
    std::size_t step = 0;
    std::vector<std::size_t> order = train_;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        auto rng = make_stream(cfg.seed, epoch, kEpochSalt);
        std::shuffle(order.begin(), order.end(), rng);
        EpochLog e;
        e.epoch = epoch;
        e.learning_rate = nn::cosine_rate(cfg.learning_rate, cfg.final_learning_rate, step, total_steps);
        for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
            const std::size_t lo = b * batch, hi = std::min(order.size(), lo + batch);
            const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
            const double lr = nn::cosine_rate(cfg.learning_rate, cfg.final_learning_rate, step, total_steps);
            const double l1 = forward_step(idx, lr);
            const double fm = inverse_step(idx, lr, rng);
            if (!std::isfinite(l1) || !std::isfinite(fm) || l1 > l1_limit || fm > fmpe_limit) {
                std::ostringstream os;
                os << "training diverged at epoch " << epoch << " batch " << b << ": L1 " << l1 << " (initial "
                   << log.initial_l1 << "), FMPE " << fm << " (initial " << log.initial_fmpe << "), limit factor "
                   << cfg.divergence_factor;
                throw NumericalError(os.str());
            }
            const double w = static_cast<double>(hi - lo) / static_cast<double>(order.size());
            e.train_l1 += w * l1;
            e.train_fmpe += w * fm;
        }
        e.val_l1 = validation_l1();
        e.val_fmpe = validation_fmpe();
        const double metric = e.val_l1 + e.val_fmpe;
        if (!have_best || metric < log.best_metric) {
            have_best = true;
            log.best_metric = metric;
            log.best_epoch = epoch;
            best_forward = model_.forward.weights();
            best_inverse = model_.inverse.weights;
        }
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(e);
        if (progress) progress(e);
    }
    if (have_best) {
        model_.forward.weights() = best_forward;
        model_.inverse.weights = best_inverse;
    }
    return log;
}

// ---------------------------------------------------------------------------------------------
// Propagation

EnsemblePrediction ensemble_statistics(std::vector<Matrix> members)
{
    if (members.empty()) throw DataError("ensemble has no members");
    EnsemblePrediction p;
    const auto rows = members.front().rows(), cols = members.front().cols();
    p.mean = Matrix::Zero(rows, cols);
    Matrix m2 = Matrix::Zero(rows, cols);
    double k = 0.0;
    for (const auto& x : members) {
        if (x.rows() != rows || x.cols() != cols) throw DataError("ensemble members differ in shape");
        k += 1.0;
        const Matrix delta = x - p.mean;
        p.mean += delta / k;
        m2.array() += delta.array() * (x - p.mean).array();
    }
    p.std = members.size() > 1 ? Matrix((m2 / (k - 1.0)).cwiseSqrt()) : Matrix::Zero(rows, cols);
    p.members = std::move(members);
    return p;
}

EnsemblePrediction propagate_samples(const FuseModel& model, const PosteriorEnsemble& ensemble)
{
    const auto m = static_cast<Eigen::Index>(model.prior.dim());
    if (ensemble.dim() != m) throw DataError("ensemble dimension does not match the model");
    if (ensemble.size() < 1) throw DataError("ensemble has no members");
    const auto n = static_cast<Eigen::Index>(model.grid.size());
    std::vector<Matrix> members;
    members.reserve(static_cast<std::size_t>(ensemble.size()));
    for (Eigen::Index first = 0; first < ensemble.size(); first += static_cast<Eigen::Index>(kPredictChunk)) {
        const Eigen::Index count = std::min<Eigen::Index>(static_cast<Eigen::Index>(kPredictChunk), ensemble.size() - first);
        Matrix z(m, count);
        for (Eigen::Index i = 0; i < count; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) {
                const auto jj = static_cast<std::size_t>(j);
                z(j, i) = (ensemble.samples(first + i, j) - model.prior.lower()[jj]) / model.prior.width(jj);
            }
        }
        const Matrix out = model.predict_unit(z);
        for (Eigen::Index i = 0; i < count; ++i) members.emplace_back(out.middleCols(i * n, n));
    }
    return ensemble_statistics(std::move(members));
}

Propagation propagate(const FuseModel& model, const Eigen::Ref<const Matrix>& u, const ChannelMask& mask,
                      Eigen::Index count, int steps, std::uint64_t seed, int threads)
{
    if (count < 2) throw ConfigError("propagation needs an ensemble of at least two members");
    Propagation p;
    p.posterior = model.sample_posterior(u, mask, count, steps, seed, threads);
    p.prediction = propagate_samples(model, p.posterior);
    return p;
}

// ---------------------------------------------------------------------------------------------
// Fingerprints

std::string to_string(Statistic s)
{
    switch (s) {
    case Statistic::max: return "max";
    case Statistic::mean: return "mean";
    case Statistic::min: return "min";
    }
    return "max";
}

Statistic statistic_from_string(const std::string& s)
{
    if (s == "max") return Statistic::max;
    if (s == "mean") return Statistic::mean;
    if (s == "min") return Statistic::min;
    throw ConfigError("unknown statistic '" + s + "' (expected max, mean or min)");
}

double apply_statistic(Statistic s, const Eigen::Ref<const Vector>& series)
{
    switch (s) {
    case Statistic::max: return series.maxCoeff();
    case Statistic::mean: return series.mean();
    case Statistic::min: return series.minCoeff();
    }
    return series.maxCoeff();
}

namespace {

void check_inside(const ParameterPrior& prior, std::size_t index, double v, bool allow_ood)
{
    if (allow_ood) return;
    if (v < prior.lower()[index] || v > prior.upper()[index]) {
        std::ostringstream os;
        os << "value " << v << " of " << prior.names()[index] << " lies outside the prior [" << prior.lower()[index]
           << ", " << prior.upper()[index] << "]; pass the out-of-distribution flag to allow it";
        throw ConfigError(os.str());
    }
}

void check_defaults(const FuseModel& model, const ParameterVector& defaults, bool allow_ood)
{
    defaults.validate(model.prior.dim());
    for (std::size_t i = 0; i < defaults.size(); ++i) check_inside(model.prior, i, defaults[i], allow_ood);
}

Matrix predict_columns(const FuseModel& model, const std::vector<ParameterVector>& points)
{
    const auto m = static_cast<Eigen::Index>(model.prior.dim());
    const auto n = static_cast<Eigen::Index>(model.grid.size());
    Matrix out(static_cast<Eigen::Index>(model.s_channels.size()), static_cast<Eigen::Index>(points.size()) * n);
    for (std::size_t first = 0; first < points.size(); first += kPredictChunk) {
        const std::size_t count = std::min(kPredictChunk, points.size() - first);
        Matrix z(m, static_cast<Eigen::Index>(count));
        for (std::size_t i = 0; i < count; ++i) z.col(static_cast<Eigen::Index>(i)) = model.prior.to_unit(points[first + i]);
        out.middleCols(static_cast<Eigen::Index>(first) * n, static_cast<Eigen::Index>(count) * n) = model.predict_unit(z);
    }
    return out;
}

}  // namespace

Fingerprint fingerprint(const FuseModel& model, std::size_t index, std::size_t n_values, const ParameterVector& defaults,
                        std::optional<std::pair<double, double>> range, const FingerprintOptions& options)
{
    if (index >= model.prior.dim()) throw ConfigError("parameter index out of range");
    if (n_values == 0) throw ConfigError("fingerprint needs at least one value");
    check_defaults(model, defaults, options.allow_ood);
    const auto [lo, hi] = range.value_or(std::pair{model.prior.lower()[index], model.prior.upper()[index]});
    if (hi < lo) throw ConfigError("fingerprint range must satisfy lo <= hi");
    check_inside(model.prior, index, lo, options.allow_ood);
    check_inside(model.prior, index, hi, options.allow_ood);

    Fingerprint f;
    f.values = n_values == 1 ? std::vector<double>{lo} : linspace(lo, hi, n_values);
    std::vector<ParameterVector> points;
    for (double v : f.values) {
        ParameterVector p = defaults;
        p[index] = v;
        points.push_back(std::move(p));
    }
    const Matrix out = predict_columns(model, points);
    const auto n = static_cast<Eigen::Index>(model.grid.size());
    for (std::size_t i = 0; i < points.size(); ++i) f.outputs.emplace_back(out.middleCols(static_cast<Eigen::Index>(i) * n, n));
    return f;
}

Matrix pairwise_fingerprint(const FuseModel& model, std::size_t i, std::size_t j, std::span<const double> grid_i,
                            std::span<const double> grid_j, const ParameterVector& defaults,
                            const FingerprintOptions& options)
{
    if (i == j) throw ConfigError("pairwise fingerprint needs two different parameters");
    if (i >= model.prior.dim() || j >= model.prior.dim()) throw ConfigError("parameter index out of range");
    if (options.channel >= model.s_channels.size()) throw ConfigError("output channel out of range");
    check_defaults(model, defaults, options.allow_ood);
    for (double v : grid_i) check_inside(model.prior, i, v, options.allow_ood);
    for (double v : grid_j) check_inside(model.prior, j, v, options.allow_ood);

    std::vector<ParameterVector> points;
    for (double a : grid_i) {
        for (double b : grid_j) {
            ParameterVector p = defaults;
            p[i] = a;
            p[j] = b;
            points.push_back(std::move(p));
        }
    }
    const Matrix out = predict_columns(model, points);
    const auto n = static_cast<Eigen::Index>(model.grid.size());
    Matrix result(static_cast<Eigen::Index>(grid_i.size()), static_cast<Eigen::Index>(grid_j.size()));
    const auto ch = static_cast<Eigen::Index>(options.channel);
    for (Eigen::Index r = 0; r < result.rows(); ++r) {
        for (Eigen::Index c = 0; c < result.cols(); ++c) {
            const Eigen::Index k = r * result.cols() + c;
            result(r, c) = apply_statistic(options.statistic, out.block(ch, k * n, 1, n).transpose());
        }
    }
    return result;
}

// ---------------------------------------------------------------------------------------------
// Evaluation

metrics::MetricReport evaluate(const FuseModel& model, const Dataset& data, const EvaluateOptions& options)
{
    if (data.grid() != model.grid || data.u_channels() != model.u_channels || data.s_channels() != model.s_channels) {
        throw ConfigError("dataset layout does not match the model");
    }
    if (options.ensemble_size < 1) throw ConfigError("ensemble size must be positive");
    std::vector<std::size_t> idx = data.indices(options.split);
    if (options.limit > 0 && idx.size() > options.limit) idx.resize(options.limit);
    if (idx.empty()) throw DataError("split '" + to_string(options.split) + "' is empty");
    const std::size_t count = idx.size();
    const auto m = static_cast<Eigen::Index>(model.prior.dim());
    const Eigen::Index big_m = options.ensemble_size;

    metrics::MetricBlock fwd{"forward", {}, std::vector<double>(count), std::vector<double>(count)};
    metrics::MetricBlock inv{"inverse", std::vector<double>(count), {}, {}};
    metrics::MetricBlock uni{"unified", {}, std::vector<double>(count), std::vector<double>(count)};
    metrics::MetricBlock base{"prior_baseline", std::vector<double>(count), {}, {}};

    nn::parallel_chunks(count, 1, options.threads, [&](std::size_t r, std::size_t, std::size_t) {
        const Record& rec = data[idx[r]];
        const Eigen::Map<const Vector> truth_xi(rec.xi.values.data(), m);
        const Matrix& truth = rec.s.values();

        const Matrix pred = model.predict(rec.xi);
        fwd.rel_l1[r] = metrics::relative_lp_error(pred, truth, 1);
        fwd.rel_l2[r] = metrics::relative_lp_error(pred, truth, 2);

        PosteriorEnsemble ens;
        if (options.dirac) {
            ens.samples = truth_xi.transpose().replicate(big_m, 1);
        } else {
            const std::uint64_t seed = make_stream(options.seed, idx[r], kEvalSalt)();
            ens = model.sample_posterior(rec.u.values(), options.mask, big_m, options.steps, seed, 1);
        }
        inv.crps[r] = metrics::crps_parameters(ens, truth_xi, model.prior);
        const EnsemblePrediction p = propagate_samples(model, ens);
        uni.rel_l1[r] = metrics::relative_lp_error(p.mean, truth, 1);
        uni.rel_l2[r] = metrics::relative_lp_error(p.mean, truth, 2);

        auto rng = make_stream(options.seed, idx[r], kBaselineSalt);
        PosteriorEnsemble prior_ens;
        prior_ens.samples.resize(big_m, m);
        for (Eigen::Index i = 0; i < big_m; ++i) {
            const ParameterVector s = model.prior.sample(rng);
            for (Eigen::Index j = 0; j < m; ++j) prior_ens.samples(i, j) = s[static_cast<std::size_t>(j)];
        }
        base.crps[r] = metrics::crps_parameters(prior_ens, truth_xi, model.prior);
    });

    metrics::MetricReport report;
    report.blocks = {fwd, inv, uni, base};
    std::vector<std::string> masked;
    for (std::size_t c = 0; c < options.mask.size(); ++c) {
        if (!options.mask.keep[c]) masked.push_back(model.u_channels[c]);
    }
    report.info = {{"split", to_string(options.split)},
                   {"samples", count},
                   {"ensemble_size", big_m},
                   {"ode_steps", options.steps},
                   {"seed", options.seed},
                   {"masked_channels", masked},
                   {"dirac", options.dirac}};
    return report;
}

// ---------------------------------------------------------------------------------------------
// Checkpoints

nlohmann::json checkpoint_manifest(const FuseModel& model, const std::string& config_hash)
{
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["config_hash"] = config_hash;
    j["architecture"] = model.config.to_json();
    j["train"] = model.train_config.to_json();
    j["seeds"] = {{"train", model.train_config.seed}};
    j["prior"] = {{"names", model.prior.names()}, {"lower", model.prior.lower()}, {"upper", model.prior.upper()}};
    j["grid"] = model.grid;
    j["u_channels"] = model.u_channels;
    j["s_channels"] = model.s_channels;
    j["grid_convention"] = {{"origin", model.convention.origin}, {"period", model.convention.period}};
    j["normalization"] = {{"u", stats_json(model.stats_u)}, {"s", stats_json(model.stats_s)}};
    j["tensors"] = {{"forward", {{"file", "forward.bin"}, {"count", model.forward.layout().total()},
                                 {"layout", model.forward.layout().to_json()}}},
                    {"inverse", {{"file", "inverse.bin"}, {"count", model.inverse.layout.total()},
                                 {"layout", model.inverse.layout.to_json()}}}};
    return j;
}

void save_checkpoint(const std::filesystem::path& dir, const FuseModel& model, const std::string& config_hash,
                     bool force)
{
    if (std::filesystem::exists(dir) && !force) {
        throw ConfigError("checkpoint directory '" + dir.string() + "' exists; pass --force to overwrite");
    }
    std::filesystem::create_directories(dir);
    write_json_file(dir / "model.json", checkpoint_manifest(model, config_hash));
    write_f64_file(dir / "forward.bin", model.forward.weights());
    write_f64_file(dir / "inverse.bin", model.inverse.weights);
}

FuseModel load_checkpoint(const std::filesystem::path& dir)
{
    if (!std::filesystem::exists(dir / "model.json")) {
        throw DataError("no checkpoint at '" + dir.string() + "' (model.json missing)");
    }
    const nlohmann::json j = read_json_file(dir / "model.json");
    if (j.value("format", std::string{}) != kCheckpointFormat) {
        throw DataError("unsupported checkpoint format '" + j.value("format", std::string{}) + "'");
    }
    try {
        FuseModel m;
        m.config = ModelConfig::from_json(j.at("architecture"));
        m.train_config = TrainConfig::from_json(j.at("train"));
        const auto& p = j.at("prior");
        m.prior = ParameterPrior(p.at("names").get<std::vector<std::string>>(), p.at("lower").get<std::vector<double>>(),
                                 p.at("upper").get<std::vector<double>>());
        m.grid = j.at("grid").get<std::vector<double>>();
        m.u_channels = j.at("u_channels").get<std::vector<std::string>>();
        m.s_channels = j.at("s_channels").get<std::vector<std::string>>();
        m.convention = {j.at("grid_convention").at("origin").get<double>(),
                        j.at("grid_convention").at("period").get<double>()};
        m.stats_u = stats_from_json(j.at("normalization").at("u"));
        m.stats_s = stats_from_json(j.at("normalization").at("s"));
        const auto params = static_cast<int>(m.prior.dim());
        m.forward = ForwardModel(params, static_cast<int>(m.s_channels.size()), m.config.forward);
        m.inverse = InverseModel(params, static_cast<int>(m.u_channels.size()), m.config.encoder, m.config.flow);
        if (j.at("tensors").at("forward").at("layout") != m.forward.layout().to_json() ||
            j.at("tensors").at("inverse").at("layout") != m.inverse.layout.to_json()) {
            throw DataError("checkpoint tensor layout does not match its architecture");
        }
        auto fw = read_f64_file(dir / "forward.bin");
        auto iw = read_f64_file(dir / "inverse.bin");
        if (fw.size() != m.forward.layout().total() || iw.size() != m.inverse.layout.total()) {
            throw DataError("checkpoint weight blobs have the wrong length");
        }
        m.forward.weights() = std::move(fw);
        m.inverse.weights = std::move(iw);
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
    }
}

}  // namespace fuse
