#include "fuse/inverse_model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace fuse {

using spectral::Activation;

nlohmann::json EncoderConfig::to_json() const
{
    return {{"width", width}, {"modes", modes}, {"layers", layers}, {"latent_points", latent_points}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j)
{
    EncoderConfig c;
    c.width = j.value("width", c.width);
    c.modes = j.value("modes", c.modes);
    c.layers = j.value("layers", c.layers);
    c.latent_points = j.value("latent_points", c.latent_points);
    return c;
}

nlohmann::json FlowConfig::to_json() const
{
    return {{"hidden", hidden}, {"layers", layers}, {"time_frequencies", time_frequencies}, {"sigma_min", sigma_min}};
}

FlowConfig FlowConfig::from_json(const nlohmann::json& j)
{
    FlowConfig c;
    c.hidden = j.value("hidden", c.hidden);
    c.layers = j.value("layers", c.layers);
    c.time_frequencies = j.value("time_frequencies", c.time_frequencies);
    c.sigma_min = j.value("sigma_min", c.sigma_min);
    return c;
}

// ---------------------------------------------------------------------------------------------
// Conditional encoder

ConditionalEncoder::ConditionalEncoder(int inputs, EncoderConfig config) : inputs_(inputs), config_(config)
{
    if (inputs < 1 || config.width < 1 || config.layers < 1) throw ConfigError("encoder shape must be positive");
    basis_ = spectral::FourierBasis::uniform(config.latent_points, config.modes);
    const int w = config.width, k = config.modes;
    lift_ = {inputs, w};
    lift_offset_ = layout_.add("enc.lift.weight", {w, inputs}, static_cast<std::size_t>(w * inputs));
    layout_.add("enc.lift.bias", {w}, static_cast<std::size_t>(w));
    for (int l = 0; l < config.layers; ++l) {
        spectral::SpectralConvShape s{w, w, k};
        layers_.push_back(s);
        const std::string p = "enc.spectral" + std::to_string(l);
        layer_offsets_.push_back(layout_.add(p + ".weight", {k, w, w}, s.spectral_count(), true));
        layout_.add(p + ".bypass", {w, w}, static_cast<std::size_t>(w * w));
    }
}

void ConditionalEncoder::initialize(std::span<double> weights, std::mt19937_64& rng) const
{
    nn::init_dense(lift_, weights.subspan(lift_offset_, lift_.param_count()), rng);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& s = layers_[l];
        auto block = weights.subspan(layer_offsets_[l], s.param_count());
        nn::init_uniform(block.first(s.spectral_count()), 0.5 / std::sqrt(static_cast<double>(s.in)), rng);
        nn::init_uniform(block.subspan(s.spectral_count()), 1.0 / std::sqrt(static_cast<double>(s.in)), rng);
    }
}

void ConditionalEncoder::forward(std::span<const double> weights, const Matrix& inputs, Eigen::Index batch,
                                 Cache& cache, Matrix& embeddings) const
{
    const Eigen::Index n = basis_.points;
    if (inputs.rows() != inputs_ || inputs.cols() != batch * n) {
        throw ConfigError("encoder expects " + std::to_string(inputs_) + " x " + std::to_string(batch * n) +
                          " input, got " + std::to_string(inputs.rows()) + " x " + std::to_string(inputs.cols()));
    }
    cache.input = inputs;
    Matrix h;
    nn::dense_forward(lift_, weights.subspan(lift_offset_, lift_.param_count()), inputs, h);
    cache.layers.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Activation act = l + 1 < layers_.size() ? Activation::gelu : Activation::identity;
        Matrix next;
        spectral::spectral_forward(layers_[l], weights.subspan(layer_offsets_[l], layers_[l].param_count()), basis_, h,
                                   batch, act, cache.layers[l], next);
        h = std::move(next);
    }
    cache.hidden = std::move(h);

    const int w = config_.width, k = config_.modes;
    const auto fc = basis_.analysis_cos.leftCols(k);
    const auto fs = basis_.analysis_sin.leftCols(k);
    embeddings.resize(embedding_size(), batch);
    Matrix re(w, k), im(w, k);
    for (Eigen::Index b = 0; b < batch; ++b) {
        const auto hb = cache.hidden.middleCols(b * n, n);
        re.noalias() = hb * fc;
        im.noalias() = hb * fs;
        for (int c = 0; c < w; ++c) {
            for (int m = 0; m < k; ++m) {
                embeddings(2 * (c * k + m), b) = re(c, m);
                embeddings(2 * (c * k + m) + 1, b) = im(c, m);
            }
        }
    }
}

void ConditionalEncoder::backward(std::span<const double> weights, const Cache& cache, Eigen::Index batch,
                                  const Matrix& d_embeddings, std::span<double> grad) const
{
    const Eigen::Index n = basis_.points;
    const int w = config_.width, k = config_.modes;
    const auto fc = basis_.analysis_cos.leftCols(k);
    const auto fs = basis_.analysis_sin.leftCols(k);
    Matrix d_h(w, batch * n);
    Matrix re(w, k), im(w, k);
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (int c = 0; c < w; ++c) {
            for (int m = 0; m < k; ++m) {
                re(c, m) = d_embeddings(2 * (c * k + m), b);
                im(c, m) = d_embeddings(2 * (c * k + m) + 1, b);
            }
        }
        d_h.middleCols(b * n, n).noalias() = re * fc.transpose();
        d_h.middleCols(b * n, n).noalias() += im * fs.transpose();
    }
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const Activation act = l + 1 < layers_.size() ? Activation::gelu : Activation::identity;
        Matrix d_prev;
        const bool need_input = true;
        spectral::spectral_backward(layers_[l], weights.subspan(layer_offsets_[l], layers_[l].param_count()), basis_,
                                    cache.layers[l], batch, act, d_h,
                                    grad.subspan(layer_offsets_[l], layers_[l].param_count()),
                                    need_input ? &d_prev : nullptr);
        d_h = std::move(d_prev);
    }
    nn::dense_backward(lift_, weights.subspan(lift_offset_, lift_.param_count()), cache.input, d_h,
                       grad.subspan(lift_offset_, lift_.param_count()), nullptr);
}

Vector ConditionalEncoder::encode(std::span<const double> weights, const Eigen::Ref<const Matrix>& input) const
{
    if (input.rows() != inputs_) {
        throw ConfigError("encoder expects " + std::to_string(inputs_) + " channels, got " + std::to_string(input.rows()));
    }
    const Eigen::Index n = basis_.points;
    Matrix latent;
    if (input.cols() == n) {
        latent = input;
    } else {
        const auto pts = spectral::uniform_points(n);
        latent = input * spectral::resampling_matrix(input.cols(), pts, n);
    }
    Cache cache;
    Matrix emb;
    forward(weights, latent, 1, cache, emb);
    return emb.col(0);
}

// ---------------------------------------------------------------------------------------------
// Flow field

FlowField::FlowField(int params, int embedding, FlowConfig config) : params_(params), embedding_(embedding), config_(config)
{
    if (params < 1 || embedding < 0 || config.hidden < 1 || config.layers < 1 || config.time_frequencies < 0) {
        throw ConfigError("flow field shape must be positive");
    }
    if (!(config.sigma_min > 0.0 && config.sigma_min <= 0.1)) throw ConfigError("sigma_min must lie in (0, 0.1]");
    const int s = state_features();
    dense_.push_back({s + embedding, config.hidden});
    for (int l = 1; l < config.layers; ++l) dense_.push_back({config.hidden, config.hidden});
    dense_.push_back({config.hidden, params});
    for (std::size_t l = 0; l < dense_.size(); ++l) {
        const std::string p = "flow.dense" + std::to_string(l);
        offsets_.push_back(layout_.add(p + ".weight", {dense_[l].out, dense_[l].in},
                                       static_cast<std::size_t>(dense_[l].out * dense_[l].in)));
        layout_.add(p + ".bias", {dense_[l].out}, static_cast<std::size_t>(dense_[l].out));
    }
}

void FlowField::initialize(std::span<double> weights, std::mt19937_64& rng) const
{
    for (std::size_t l = 0; l < dense_.size(); ++l) {
        nn::init_dense(dense_[l], weights.subspan(offsets_[l], dense_[l].param_count()), rng);
    }
}

void FlowField::features(std::span<const double> t, const Matrix& states, Matrix& out) const
{
    const Eigen::Index batch = states.cols();
    const int f = config_.time_frequencies;
    out.resize(state_features(), batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        const double tb = t.size() == 1 ? t[0] : t[static_cast<std::size_t>(b)];
        out(0, b) = tb;
        double freq = std::numbers::pi;
        for (int j = 0; j < f; ++j) {
            out(1 + 2 * j, b) = std::sin(freq * tb);
            out(2 + 2 * j, b) = std::cos(freq * tb);
            freq *= 2.0;
        }
    }
    out.bottomRows(params_) = states;
}

void FlowField::forward(std::span<const double> weights, std::span<const double> t, const Matrix& states,
                        const Matrix& embeddings, Cache& cache, Matrix& velocity) const
{
    if (states.rows() != params_ || embeddings.rows() != embedding_ || embeddings.cols() != states.cols()) {
        throw ConfigError("flow field input shapes are inconsistent");
    }
    if (t.size() != static_cast<std::size_t>(states.cols()) && t.size() != 1) {
        throw ConfigError("flow field needs one time per column");
    }
    features(t, states, cache.features);
    cache.conditioning = embeddings;
    const int s = state_features();
    const auto& d0 = dense_[0];
    Eigen::Map<const Matrix> w0(weights.data() + offsets_[0], d0.out, d0.in);
    Eigen::Map<const Vector> b0(weights.data() + offsets_[0] + d0.in * d0.out, d0.out);

    const std::size_t hidden_layers = dense_.size() - 1;
    cache.pre.resize(hidden_layers);
    cache.act.resize(hidden_layers);
    cache.pre[0].noalias() = w0.leftCols(s) * cache.features;
    if (embedding_ > 0) cache.pre[0].noalias() += w0.rightCols(embedding_) * embeddings;
    cache.pre[0].colwise() += b0;
    cache.act[0].resize(cache.pre[0].rows(), cache.pre[0].cols());
    spectral::apply_activation(Activation::gelu, cache.pre[0], cache.act[0]);
    for (std::size_t l = 1; l < hidden_layers; ++l) {
        nn::dense_forward(dense_[l], weights.subspan(offsets_[l], dense_[l].param_count()), cache.act[l - 1], cache.pre[l]);
        cache.act[l].resize(cache.pre[l].rows(), cache.pre[l].cols());
        spectral::apply_activation(Activation::gelu, cache.pre[l], cache.act[l]);
    }
    const std::size_t last = dense_.size() - 1;
    nn::dense_forward(dense_[last], weights.subspan(offsets_[last], dense_[last].param_count()),
                      cache.act[hidden_layers - 1], velocity);
}

void FlowField::backward(std::span<const double> weights, const Cache& cache, const Matrix& d_velocity,
                         std::span<double> grad, Matrix* d_embeddings) const
{
    const std::size_t hidden_layers = dense_.size() - 1;
    const std::size_t last = dense_.size() - 1;
    Matrix d_act;
    nn::dense_backward(dense_[last], weights.subspan(offsets_[last], dense_[last].param_count()),
                       cache.act[hidden_layers - 1], d_velocity, grad.subspan(offsets_[last], dense_[last].param_count()),
                       &d_act);
    for (std::size_t l = hidden_layers; l-- > 0;) {
        Matrix d_pre = d_act;
        d_pre.array() *= cache.pre[l].unaryExpr([](double x) { return spectral::gelu_derivative(x); }).array();
        if (l == 0) {
            const auto& d0 = dense_[0];
            const int s = state_features();
            Eigen::Map<Matrix> gw(grad.data() + offsets_[0], d0.out, d0.in);
            Eigen::Map<Vector> gb(grad.data() + offsets_[0] + d0.in * d0.out, d0.out);
            gw.leftCols(s).noalias() += d_pre * cache.features.transpose();
            if (embedding_ > 0) gw.rightCols(embedding_).noalias() += d_pre * cache.conditioning.transpose();
            gb += Vector(d_pre.rowwise().sum());
            if (d_embeddings && embedding_ > 0) {
                Eigen::Map<const Matrix> w0(weights.data() + offsets_[0], d0.out, d0.in);
                d_embeddings->noalias() = w0.rightCols(embedding_).transpose() * d_pre;
            }
        } else {
            nn::dense_backward(dense_[l], weights.subspan(offsets_[l], dense_[l].param_count()), cache.act[l - 1], d_pre,
                               grad.subspan(offsets_[l], dense_[l].param_count()), &d_act);
        }
    }
}

Vector FlowField::condition(std::span<const double> weights, const Eigen::Ref<const Vector>& embedding) const
{
    if (embedding.size() != embedding_) throw ConfigError("embedding size mismatch");
    const auto& d0 = dense_[0];
    Eigen::Map<const Matrix> w0(weights.data() + offsets_[0], d0.out, d0.in);
    Eigen::Map<const Vector> b0(weights.data() + offsets_[0] + d0.in * d0.out, d0.out);
    Vector c = b0;
    if (embedding_ > 0) c.noalias() += w0.rightCols(embedding_) * embedding;
    return c;
}

Matrix FlowField::velocity(std::span<const double> weights, double t, const Matrix& states, const Vector& conditioned) const
{
    if (states.rows() != params_) throw ConfigError("flow state has wrong dimension");
    Matrix feats;
    const double tt[1] = {t};
    features(std::span<const double>(tt, 1), states, feats);
    const auto& d0 = dense_[0];
    Eigen::Map<const Matrix> w0(weights.data() + offsets_[0], d0.out, d0.in);
    Matrix pre = w0.leftCols(state_features()) * feats;
    pre.colwise() += conditioned;
    Matrix act(pre.rows(), pre.cols());
    spectral::apply_activation(Activation::gelu, pre, act);
    const std::size_t hidden_layers = dense_.size() - 1;
    for (std::size_t l = 1; l < hidden_layers; ++l) {
        nn::dense_forward(dense_[l], weights.subspan(offsets_[l], dense_[l].param_count()), act, pre);
        act.resize(pre.rows(), pre.cols());
        spectral::apply_activation(Activation::gelu, pre, act);
    }
    Matrix out;
    const std::size_t last = dense_.size() - 1;
    nn::dense_forward(dense_[last], weights.subspan(offsets_[last], dense_[last].param_count()), act, out);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Inverse model

InverseModel::InverseModel(int params, int inputs, EncoderConfig encoder_config, FlowConfig flow_config)
    : encoder(inputs, encoder_config), flow(params, encoder.embedding_size(), flow_config)
{
    for (const auto& t : encoder.layout().tensors()) layout.add(t.name, t.shape, t.count, t.complex);
    flow_offset = layout.total();
    for (const auto& t : flow.layout().tensors()) layout.add(t.name, t.shape, t.count, t.complex);
    weights.assign(layout.total(), 0.0);
}

void InverseModel::initialize(std::uint64_t seed)
{
    std::mt19937_64 rng = make_stream(seed, 0, 0x1F);
    std::span<double> all(weights);
    encoder.initialize(all.first(flow_offset), rng);
    flow.initialize(all.subspan(flow_offset), rng);
}

std::span<const double> InverseModel::encoder_weights() const
{
    return std::span<const double>(weights).first(flow_offset);
}

std::span<const double> InverseModel::flow_weights() const
{
    return std::span<const double>(weights).subspan(flow_offset);
}

// ---------------------------------------------------------------------------------------------
// Path, loss and sampler

PathPoint ot_path(const Eigen::Ref<const Vector>& xi0, const Eigen::Ref<const Vector>& xi1, double t, double sigma_min)
{
    if (xi0.size() != xi1.size()) throw ConfigError("path endpoints differ in dimension");
    if (!(t >= 0.0) || !(t < 1.0)) throw ConfigError("path time must lie in [0, 1)");
    const double shrink = 1.0 - (1.0 - sigma_min) * t;
    PathPoint p;
    p.xi_t = shrink * xi0 + t * xi1;
    p.target = (xi1 - (1.0 - sigma_min) * p.xi_t) / shrink;
    return p;
}

FmpeDraws draw_fmpe(Eigen::Index params, Eigen::Index batch, std::mt19937_64& rng)
{
    FmpeDraws d;
    d.t.resize(static_cast<std::size_t>(batch));
    d.base.resize(params, batch);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index b = 0; b < batch; ++b) {
        double t = uni(rng);
        if (t >= 1.0) t = std::nextafter(1.0, 0.0);
        d.t[static_cast<std::size_t>(b)] = t;
        for (Eigen::Index i = 0; i < params; ++i) d.base(i, b) = normal(rng);
    }
    return d;
}

namespace {

void path_batch(const Matrix& xi1, const FmpeDraws& draws, double sigma_min, Eigen::Index first, Eigen::Index count,
                Matrix& xi_t, Matrix& target)
{
    const Eigen::Index m = xi1.rows();
    xi_t.resize(m, count);
    target.resize(m, count);
    for (Eigen::Index b = 0; b < count; ++b) {
        const auto col = first + b;
        const PathPoint p = ot_path(draws.base.col(col), xi1.col(col), draws.t[static_cast<std::size_t>(col)], sigma_min);
        xi_t.col(b) = p.xi_t;
        target.col(b) = p.target;
    }
}

constexpr std::size_t kChunk = 16;
constexpr std::size_t kSampleChunk = 64;

}  // namespace

double fmpe_monte_carlo(const VelocityFn& v, const Matrix& xi1, const FmpeDraws& draws, double sigma_min)
{
    Matrix xi_t, target;
    path_batch(xi1, draws, sigma_min, 0, xi1.cols(), xi_t, target);
    const Matrix vel = v(draws.t, xi_t);
    const Matrix r = vel - target;
    if (!r.allFinite()) throw NumericalError("FMPE residual is not finite");
    return r.squaredNorm() / static_cast<double>(xi1.cols());
}

double fmpe_loss(const InverseModel& model, const Matrix& inputs, const Matrix& xi1, const FmpeDraws& draws,
                 std::vector<double>* grad, int threads)
{
    const auto batch = static_cast<std::size_t>(xi1.cols());
    if (batch == 0) throw ConfigError("empty batch");
    if (xi1.rows() != model.flow.params()) throw ConfigError("FMPE targets have wrong dimension");
    const Eigen::Index n = model.encoder.basis().points;
    if (inputs.cols() != static_cast<Eigen::Index>(batch) * n) throw ConfigError("FMPE inputs have wrong size");
    const double sigma_min = model.flow.config().sigma_min;
    const double scale = 1.0 / static_cast<double>(batch);
    const std::size_t chunks = (batch + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> partial(grad ? chunks : 0);
    std::vector<double> losses(chunks, 0.0);

    const auto enc_w = model.encoder_weights();
    const auto flow_w = model.flow_weights();
    nn::parallel_chunks(batch, kChunk, threads, [&](std::size_t c, std::size_t b0, std::size_t b1) {
        const auto first = static_cast<Eigen::Index>(b0);
        const auto count = static_cast<Eigen::Index>(b1 - b0);
        ConditionalEncoder::Cache ecache;
        Matrix emb;
        model.encoder.forward(enc_w, inputs.middleCols(first * n, count * n), count, ecache, emb);
        Matrix xi_t, target;
        path_batch(xi1, draws, sigma_min, first, count, xi_t, target);
        FlowField::Cache fcache;
        Matrix vel;
        model.flow.forward(flow_w, std::span<const double>(draws.t).subspan(b0, b1 - b0), xi_t, emb, fcache, vel);
        const Matrix r = vel - target;
        if (!r.allFinite()) throw NumericalError("FMPE residual is not finite");
        losses[c] = r.squaredNorm();
        if (!grad) return;
        partial[c].assign(model.layout.total(), 0.0);
        std::span<double> g(partial[c]);
        const Matrix d_vel = (2.0 * scale) * r;
        Matrix d_emb;
        model.flow.backward(flow_w, fcache, d_vel, g.subspan(model.flow_offset), &d_emb);
        model.encoder.backward(enc_w, ecache, count, d_emb, g.first(model.flow_offset));
    });

    double loss = 0.0;
    for (double l : losses) loss += l;
    if (grad) {
        grad->assign(model.layout.total(), 0.0);
        for (const auto& p : partial)
            for (std::size_t i = 0; i < p.size(); ++i) (*grad)[i] += p[i];
    }
    return loss * scale;
}

double fmpe_loss(const InverseModel& model, const Matrix& inputs, const Matrix& xi1, std::mt19937_64& rng)
{
    const FmpeDraws draws = draw_fmpe(xi1.rows(), xi1.cols(), rng);
    return fmpe_loss(model, inputs, xi1, draws, nullptr);
}

Matrix base_draws(Eigen::Index params, Eigen::Index count, std::uint64_t seed)
{
    Matrix out(params, count);
    for (Eigen::Index i = 0; i < count; ++i) {
        auto rng = make_stream(seed, static_cast<std::uint64_t>(i), 0xB5);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Eigen::Index j = 0; j < params; ++j) out(j, i) = normal(rng);
    }
    return out;
}

Matrix integrate_flow(const TimeVelocityFn& v, Matrix state, int steps)
{
    if (steps < 1) throw ConfigError("flow integration needs at least one step");
    const double h = 1.0 / static_cast<double>(steps);
    for (int s = 0; s < steps; ++s) {
        const double t = static_cast<double>(s) * h;
        const Matrix k1 = v(t, state);
        const Matrix k2 = v(t + 0.5 * h, state + (0.5 * h) * k1);
        const Matrix k3 = v(t + 0.5 * h, state + (0.5 * h) * k2);
        const Matrix k4 = v(t + h, state + h * k3);
        state += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!state.allFinite()) {
            std::ostringstream os;
            os << "flow integration produced a non-finite state at t = " << t + h;
            throw NumericalError(os.str());
        }
    }
    return state;
}

Matrix sample_unit(const InverseModel& model, const Eigen::Ref<const Matrix>& input, Eigen::Index count, int steps,
                   std::uint64_t seed, int threads)
{
    if (count < 1) throw ConfigError("posterior ensemble needs at least one sample");
    const Vector emb = model.encoder.encode(model.encoder_weights(), input);
    const auto flow_w = model.flow_weights();
    const Vector cond = model.flow.condition(flow_w, emb);
    Matrix samples = base_draws(model.flow.params(), count, seed);
    nn::parallel_chunks(static_cast<std::size_t>(count), kSampleChunk, threads,
                        [&](std::size_t, std::size_t b0, std::size_t b1) {
                            const auto first = static_cast<Eigen::Index>(b0);
                            const auto cols = static_cast<Eigen::Index>(b1 - b0);
                            auto field = [&](double t, const Matrix& x) { return model.flow.velocity(flow_w, t, x, cond); };
                            samples.middleCols(first, cols) = integrate_flow(field, samples.middleCols(first, cols), steps);
                        });
    return samples;
}

PosteriorEnsemble to_prior_units(const Matrix& unit_samples, const ParameterPrior& prior)
{
    if (static_cast<std::size_t>(unit_samples.rows()) != prior.dim()) throw ConfigError("sample dimension mismatch");
    PosteriorEnsemble e;
    e.samples.resize(unit_samples.cols(), unit_samples.rows());
    for (Eigen::Index i = 0; i < unit_samples.cols(); ++i) {
        for (Eigen::Index j = 0; j < unit_samples.rows(); ++j) {
            const auto jj = static_cast<std::size_t>(j);
            e.samples(i, j) = prior.lower()[jj] + unit_samples(j, i) * prior.width(jj);
        }
    }
    return e;
}

}  // namespace fuse
