#include "fuse/forward_model.hpp"

#include <cmath>

namespace fuse {

using spectral::Activation;

GridConvention GridConvention::from_uniform_grid(std::span<const double> grid)
{
    if (grid.size() < 2) throw ConfigError("grid convention needs at least two points");
    const double spacing = (grid.back() - grid.front()) / static_cast<double>(grid.size() - 1);
    return GridConvention{grid.front(), spacing * static_cast<double>(grid.size())};
}

std::vector<double> GridConvention::normalize(std::span<const double> times) const
{
    std::vector<double> out(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        double tau = (times[i] - origin) / period;
        if (tau < 0.0 && tau > -1e-12) tau = 0.0;
        if (tau < 0.0 || tau >= 1.0) {
            throw ConfigError("time " + std::to_string(times[i]) + " lies outside the model period [" +
                              std::to_string(origin) + ", " + std::to_string(origin + period) + ")");
        }
        out[i] = tau;
    }
    return out;
}

bool GridConvention::is_uniform(std::span<const double> times) const
{
    const auto n = times.size();
    if (n == 0) return false;
    const double spacing = period / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(times[i] - (origin + spacing * static_cast<double>(i))) > 1e-9 * spacing) return false;
    }
    return true;
}

nlohmann::json ForwardConfig::to_json() const
{
    return {{"width", width},
            {"modes", modes},
            {"layers", layers},
            {"projection_width", projection_width},
            {"latent_points", latent_points}};
}

ForwardConfig ForwardConfig::from_json(const nlohmann::json& j)
{
    ForwardConfig c;
    c.width = j.value("width", c.width);
    c.modes = j.value("modes", c.modes);
    c.layers = j.value("layers", c.layers);
    c.projection_width = j.value("projection_width", c.projection_width);
    c.latent_points = j.value("latent_points", c.latent_points);
    return c;
}

struct ForwardModel::Cache {
    spectral::LiftingCache lifting;
    std::vector<spectral::SpectralCache> layers;
    Matrix hidden;
    Matrix proj_pre;
    Matrix proj_act;
};

ForwardModel::ForwardModel(int params, int outputs, ForwardConfig config)
    : params_(params), outputs_(outputs), config_(config)
{
    if (params < 1 || outputs < 1) throw ConfigError("forward model needs at least one parameter and one output");
    if (config.width < 1 || config.layers < 1 || config.projection_width < 1) {
        throw ConfigError("forward model width, layers and projection width must be positive");
    }
    basis_ = spectral::FourierBasis::uniform(config.latent_points, config.modes);

    const int w = config.width, k = config.modes;
    lifting_ = {params, w, k};
    lifting_offset_ = layout_.add("lift.weight", {2 * w * k, params}, static_cast<std::size_t>(2 * w * k * params));
    layout_.add("lift.bias", {2 * w * k}, static_cast<std::size_t>(2 * w * k));
    for (int l = 0; l < config.layers; ++l) {
        spectral::SpectralConvShape s{w, w, k};
        layers_.push_back(s);
        const std::string p = "spectral" + std::to_string(l);
        layer_offsets_.push_back(layout_.add(p + ".weight", {k, w, w}, s.spectral_count(), true));
        layout_.add(p + ".bypass", {w, w}, static_cast<std::size_t>(w * w));
    }
    proj1_ = {w, config.projection_width};
    proj2_ = {config.projection_width, outputs};
    proj1_offset_ = layout_.add("proj1.weight", {config.projection_width, w},
                                static_cast<std::size_t>(config.projection_width * w));
    layout_.add("proj1.bias", {config.projection_width}, static_cast<std::size_t>(config.projection_width));
    proj2_offset_ = layout_.add("proj2.weight", {outputs, config.projection_width},
                                static_cast<std::size_t>(outputs * config.projection_width));
    layout_.add("proj2.bias", {outputs}, static_cast<std::size_t>(outputs));
    weights_.assign(layout_.total(), 0.0);
}

void ForwardModel::initialize(std::uint64_t seed)
{
    std::mt19937_64 rng = make_stream(seed, 0, 0xF0);
    std::span<double> all(weights_);
    const double lift_scale = 1.0 / std::sqrt(static_cast<double>(params_ + 1) * 2.0 * config_.modes);
    nn::init_uniform(all.subspan(lifting_offset_, lifting_.param_count()), lift_scale, rng);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& s = layers_[l];
        auto block = all.subspan(layer_offsets_[l], s.param_count());
        nn::init_uniform(block.first(s.spectral_count()), 0.5 / std::sqrt(static_cast<double>(s.in)), rng);
        nn::init_uniform(block.subspan(s.spectral_count()), 1.0 / std::sqrt(static_cast<double>(s.in)), rng);
    }
    nn::init_dense(proj1_, all.subspan(proj1_offset_, proj1_.param_count()), rng);
    nn::init_dense(proj2_, all.subspan(proj2_offset_, proj2_.param_count()), rng);
}

void ForwardModel::project(const Matrix& hidden, Matrix* pre, Matrix* act, Matrix& out) const
{
    std::span<const double> all(weights_);
    Matrix a;
    nn::dense_forward(proj1_, all.subspan(proj1_offset_, proj1_.param_count()), hidden, a);
    Matrix g(a.rows(), a.cols());
    spectral::apply_activation(Activation::gelu, a, g);
    nn::dense_forward(proj2_, all.subspan(proj2_offset_, proj2_.param_count()), g, out);
    if (pre) *pre = std::move(a);
    if (act) *act = std::move(g);
}

void ForwardModel::forward(const Matrix& z, Cache& cache, Matrix& out) const
{
    if (z.rows() != params_) {
        throw ConfigError("forward model expects " + std::to_string(params_) + " parameters, got " +
                          std::to_string(z.rows()));
    }
    std::span<const double> all(weights_);
    const Eigen::Index batch = z.cols();
    Matrix h;
    spectral::lifting_forward(lifting_, all.subspan(lifting_offset_, lifting_.param_count()), basis_, z,
                              cache.lifting, h);
    cache.layers.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Activation act = l + 1 < layers_.size() ? Activation::gelu : Activation::identity;
        Matrix next;
        spectral::spectral_forward(layers_[l], all.subspan(layer_offsets_[l], layers_[l].param_count()), basis_, h,
                                   batch, act, cache.layers[l], next);
        h = std::move(next);
    }
    cache.hidden = std::move(h);
    project(cache.hidden, &cache.proj_pre, &cache.proj_act, out);
}

Matrix ForwardModel::predict_latent(const Matrix& z) const
{
    Cache cache;
    Matrix out;
    forward(z, cache, out);
    return out;
}

Matrix ForwardModel::hidden_latent(const Matrix& z) const
{
    Cache cache;
    Matrix out;
    forward(z, cache, out);
    return cache.hidden;
}

Matrix ForwardModel::predict_at(const Eigen::Ref<const Vector>& z, std::span<const double> points) const
{
    const Matrix zc = z;
    const Eigen::Index n = basis_.points;
    bool latent = static_cast<Eigen::Index>(points.size()) == n;
    for (std::size_t i = 0; latent && i < points.size(); ++i) {
        latent = std::abs(points[i] - static_cast<double>(i) / static_cast<double>(n)) < 1e-12;
    }
    if (latent) return predict_latent(zc);

    for (double p : points) {
        if (p < 0.0 || p >= 1.0) throw ConfigError("query point outside the normalized period");
    }
    const Matrix hidden = hidden_latent(zc);
    const spectral::FourierBasis full = spectral::FourierBasis::uniform(n, static_cast<int>(n / 2 + 1));
    Matrix gc, gs;
    spectral::synthesis_matrices(full.modes, points, gc, gs);
    const Matrix interp = full.analysis_cos * gc + full.analysis_sin * gs;
    Matrix out;
    project(hidden * interp, nullptr, nullptr, out);
    return out;
}

double ForwardModel::l1_loss_and_gradient(const Matrix& z, const Matrix& targets, std::span<double> grad,
                                          double scale) const
{
    const Eigen::Index batch = z.cols();
    const Eigen::Index n = basis_.points;
    if (targets.rows() != outputs_ || targets.cols() != batch * n) {
        throw ConfigError("forward targets must be " + std::to_string(outputs_) + " x " + std::to_string(batch * n));
    }
    Cache cache;
    Matrix out;
    forward(z, cache, out);
    const Matrix diff = out - targets;
    if (!diff.allFinite()) throw NumericalError("forward prediction produced non-finite values");
    const double per_point = 1.0 / static_cast<double>(outputs_ * n);
    const double loss = diff.cwiseAbs().sum() * per_point;
    if (grad.empty()) return loss;

    std::span<const double> all(weights_);
    const Matrix d_out = diff.unaryExpr([&](double d) { return d > 0.0 ? scale * per_point : (d < 0.0 ? -scale * per_point : 0.0); });
    Matrix d_act;
    nn::dense_backward(proj2_, all.subspan(proj2_offset_, proj2_.param_count()), cache.proj_act, d_out,
                       grad.subspan(proj2_offset_, proj2_.param_count()), &d_act);
    d_act.array() *= cache.proj_pre.unaryExpr([](double x) { return spectral::gelu_derivative(x); }).array();
    Matrix d_h;
    nn::dense_backward(proj1_, all.subspan(proj1_offset_, proj1_.param_count()), cache.hidden, d_act,
                       grad.subspan(proj1_offset_, proj1_.param_count()), &d_h);
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const Activation act = l + 1 < layers_.size() ? Activation::gelu : Activation::identity;
        Matrix d_prev;
        spectral::spectral_backward(layers_[l], all.subspan(layer_offsets_[l], layers_[l].param_count()), basis_,
                                    cache.layers[l], batch, act, d_h, grad.subspan(layer_offsets_[l], layers_[l].param_count()),
                                    &d_prev);
        d_h = std::move(d_prev);
    }
    spectral::lifting_backward(lifting_, basis_, cache.lifting, d_h,
                               grad.subspan(lifting_offset_, lifting_.param_count()));
    return loss;
}

namespace {

constexpr std::size_t kChunk = 16;

}  // namespace

double forward_loss(const ForwardModel& model, const Matrix& z, const Matrix& targets)
{
    const double total = model.l1_loss_and_gradient(z, targets, {}, 0.0);
    return total / static_cast<double>(z.cols());
}

double forward_loss_gradient(const ForwardModel& model, const Matrix& z, const Matrix& targets,
                             std::vector<double>& grad, int threads)
{
    const auto batch = static_cast<std::size_t>(z.cols());
    if (batch == 0) throw ConfigError("empty batch");
    const Eigen::Index n = model.basis().points;
    const std::size_t chunks = (batch + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> partial(chunks, std::vector<double>(model.layout().total(), 0.0));
    std::vector<double> losses(chunks, 0.0);
    const double scale = 1.0 / static_cast<double>(batch);
    nn::parallel_chunks(batch, kChunk, threads, [&](std::size_t c, std::size_t b0, std::size_t b1) {
        const auto cols = static_cast<Eigen::Index>(b1 - b0);
        const auto first = static_cast<Eigen::Index>(b0);
        losses[c] = model.l1_loss_and_gradient(z.middleCols(first, cols), targets.middleCols(first * n, cols * n),
                                               partial[c], scale);
    });
    grad.assign(model.layout().total(), 0.0);
    double loss = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
        loss += losses[c];
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += partial[c][i];
    }
    return loss * scale;
}

}  // namespace fuse
