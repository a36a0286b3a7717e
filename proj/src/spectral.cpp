#include "fuse/spectral.hpp"

#include <cmath>
#include <numbers>

namespace fuse::spectral {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

using StridedConstMap = Eigen::Map<const Matrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
using OuterConstMap = Eigen::Map<const Matrix, 0, Eigen::OuterStride<>>;
using OuterMap = Eigen::Map<Matrix, 0, Eigen::OuterStride<>>;

// Per-mode complex weights as out x in matrices, real and imaginary parts interleaved.
StridedConstMap mode_re(const SpectralConvShape& s, const double* p, int k)
{
    return StridedConstMap(p + 2 * static_cast<std::ptrdiff_t>(k) * s.in * s.out, s.out, s.in,
                           Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(2 * s.out, 2));
}

StridedConstMap mode_im(const SpectralConvShape& s, const double* p, int k)
{
    return StridedConstMap(p + 2 * static_cast<std::ptrdiff_t>(k) * s.in * s.out + 1, s.out, s.in,
                           Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(2 * s.out, 2));
}

void add_interleaved(double* dst, const Matrix& m)
{
    // m is out x in; destination entry (o, i) sits at 2 * (i * out + o).
    const Eigen::Index out = m.rows();
    for (Eigen::Index i = 0; i < m.cols(); ++i)
        for (Eigen::Index o = 0; o < out; ++o) dst[2 * (i * out + o)] += m(o, i);
}

}  // namespace

void BandLimit::validate(Eigen::Index n) const
{
    if (modes < 1 || modes > n / 2 + 1) {
        throw ConfigError("band limit of " + std::to_string(modes) + " modes is invalid for a grid of " +
                          std::to_string(n) + " points (need 1 <= K <= " + std::to_string(n / 2 + 1) + ")");
    }
}

std::vector<double> uniform_points(Eigen::Index n)
{
    std::vector<double> p(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(n);
    return p;
}

FourierBasis FourierBasis::uniform(Eigen::Index points, int modes)
{
    BandLimit{modes}.validate(points);
    FourierBasis b;
    b.points = points;
    b.modes = modes;
    b.analysis_cos.resize(points, modes);
    b.analysis_sin.resize(points, modes);
    const double inv_n = 1.0 / static_cast<double>(points);
    for (Eigen::Index n = 0; n < points; ++n) {
        for (int k = 0; k < modes; ++k) {
            // Reduce k*n modulo N so the phase stays exact for large grids.
            const auto r = (static_cast<long long>(k) * n) % points;
            const double phase = kTwoPi * static_cast<double>(r) * inv_n;
            b.analysis_cos(n, k) = std::cos(phase) * inv_n;
            b.analysis_sin(n, k) = -std::sin(phase) * inv_n;
        }
    }
    if (points % 2 == 0 && modes - 1 == points / 2) {
        b.analysis_cos.col(modes - 1) *= 0.5;
        b.analysis_sin.col(modes - 1) *= 0.5;
    }
    const auto pts = uniform_points(points);
    synthesis_matrices(modes, pts, b.synthesis_cos, b.synthesis_sin);
    // Exact signs on grid points, avoiding sin(pi * n) round-off in the Nyquist row.
    for (Eigen::Index n = 0; n < points; ++n) {
        for (int k = 0; k < modes; ++k) {
            const auto r = (static_cast<long long>(k) * n) % points;
            const double phase = kTwoPi * static_cast<double>(r) * inv_n;
            const double w = k == 0 ? 1.0 : 2.0;
            b.synthesis_cos(k, n) = w * std::cos(phase);
            b.synthesis_sin(k, n) = -w * std::sin(phase);
        }
    }
    return b;
}

void synthesis_matrices(int modes, std::span<const double> points, Matrix& cos_part, Matrix& sin_part)
{
    const auto p = static_cast<Eigen::Index>(points.size());
    cos_part.resize(modes, p);
    sin_part.resize(modes, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double t = points[static_cast<std::size_t>(j)];
        for (int k = 0; k < modes; ++k) {
            const double phase = kTwoPi * static_cast<double>(k) * t;
            const double w = k == 0 ? 1.0 : 2.0;
            cos_part(k, j) = w * std::cos(phase);
            sin_part(k, j) = -w * std::sin(phase);
        }
    }
}

Matrix resampling_matrix(Eigen::Index source_points, std::span<const double> target_points, Eigen::Index target_uniform)
{
    const Eigen::Index limit = std::min((source_points - 1) / 2, (target_uniform - 1) / 2) + 1;
    const int modes = static_cast<int>(limit);
    FourierBasis src = FourierBasis::uniform(source_points, modes);
    Matrix gc, gs;
    synthesis_matrices(modes, target_points, gc, gs);
    return src.analysis_cos * gc + src.analysis_sin * gs;
}

Spectrum dft_truncated(const Eigen::Ref<const Matrix>& values, BandLimit band)
{
    band.validate(values.cols());
    const FourierBasis basis = FourierBasis::uniform(values.cols(), band.modes);
    return Spectrum{values * basis.analysis_cos, values * basis.analysis_sin};
}

Matrix idft_on_grid(const Spectrum& coeffs, std::span<const double> points)
{
    if (coeffs.re.rows() != coeffs.im.rows() || coeffs.re.cols() != coeffs.im.cols()) {
        throw ConfigError("spectrum real and imaginary parts differ in shape");
    }
    Matrix gc, gs;
    synthesis_matrices(static_cast<int>(coeffs.modes()), points, gc, gs);
    return coeffs.re * gc + coeffs.im * gs;
}

double gelu(double x) noexcept
{
    return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
}

double gelu_derivative(double x) noexcept
{
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
    const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * std::numbers::sqrt2 * 0.5);
    return cdf + x * pdf;
}

void apply_activation(Activation a, const Eigen::Ref<const Matrix>& pre, Eigen::Ref<Matrix> out)
{
    if (a == Activation::identity) {
        out = pre;
        return;
    }
    out = pre.unaryExpr([](double x) { return gelu(x); });
}

void spectral_forward(const SpectralConvShape& shape, std::span<const double> params, const FourierBasis& basis,
                      const Matrix& input, Eigen::Index batch, Activation act, SpectralCache& cache, Matrix& out)
{
    const Eigen::Index n = basis.points;
    const int k_modes = shape.modes;
    if (input.rows() != shape.in || input.cols() != batch * n) {
        throw ConfigError("spectral layer expects " + std::to_string(shape.in) + " x " + std::to_string(batch * n) +
                          " input, got " + std::to_string(input.rows()) + " x " + std::to_string(input.cols()));
    }
    if (k_modes > basis.modes) throw ConfigError("spectral layer uses more modes than the basis provides");
    if (params.size() != shape.param_count()) throw ConfigError("spectral layer parameter span has wrong size");

    const double* p = params.data();
    const auto fc = basis.analysis_cos.leftCols(k_modes);
    const auto fs = basis.analysis_sin.leftCols(k_modes);
    const auto gc = basis.synthesis_cos.topRows(k_modes);
    const auto gs = basis.synthesis_sin.topRows(k_modes);

    cache.input = input;
    cache.coeff_re.resize(shape.in, k_modes * batch);
    cache.coeff_im.resize(shape.in, k_modes * batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        const auto xb = input.middleCols(b * n, n);
        OuterMap re(cache.coeff_re.data() + b * shape.in, shape.in, k_modes, Eigen::OuterStride<>(batch * shape.in));
        OuterMap im(cache.coeff_im.data() + b * shape.in, shape.in, k_modes, Eigen::OuterStride<>(batch * shape.in));
        re.noalias() = xb * fc;
        im.noalias() = xb * fs;
    }

    Matrix y_re(shape.out, k_modes * batch), y_im(shape.out, k_modes * batch);
    for (int k = 0; k < k_modes; ++k) {
        const auto wr = mode_re(shape, p, k);
        const auto wi = mode_im(shape, p, k);
        const auto xr = cache.coeff_re.middleCols(k * batch, batch);
        const auto xi = cache.coeff_im.middleCols(k * batch, batch);
        y_re.middleCols(k * batch, batch).noalias() = wr * xr - wi * xi;
        y_im.middleCols(k * batch, batch).noalias() = wr * xi + wi * xr;
    }

    Eigen::Map<const Matrix> bypass(p + shape.spectral_count(), shape.out, shape.in);
    cache.pre.noalias() = bypass * input;
    for (Eigen::Index b = 0; b < batch; ++b) {
        OuterConstMap yr(y_re.data() + b * shape.out, shape.out, k_modes, Eigen::OuterStride<>(batch * shape.out));
        OuterConstMap yi(y_im.data() + b * shape.out, shape.out, k_modes, Eigen::OuterStride<>(batch * shape.out));
        cache.pre.middleCols(b * n, n).noalias() += yr * gc;
        cache.pre.middleCols(b * n, n).noalias() += yi * gs;
    }
    out.resize(shape.out, batch * n);
    apply_activation(act, cache.pre, out);
}

void spectral_backward(const SpectralConvShape& shape, std::span<const double> params, const FourierBasis& basis,
                       const SpectralCache& cache, Eigen::Index batch, Activation act, const Matrix& d_out,
                       std::span<double> grad, Matrix* d_input)
{
    const Eigen::Index n = basis.points;
    const int k_modes = shape.modes;
    const double* p = params.data();
    double* g = grad.data();

    Matrix d_pre = d_out;
    if (act == Activation::gelu) d_pre.array() *= cache.pre.unaryExpr([](double x) { return gelu_derivative(x); }).array();

    Eigen::Map<Matrix> g_bypass(g + shape.spectral_count(), shape.out, shape.in);
    g_bypass.noalias() += d_pre * cache.input.transpose();

    const auto fc = basis.analysis_cos.leftCols(k_modes);
    const auto fs = basis.analysis_sin.leftCols(k_modes);
    const auto gc = basis.synthesis_cos.topRows(k_modes);
    const auto gs = basis.synthesis_sin.topRows(k_modes);

    Matrix dy_re(shape.out, k_modes * batch), dy_im(shape.out, k_modes * batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        const auto db = d_pre.middleCols(b * n, n);
        OuterMap yr(dy_re.data() + b * shape.out, shape.out, k_modes, Eigen::OuterStride<>(batch * shape.out));
        OuterMap yi(dy_im.data() + b * shape.out, shape.out, k_modes, Eigen::OuterStride<>(batch * shape.out));
        yr.noalias() = db * gc.transpose();
        yi.noalias() = db * gs.transpose();
    }

    Matrix dx_re, dx_im;
    if (d_input) {
        dx_re.resize(shape.in, k_modes * batch);
        dx_im.resize(shape.in, k_modes * batch);
    }
    Matrix gwr(shape.out, shape.in), gwi(shape.out, shape.in);
    for (int k = 0; k < k_modes; ++k) {
        const auto dyr = dy_re.middleCols(k * batch, batch);
        const auto dyi = dy_im.middleCols(k * batch, batch);
        const auto xr = cache.coeff_re.middleCols(k * batch, batch);
        const auto xi = cache.coeff_im.middleCols(k * batch, batch);
        gwr.noalias() = dyr * xr.transpose();
        gwr.noalias() += dyi * xi.transpose();
        gwi.noalias() = dyi * xr.transpose();
        gwi.noalias() -= dyr * xi.transpose();
        double* base = g + 2 * static_cast<std::ptrdiff_t>(k) * shape.in * shape.out;
        add_interleaved(base, gwr);
        add_interleaved(base + 1, gwi);
        if (d_input) {
            const auto wr = mode_re(shape, p, k);
            const auto wi = mode_im(shape, p, k);
            dx_re.middleCols(k * batch, batch).noalias() = wr.transpose() * dyr + wi.transpose() * dyi;
            dx_im.middleCols(k * batch, batch).noalias() = wr.transpose() * dyi - wi.transpose() * dyr;
        }
    }

    if (!d_input) return;
    Eigen::Map<const Matrix> bypass(p + shape.spectral_count(), shape.out, shape.in);
    d_input->noalias() = bypass.transpose() * d_pre;
    for (Eigen::Index b = 0; b < batch; ++b) {
        OuterConstMap xr(dx_re.data() + b * shape.in, shape.in, k_modes, Eigen::OuterStride<>(batch * shape.in));
        OuterConstMap xi(dx_im.data() + b * shape.in, shape.in, k_modes, Eigen::OuterStride<>(batch * shape.in));
        d_input->middleCols(b * n, n).noalias() += xr * fc.transpose();
        d_input->middleCols(b * n, n).noalias() += xi * fs.transpose();
    }
}

SpectralLayerWeights::SpectralLayerWeights(SpectralConvShape shape) : shape_(shape), data_(shape.param_count(), 0.0)
{
    if (shape.in < 1 || shape.out < 1 || shape.modes < 1) throw ConfigError("spectral layer shape must be positive");
}

std::complex<double> SpectralLayerWeights::spectral(int k, int i, int o) const
{
    const std::size_t idx = 2u * static_cast<std::size_t>((k * shape_.in + i) * shape_.out + o);
    return {data_[idx], data_[idx + 1]};
}

void SpectralLayerWeights::set_spectral(int k, int i, int o, std::complex<double> w)
{
    const std::size_t idx = 2u * static_cast<std::size_t>((k * shape_.in + i) * shape_.out + o);
    data_[idx] = w.real();
    data_[idx + 1] = w.imag();
}

double SpectralLayerWeights::bypass(int i, int o) const
{
    return data_[shape_.spectral_count() + static_cast<std::size_t>(i * shape_.out + o)];
}

void SpectralLayerWeights::set_bypass(int i, int o, double w)
{
    data_[shape_.spectral_count() + static_cast<std::size_t>(i * shape_.out + o)] = w;
}

Matrix spectral_layer(const Eigen::Ref<const Matrix>& input, const SpectralLayerWeights& weights, Activation act)
{
    const auto& shape = weights.shape();
    if (input.rows() != shape.in) {
        throw ConfigError("spectral layer expects " + std::to_string(shape.in) + " input channels, got " +
                          std::to_string(input.rows()));
    }
    const FourierBasis basis = FourierBasis::uniform(input.cols(), shape.modes);
    SpectralCache cache;
    Matrix out;
    spectral_forward(shape, weights.data(), basis, Matrix(input), 1, act, cache, out);
    return out;
}

void lifting_forward(const LiftingShape& shape, std::span<const double> params, const FourierBasis& basis,
                     const Matrix& inputs, LiftingCache& cache, Matrix& out)
{
    if (inputs.rows() != shape.params) {
        throw ConfigError("lifting expects " + std::to_string(shape.params) + " parameters, got " +
                          std::to_string(inputs.rows()));
    }
    if (params.size() != shape.param_count()) throw ConfigError("lifting parameter span has wrong size");
    if (shape.modes > basis.modes) throw ConfigError("lifting uses more modes than the basis provides");
    const Eigen::Index rows = shape.coeff_rows();
    const Eigen::Index batch = inputs.cols();
    const Eigen::Index n = basis.points;
    Eigen::Map<const Matrix> w(params.data(), rows, shape.params);
    Eigen::Map<const Vector> bias(params.data() + rows * shape.params, rows);

    cache.inputs = inputs;
    Matrix coeffs = w * inputs;
    coeffs.colwise() += bias;

    const auto gc = basis.synthesis_cos.topRows(shape.modes);
    const auto gs = basis.synthesis_sin.topRows(shape.modes);
    out.resize(shape.channels, batch * n);
    for (Eigen::Index b = 0; b < batch; ++b) {
        // Element (c, k) of the real part sits at row 2 * (c * K + k).
        StridedConstMap cr(coeffs.data() + b * rows, shape.channels, shape.modes,
                           Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(2, 2 * shape.modes));
        StridedConstMap ci(coeffs.data() + b * rows + 1, shape.channels, shape.modes,
                           Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(2, 2 * shape.modes));
        out.middleCols(b * n, n).noalias() = cr * gc;
        out.middleCols(b * n, n).noalias() += ci * gs;
    }
}

void lifting_backward(const LiftingShape& shape, const FourierBasis& basis, const LiftingCache& cache,
                      const Matrix& d_out, std::span<double> grad)
{
    const Eigen::Index rows = shape.coeff_rows();
    const Eigen::Index batch = cache.inputs.cols();
    const Eigen::Index n = basis.points;
    const auto gc = basis.synthesis_cos.topRows(shape.modes);
    const auto gs = basis.synthesis_sin.topRows(shape.modes);

    Matrix d_coeffs(rows, batch);
    Matrix dr(shape.channels, shape.modes), di(shape.channels, shape.modes);
    for (Eigen::Index b = 0; b < batch; ++b) {
        const auto db = d_out.middleCols(b * n, n);
        dr.noalias() = db * gc.transpose();
        di.noalias() = db * gs.transpose();
        for (int c = 0; c < shape.channels; ++c) {
            for (int k = 0; k < shape.modes; ++k) {
                d_coeffs(2 * (c * shape.modes + k), b) = dr(c, k);
                d_coeffs(2 * (c * shape.modes + k) + 1, b) = di(c, k);
            }
        }
    }
    Eigen::Map<Matrix> gw(grad.data(), rows, shape.params);
    Eigen::Map<Vector> gb(grad.data() + rows * shape.params, rows);
    gw.noalias() += d_coeffs * cache.inputs.transpose();
    gb += Vector(d_coeffs.rowwise().sum());
}

LiftingWeights::LiftingWeights(LiftingShape shape) : shape_(shape), data_(shape.param_count(), 0.0)
{
    if (shape.params < 1 || shape.channels < 1 || shape.modes < 1) throw ConfigError("lifting shape must be positive");
}

void LiftingWeights::set_weight(int c, int k, int part, int j, double w)
{
    const Eigen::Index row = 2 * (c * shape_.modes + k) + part;
    data_[static_cast<std::size_t>(j * shape_.coeff_rows() + row)] = w;
}

void LiftingWeights::set_bias(int c, int k, int part, double w)
{
    const Eigen::Index row = 2 * (c * shape_.modes + k) + part;
    data_[static_cast<std::size_t>(shape_.coeff_rows() * shape_.params + row)] = w;
}

Matrix band_limited_lifting(const Eigen::Ref<const Vector>& xi, const LiftingWeights& weights,
                            std::span<const double> points)
{
    const auto& shape = weights.shape();
    if (xi.size() != shape.params) {
        throw ConfigError("lifting expects " + std::to_string(shape.params) + " parameters, got " +
                          std::to_string(xi.size()));
    }
    const Eigen::Index rows = shape.coeff_rows();
    Eigen::Map<const Matrix> w(weights.data().data(), rows, shape.params);
    Eigen::Map<const Vector> bias(weights.data().data() + rows * shape.params, rows);
    const Vector coeffs = w * xi + bias;
    Spectrum coeff{Matrix(shape.channels, shape.modes), Matrix(shape.channels, shape.modes)};
    for (int c = 0; c < shape.channels; ++c) {
        for (int k = 0; k < shape.modes; ++k) {
            coeff.re(c, k) = coeffs[2 * (c * shape.modes + k)];
            coeff.im(c, k) = coeffs[2 * (c * shape.modes + k) + 1];
        }
    }
    return idft_on_grid(coeff, points);
}

}  // namespace fuse::spectral
