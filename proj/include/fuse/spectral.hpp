#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "fuse/core_types.hpp"

namespace fuse::spectral {

/// Number of retained non-negative Fourier modes.
struct BandLimit {
    int modes = 1;

    /// Throws ConfigError unless 1 <= modes <= floor(n/2) + 1.
    void validate(Eigen::Index n) const;
};

/// One-sided spectrum of a real multichannel signal: channels x modes.
struct Spectrum {
    Matrix re;
    Matrix im;

    Eigen::Index channels() const noexcept { return re.rows(); }
    Eigen::Index modes() const noexcept { return re.cols(); }
};

/// Normalized positions n/N of a uniform grid covering one period.
std::vector<double> uniform_points(Eigen::Index n);

/// u_k = (1/N) sum_n x_n exp(-2 pi i k n / N), k < modes.
/// When the Nyquist mode k = N/2 is retained for even N it is stored halved, so the
/// one-sided synthesis below (weight 2 on every k > 0) inverts the transform exactly.
Spectrum dft_truncated(const Eigen::Ref<const Matrix>& values, BandLimit band);

/// x(t) = Re[u_0 + 2 sum_{k>0} u_k exp(2 pi i k t)] at normalized points t in [0, 1).
Matrix idft_on_grid(const Spectrum& coeffs, std::span<const double> points);

/// Real analysis/synthesis matrices for `modes` on a uniform grid of `points` samples.
struct FourierBasis {
    Eigen::Index points = 0;
    int modes = 0;
    Matrix analysis_cos;   // N x K
    Matrix analysis_sin;   // N x K
    Matrix synthesis_cos;  // K x N
    Matrix synthesis_sin;  // K x N

    static FourierBasis uniform(Eigen::Index points, int modes);
};

/// Synthesis rows for arbitrary normalized points (K x P each).
void synthesis_matrices(int modes, std::span<const double> points, Matrix& cos_part, Matrix& sin_part);

/// Linear map (N x P) resampling a uniform N-point signal to arbitrary points through its
/// trigonometric interpolant, excluding the Nyquist mode of either side.
Matrix resampling_matrix(Eigen::Index source_points, std::span<const double> target_points, Eigen::Index target_uniform);

enum class Activation { identity, gelu };

double gelu(double x) noexcept;
double gelu_derivative(double x) noexcept;
void apply_activation(Activation a, const Eigen::Ref<const Matrix>& pre, Eigen::Ref<Matrix> out);

/// Shapes of a Fourier layer: per-mode complex weights (modes x in x out) and a real bypass (in x out).
///
/// Parameter layout inside a flat span: the complex tensor first with entry (k, i, o) at
/// 2 * ((k * in + i) * out + o) (real, then imaginary), followed by the bypass with (i, o) at i * out + o.
struct SpectralConvShape {
    int in = 0;
    int out = 0;
    int modes = 0;

    std::size_t spectral_count() const noexcept { return 2u * static_cast<std::size_t>(modes * in * out); }
    std::size_t param_count() const noexcept { return spectral_count() + static_cast<std::size_t>(in * out); }
};

/// Intermediates of one chunk kept for the backward pass.
struct SpectralCache {
    Matrix input;     // in x (B*N)
    Matrix coeff_re;  // in x (K*B), column k*B + b
    Matrix coeff_im;
    Matrix pre;       // out x (B*N), before the activation
};

/// Forward pass for a chunk of `batch` samples laid out as in x (batch * N), sample-major columns.
void spectral_forward(const SpectralConvShape& shape, std::span<const double> params, const FourierBasis& basis,
                      const Matrix& input, Eigen::Index batch, Activation act, SpectralCache& cache, Matrix& out);

/// Accumulates parameter gradients into `grad` and, when `d_input` is non-null, writes the input gradient.
void spectral_backward(const SpectralConvShape& shape, std::span<const double> params, const FourierBasis& basis,
                       const SpectralCache& cache, Eigen::Index batch, Activation act, const Matrix& d_out,
                       std::span<double> grad, Matrix* d_input);

/// Owned weights of one Fourier layer in the flat layout of SpectralConvShape.
class SpectralLayerWeights {
public:
    SpectralLayerWeights() = default;
    explicit SpectralLayerWeights(SpectralConvShape shape);

    const SpectralConvShape& shape() const noexcept { return shape_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    std::complex<double> spectral(int k, int i, int o) const;
    void set_spectral(int k, int i, int o, std::complex<double> w);
    double bypass(int i, int o) const;
    void set_bypass(int i, int o, double w);

private:
    SpectralConvShape shape_;
    std::vector<double> data_;
};

/// activation( idft(W_k * dft(x)) + B^T x ) on a uniform grid of x.cols() points.
Matrix spectral_layer(const Eigen::Ref<const Matrix>& input, const SpectralLayerWeights& weights, Activation act);

/// Affine map from m parameters to channels x modes complex coefficients.
///
/// Layout: weight (2*C*K x m, column-major) then bias (2*C*K); coefficient row 2*(c*K + k) is the real
/// part of channel c, mode k, and the next row its imaginary part.
struct LiftingShape {
    int params = 0;
    int channels = 0;
    int modes = 0;

    Eigen::Index coeff_rows() const noexcept { return 2 * channels * modes; }
    std::size_t param_count() const noexcept
    {
        return static_cast<std::size_t>(coeff_rows()) * static_cast<std::size_t>(params + 1);
    }
};

struct LiftingCache {
    Matrix inputs;  // m x B
};

/// Lifts a batch of parameter columns (m x B) to channels x (B * N) on the basis grid.
void lifting_forward(const LiftingShape& shape, std::span<const double> params, const FourierBasis& basis,
                     const Matrix& inputs, LiftingCache& cache, Matrix& out);
void lifting_backward(const LiftingShape& shape, const FourierBasis& basis, const LiftingCache& cache,
                      const Matrix& d_out, std::span<double> grad);

class LiftingWeights {
public:
    LiftingWeights() = default;
    explicit LiftingWeights(LiftingShape shape);

    const LiftingShape& shape() const noexcept { return shape_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    /// Weight from parameter j to the real (part = 0) or imaginary (part = 1) coefficient of (c, k).
    void set_weight(int c, int k, int part, int j, double w);
    void set_bias(int c, int k, int part, double w);

private:
    LiftingShape shape_;
    std::vector<double> data_;
};

/// Band-limited lifting h(xi): affine map to coefficients, then synthesis at the given normalized points.
Matrix band_limited_lifting(const Eigen::Ref<const Vector>& xi, const LiftingWeights& weights,
                            std::span<const double> points);

}  // namespace fuse::spectral
