#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "fuse/forward_model.hpp"
#include "fuse/nn.hpp"
#include "fuse/spectral.hpp"

namespace fuse {

struct EncoderConfig {
    int width = 32;
    int modes = 16;
    int layers = 4;
    int latent_points = 128;

    nlohmann::json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& j);
    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// u -> h~ o K o P(u): pointwise lifting, Fourier stack, and truncated transform to a fixed-size embedding.
///
/// Inputs on a uniform grid of any length are resampled onto the latent grid through their
/// trigonometric interpolant, so band-limited inputs give the same embedding at every resolution.
/// Embedding entry 2 * (c * K + k) is Re of mode k of channel c; the next entry is Im.
class ConditionalEncoder {
public:
    ConditionalEncoder() = default;
    ConditionalEncoder(int inputs, EncoderConfig config);

    int inputs() const noexcept { return inputs_; }
    int embedding_size() const noexcept { return 2 * config_.width * config_.modes; }
    const EncoderConfig& config() const noexcept { return config_; }
    const spectral::FourierBasis& basis() const noexcept { return basis_; }
    const nn::ParamLayout& layout() const noexcept { return layout_; }

    void initialize(std::span<double> weights, std::mt19937_64& rng) const;

    struct Cache {
        Matrix input;
        std::vector<spectral::SpectralCache> layers;
        Matrix hidden;
    };

    /// Batch forward on the latent grid: inputs d_u x (B * N_latent) -> embeddings k x B.
    void forward(std::span<const double> weights, const Matrix& inputs, Eigen::Index batch, Cache& cache,
                 Matrix& embeddings) const;
    void backward(std::span<const double> weights, const Cache& cache, Eigen::Index batch, const Matrix& d_embeddings,
                  std::span<double> grad) const;

    /// Single input d_u x N on a uniform grid covering one period (N arbitrary).
    Vector encode(std::span<const double> weights, const Eigen::Ref<const Matrix>& input) const;

private:
    int inputs_ = 0;
    EncoderConfig config_;
    nn::ParamLayout layout_;
    spectral::FourierBasis basis_;
    nn::DenseShape lift_;
    std::vector<spectral::SpectralConvShape> layers_;
    std::size_t lift_offset_ = 0;
    std::vector<std::size_t> layer_offsets_;
};

struct FlowConfig {
    int hidden = 256;
    int layers = 4;
    int time_frequencies = 4;
    double sigma_min = 1e-4;

    nlohmann::json to_json() const;
    static FlowConfig from_json(const nlohmann::json& j);
    friend bool operator==(const FlowConfig&, const FlowConfig&) = default;
};

/// Fully connected velocity field v(t, xi_t, u_hat) -> R^m on unit-box parameters.
///
/// Input features are [t, sin(pi 2^j t), cos(pi 2^j t) for j < F, xi_t, u_hat]; every hidden layer uses GELU.
class FlowField {
public:
    FlowField() = default;
    FlowField(int params, int embedding, FlowConfig config);

    int params() const noexcept { return params_; }
    int embedding() const noexcept { return embedding_; }
    int state_features() const noexcept { return 1 + 2 * config_.time_frequencies + params_; }
    const FlowConfig& config() const noexcept { return config_; }
    const nn::ParamLayout& layout() const noexcept { return layout_; }

    void initialize(std::span<double> weights, std::mt19937_64& rng) const;

    struct Cache {
        Matrix features;
        Matrix conditioning;
        std::vector<Matrix> pre;
        std::vector<Matrix> act;
    };

    /// Velocities (m x B) at per-column times `t`, states (m x B) and embeddings (k x B).
    void forward(std::span<const double> weights, std::span<const double> t, const Matrix& states,
                 const Matrix& embeddings, Cache& cache, Matrix& velocity) const;
    /// Accumulates weight gradients; writes d(loss)/d(embeddings) when requested.
    void backward(std::span<const double> weights, const Cache& cache, const Matrix& d_velocity,
                  std::span<double> grad, Matrix* d_embeddings) const;

    /// First-layer contribution of a fixed embedding, reused across all trajectories and steps.
    Vector condition(std::span<const double> weights, const Eigen::Ref<const Vector>& embedding) const;
    /// Velocities at a common time for many states given a precomputed condition().
    Matrix velocity(std::span<const double> weights, double t, const Matrix& states, const Vector& conditioned) const;

private:
    void features(std::span<const double> t, const Matrix& states, Matrix& out) const;

    int params_ = 0;
    int embedding_ = 0;
    FlowConfig config_;
    nn::ParamLayout layout_;
    std::vector<nn::DenseShape> dense_;
    std::vector<std::size_t> offsets_;
};

/// Encoder and flow sharing one flat weight vector (phi).
struct InverseModel {
    ConditionalEncoder encoder;
    FlowField flow;
    nn::ParamLayout layout;
    std::vector<double> weights;
    std::size_t flow_offset = 0;

    InverseModel() = default;
    InverseModel(int params, int inputs, EncoderConfig encoder_config, FlowConfig flow_config);

    void initialize(std::uint64_t seed);
    std::span<const double> encoder_weights() const;
    std::span<const double> flow_weights() const;
};

/// Point on the conditional optimal-transport path and its target velocity.
struct PathPoint {
    Vector xi_t;
    Vector target;
};

/// xi_t = (1 - (1 - s) t) xi0 + t xi1, l_t = (xi1 - (1 - s) xi_t) / (1 - (1 - s) t). Requires t in [0, 1).
PathPoint ot_path(const Eigen::Ref<const Vector>& xi0, const Eigen::Ref<const Vector>& xi1, double t,
                  double sigma_min);

/// Per-sample Monte Carlo draws for one FMPE evaluation.
struct FmpeDraws {
    std::vector<double> t;  // Uniform[0, 1)
    Matrix base;            // m x B standard normal
};

FmpeDraws draw_fmpe(Eigen::Index params, Eigen::Index batch, std::mt19937_64& rng);

/// Velocity callable v(t, states m x B, column index range) used by the generic estimators.
using VelocityFn = std::function<Matrix(std::span<const double> t, const Matrix& states)>;

/// Mean over columns of ||v(t, xi_t) - l_t||^2 for targets xi1 (m x B) and the given draws.
double fmpe_monte_carlo(const VelocityFn& v, const Matrix& xi1, const FmpeDraws& draws, double sigma_min);

/// FMPE loss of the inverse model on normalized inputs (d_u x (B * N_latent)) and unit-box targets (m x B).
/// `grad`, when non-empty, receives the gradient with respect to all inverse weights.
double fmpe_loss(const InverseModel& model, const Matrix& inputs, const Matrix& xi1, const FmpeDraws& draws,
                 std::vector<double>* grad, int threads = 1);

/// Same loss with draws taken from `rng`.
double fmpe_loss(const InverseModel& model, const Matrix& inputs, const Matrix& xi1, std::mt19937_64& rng);

/// Ensemble of M parameter samples (rows) in prior units.
struct PosteriorEnsemble {
    Matrix samples;  // M x m
    Eigen::Index size() const noexcept { return samples.rows(); }
    Eigen::Index dim() const noexcept { return samples.cols(); }
};

/// M standard-normal base draws (m x M); column i comes from stream (seed, i).
Matrix base_draws(Eigen::Index params, Eigen::Index count, std::uint64_t seed);

/// Fixed-step RK4 from t = 0 to 1 for every column of `state`. Throws NumericalError naming t on non-finite state.
using TimeVelocityFn = std::function<Matrix(double t, const Matrix& states)>;
Matrix integrate_flow(const TimeVelocityFn& v, Matrix state, int steps);

/// Integrates the flow conditioned on normalized input u (d_u x N, uniform grid), returns unit-box samples (m x M).
Matrix sample_unit(const InverseModel& model, const Eigen::Ref<const Matrix>& input, Eigen::Index count, int steps,
                   std::uint64_t seed, int threads = 1);

/// Unit-box samples mapped to prior units.
PosteriorEnsemble to_prior_units(const Matrix& unit_samples, const ParameterPrior& prior);

}  // namespace fuse
