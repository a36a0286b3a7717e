#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "fuse/nn.hpp"
#include "fuse/spectral.hpp"

namespace fuse {

/// Maps physical times onto the normalized period [0, 1) used by every spectral evaluation.
struct GridConvention {
    double origin = 0.0;
    double period = 1.0;

    /// Origin at grid[0]; period N * spacing, so the uniform grid is n / N on the normalized period.
    static GridConvention from_uniform_grid(std::span<const double> grid);

    /// Normalized positions; throws ConfigError when a point falls outside one period.
    std::vector<double> normalize(std::span<const double> times) const;

    /// True when `times` is the uniform N-point grid n / N of this convention (within 1e-9 of a spacing).
    bool is_uniform(std::span<const double> times) const;

    friend bool operator==(const GridConvention&, const GridConvention&) = default;
};

struct ForwardConfig {
    int width = 32;
    int modes = 16;
    int layers = 4;
    int projection_width = 64;
    int latent_points = 128;

    nlohmann::json to_json() const;
    static ForwardConfig from_json(const nlohmann::json& j);
    friend bool operator==(const ForwardConfig&, const ForwardConfig&) = default;
};

/// Deterministic surrogate G(xi) = Q o K o h(xi) in normalized units.
///
/// Parameters enter on the unit box; the Fourier stack runs on a fixed latent grid of
/// `latent_points` samples, and outputs at other points come from the trigonometric interpolant of
/// the last hidden layer followed by the pointwise projection Q.
class ForwardModel {
public:
    ForwardModel() = default;
    ForwardModel(int params, int outputs, ForwardConfig config);

    int params() const noexcept { return params_; }
    int outputs() const noexcept { return outputs_; }
    const ForwardConfig& config() const noexcept { return config_; }
    const nn::ParamLayout& layout() const noexcept { return layout_; }
    std::vector<double>& weights() noexcept { return weights_; }
    const std::vector<double>& weights() const noexcept { return weights_; }
    const spectral::FourierBasis& basis() const noexcept { return basis_; }

    void initialize(std::uint64_t seed);

    /// Outputs on the latent grid for unit-box parameter columns z (m x B): d_s x (B * N_latent).
    Matrix predict_latent(const Matrix& z) const;

    /// Outputs (d_s x P) at arbitrary normalized points in [0, 1).
    Matrix predict_at(const Eigen::Ref<const Vector>& z, std::span<const double> points) const;

    /// Sum over the chunk of per-sample mean absolute errors, and the gradient of
    /// `scale` times that sum accumulated into `grad`.
    double l1_loss_and_gradient(const Matrix& z, const Matrix& targets, std::span<double> grad, double scale) const;

    /// Last hidden layer on the latent grid, W x (B * N_latent).
    Matrix hidden_latent(const Matrix& z) const;

private:
    struct Cache;
    void forward(const Matrix& z, Cache& cache, Matrix& out) const;
    void project(const Matrix& hidden, Matrix* pre, Matrix* act, Matrix& out) const;

    int params_ = 0;
    int outputs_ = 0;
    ForwardConfig config_;
    nn::ParamLayout layout_;
    std::vector<double> weights_;
    spectral::FourierBasis basis_;
    spectral::LiftingShape lifting_;
    std::vector<spectral::SpectralConvShape> layers_;
    nn::DenseShape proj1_, proj2_;
    std::size_t lifting_offset_ = 0;
    std::vector<std::size_t> layer_offsets_;
    std::size_t proj1_offset_ = 0, proj2_offset_ = 0;
};

/// Mean over the batch of mean absolute error over channels x grid. Throws NumericalError on NaN.
double forward_loss(const ForwardModel& model, const Matrix& z, const Matrix& targets);

/// Forward loss with its gradient with respect to the model weights.
double forward_loss_gradient(const ForwardModel& model, const Matrix& z, const Matrix& targets,
                             std::vector<double>& grad, int threads = 1);

}  // namespace fuse
