#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuse/core_types.hpp"
#include "fuse/forward_model.hpp"
#include "fuse/inverse_model.hpp"
#include "fuse/metrics.hpp"

namespace fuse {

inline constexpr const char* kCheckpointFormat = "fuse-checkpoint/1";

struct ModelConfig {
    ForwardConfig forward;
    EncoderConfig encoder;
    FlowConfig flow;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
    std::size_t epochs = 2000;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double final_learning_rate = 0.0;
    double mask_probability = 0.5;
    double divergence_factor = 1e3;
    NormalizationMode normalization = NormalizationMode::min_max;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Forward surrogate (theta) and inverse estimator (phi) with the frozen data conventions they were trained on.
struct FuseModel {
    ParameterPrior prior;
    std::vector<double> grid;
    std::vector<std::string> u_channels;
    std::vector<std::string> s_channels;
    GridConvention convention;
    NormalizationStats stats_u;
    NormalizationStats stats_s;
    ModelConfig config;
    TrainConfig train_config;
    ForwardModel forward;
    InverseModel inverse;

    /// Fits normalization on the train split, builds both networks and initializes them from the seed.
    /// Throws ConfigError when the dataset layout does not fit the architecture.
    static FuseModel create(const Dataset& data, const ModelConfig& config, const TrainConfig& train);

    std::size_t params() const noexcept { return prior.dim(); }

    /// Surrogate output in physical units on the training grid (d_s x N).
    Matrix predict(const ParameterVector& xi) const;
    /// Surrogate outputs for unit-box parameter columns (m x B), physical units, d_s x (B * N).
    Matrix predict_unit(const Matrix& z) const;
    /// Surrogate output at arbitrary physical times inside the model period.
    Matrix predict_at(const ParameterVector& xi, std::span<const double> times) const;

    /// Normalized and masked inverse input.
    Matrix prepare_input(const Eigen::Ref<const Matrix>& u, const ChannelMask& mask) const;

    PosteriorEnsemble sample_posterior(const Eigen::Ref<const Matrix>& u, const ChannelMask& mask, Eigen::Index count,
                                       int steps, std::uint64_t seed, int threads = 1) const;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_l1 = 0.0;
    double train_fmpe = 0.0;
    double val_l1 = 0.0;
    double val_fmpe = 0.0;
    double learning_rate = 0.0;
    double seconds = 0.0;
};

struct TrainingLog {
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0;
    double best_metric = 0.0;
    double initial_l1 = 0.0;
    double initial_fmpe = 0.0;

    nlohmann::json to_json() const;
};

/// Decoupled optimization: every batch takes one Adam step on L1 for theta and one on FMPE for phi.
class Trainer {
public:
    Trainer(FuseModel& model, const Dataset& data, int threads = 1);

    /// One Adam step on the forward weights for the given train indices; returns the batch L1.
    double forward_step(std::span<const std::size_t> batch, double learning_rate);
    /// One Adam step on the inverse weights; masking augmentation and FMPE draws come from `rng`.
    double inverse_step(std::span<const std::size_t> batch, double learning_rate, std::mt19937_64& rng);

    double validation_l1() const;
    double validation_fmpe() const;

    /// Runs the configured number of epochs, restores the weights of the best validation epoch
    /// and returns the log. `progress` is called after every epoch.
    TrainingLog run(const std::function<void(const EpochLog&)>& progress = {});

private:
    void gather(std::span<const std::size_t> idx, Matrix& z, Matrix& s, Matrix& u) const;

    FuseModel& model_;
    const Dataset& data_;
    int threads_;
    std::vector<std::size_t> train_, val_;
    Matrix z_all_, s_all_, u_all_;  // normalized, record-major columns
    FmpeDraws val_draws_;
    nn::Adam forward_opt_, inverse_opt_;
};

/// Propagated ensemble: M outputs in physical units with pointwise mean and (M - 1)-normalized std.
struct EnsemblePrediction {
    std::vector<Matrix> members;
    Matrix mean;
    Matrix std;
};

/// Single-pass (Welford) mean and std over members of equal shape.
EnsemblePrediction ensemble_statistics(std::vector<Matrix> members);

EnsemblePrediction propagate_samples(const FuseModel& model, const PosteriorEnsemble& ensemble);

struct Propagation {
    PosteriorEnsemble posterior;
    EnsemblePrediction prediction;
};

/// Samples the posterior for one observation and pushes every member through the surrogate. M >= 2.
Propagation propagate(const FuseModel& model, const Eigen::Ref<const Matrix>& u, const ChannelMask& mask,
                      Eigen::Index count, int steps, std::uint64_t seed, int threads = 1);

enum class Statistic : std::uint8_t { max, mean, min };

std::string to_string(Statistic s);
Statistic statistic_from_string(const std::string& s);
double apply_statistic(Statistic s, const Eigen::Ref<const Vector>& series);

struct FingerprintOptions {
    bool allow_ood = false;
    std::size_t channel = 0;
    Statistic statistic = Statistic::max;
};

struct Fingerprint {
    std::vector<double> values;
    std::vector<Matrix> outputs;  // physical units, d_s x N each
};

/// Uniform sweep of one component over [lo, hi] (prior bounds by default), others fixed at `defaults`.
Fingerprint fingerprint(const FuseModel& model, std::size_t index, std::size_t n_values, const ParameterVector& defaults,
                        std::optional<std::pair<double, double>> range = std::nullopt,
                        const FingerprintOptions& options = {});

/// Statistic of the chosen output channel on the grid_i x grid_j sweep (rows follow grid_i).
Matrix pairwise_fingerprint(const FuseModel& model, std::size_t i, std::size_t j, std::span<const double> grid_i,
                            std::span<const double> grid_j, const ParameterVector& defaults,
                            const FingerprintOptions& options = {});

struct EvaluateOptions {
    Split split = Split::test;
    Eigen::Index ensemble_size = 128;
    int steps = 64;
    std::uint64_t seed = 0;
    ChannelMask mask;  // empty keeps every channel
    bool dirac = false;
    std::size_t limit = 0;  // 0 evaluates the whole split
    int threads = 1;
};

/// Forward-only, inverse-only, unified and prior-baseline blocks over one split.
metrics::MetricReport evaluate(const FuseModel& model, const Dataset& data, const EvaluateOptions& options);

/// Directory with model.json, forward.bin and inverse.bin. Refuses to overwrite without `force`.
void save_checkpoint(const std::filesystem::path& dir, const FuseModel& model, const std::string& config_hash = {},
                     bool force = false);
FuseModel load_checkpoint(const std::filesystem::path& dir);
nlohmann::json checkpoint_manifest(const FuseModel& model, const std::string& config_hash);

}  // namespace fuse
