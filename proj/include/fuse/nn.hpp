#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuse/core_types.hpp"

namespace fuse::nn {

/// A named tensor inside a flat parameter vector.
struct TensorInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t count = 0;
    bool complex = false;  // interleaved real/imaginary pairs; count includes both parts
};

/// Ordered description of a flat parameter vector; serialized as the checkpoint shape manifest.
class ParamLayout {
public:
    std::size_t add(std::string name, std::vector<int> shape, std::size_t count, bool complex = false);

    std::size_t total() const noexcept { return total_; }
    const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }
    const TensorInfo& find(const std::string& name) const;

    nlohmann::json to_json() const;
    friend bool operator==(const ParamLayout& a, const ParamLayout& b);

private:
    std::vector<TensorInfo> tensors_;
    std::size_t total_ = 0;
};

/// y = W x + b with W stored out x in column-major, followed by b.
struct DenseShape {
    int in = 0;
    int out = 0;
    std::size_t param_count() const noexcept { return static_cast<std::size_t>(in * out + out); }
};

void dense_forward(const DenseShape& shape, std::span<const double> params, const Eigen::Ref<const Matrix>& x, Matrix& y);
void dense_backward(const DenseShape& shape, std::span<const double> params, const Eigen::Ref<const Matrix>& x,
                    const Matrix& d_y, std::span<double> grad, Matrix* d_x);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
void init_dense(const DenseShape& shape, std::span<double> params, std::mt19937_64& rng);
void init_uniform(std::span<double> params, double scale, std::mt19937_64& rng);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

/// Adaptive-moment gradient descent over one flat parameter vector.
class Adam {
public:
    Adam() = default;
    Adam(std::size_t n, AdamConfig config);

    void step(std::span<double> params, std::span<const double> grad, double learning_rate);
    std::size_t steps() const noexcept { return t_; }

private:
    AdamConfig config_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::size_t t_ = 0;
};

/// Cosine decay from `initial` to `final_value` over `total` steps.
double cosine_rate(double initial, double final_value, std::size_t step, std::size_t total);

/// Runs `body(chunk, begin, end)` over fixed-size chunks of [0, n). Chunk boundaries depend only on
/// `chunk_size`, so results reduced in chunk order are independent of `threads`.
void parallel_chunks(std::size_t n, std::size_t chunk_size, int threads,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body);

/// Thread count from FUSE_THREADS when set, else 1.
int default_threads();

}  // namespace fuse::nn
