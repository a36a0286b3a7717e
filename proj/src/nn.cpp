#include "fuse/nn.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

namespace fuse::nn {

std::size_t ParamLayout::add(std::string name, std::vector<int> shape, std::size_t count, bool complex)
{
    TensorInfo info{std::move(name), std::move(shape), total_, count, complex};
    tensors_.push_back(std::move(info));
    total_ += count;
    return tensors_.back().offset;
}

const TensorInfo& ParamLayout::find(const std::string& name) const
{
    for (const auto& t : tensors_) {
        if (t.name == name) return t;
    }
    throw ConfigError("no tensor named '" + name + "'");
}

nlohmann::json ParamLayout::to_json() const
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : tensors_) {
        arr.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"offset", t.offset},
                       {"count", t.count},
                       {"dtype", t.complex ? "complex128-interleaved" : "float64"}});
    }
    return arr;
}

bool operator==(const ParamLayout& a, const ParamLayout& b)
{
    if (a.total_ != b.total_ || a.tensors_.size() != b.tensors_.size()) return false;
    for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
        const auto& x = a.tensors_[i];
        const auto& y = b.tensors_[i];
        if (x.name != y.name || x.shape != y.shape || x.offset != y.offset || x.count != y.count ||
            x.complex != y.complex)
            return false;
    }
    return true;
}

void dense_forward(const DenseShape& shape, std::span<const double> params, const Eigen::Ref<const Matrix>& x, Matrix& y)
{
    if (x.rows() != shape.in) {
        throw ConfigError("dense layer expects " + std::to_string(shape.in) + " inputs, got " + std::to_string(x.rows()));
    }
    Eigen::Map<const Matrix> w(params.data(), shape.out, shape.in);
    Eigen::Map<const Vector> b(params.data() + shape.in * shape.out, shape.out);
    y.noalias() = w * x;
    y.colwise() += b;
}

void dense_backward(const DenseShape& shape, std::span<const double> params, const Eigen::Ref<const Matrix>& x,
                    const Matrix& d_y, std::span<double> grad, Matrix* d_x)
{
    Eigen::Map<Matrix> gw(grad.data(), shape.out, shape.in);
    Eigen::Map<Vector> gb(grad.data() + shape.in * shape.out, shape.out);
    gw.noalias() += d_y * x.transpose();
    // Reduce into an aligned temporary; a reduction straight into the mapped buffer would vary with its address.
    gb += Vector(d_y.rowwise().sum());
    if (d_x) {
        Eigen::Map<const Matrix> w(params.data(), shape.out, shape.in);
        d_x->noalias() = w.transpose() * d_y;
    }
}

void init_uniform(std::span<double> params, double scale, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (double& p : params) p = dist(rng);
}

void init_dense(const DenseShape& shape, std::span<double> params, std::mt19937_64& rng)
{
    init_uniform(params, 1.0 / std::sqrt(static_cast<double>(shape.in)), rng);
}

Adam::Adam(std::size_t n, AdamConfig config) : config_(config), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double learning_rate)
{
    if (params.size() != m_.size() || grad.size() != m_.size()) throw ConfigError("optimizer size mismatch");
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double step = learning_rate * std::sqrt(c2) / c1;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        m_[i] = b1 * m_[i] + (1.0 - b1) * g;
        v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
        params[i] -= step * m_[i] / (std::sqrt(v_[i]) + config_.epsilon * std::sqrt(c2));
        if (config_.weight_decay > 0.0) params[i] -= learning_rate * config_.weight_decay * params[i];
    }
}

double cosine_rate(double initial, double final_value, std::size_t step, std::size_t total)
{
    if (total == 0) return initial;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    return final_value + 0.5 * (initial - final_value) * (1.0 + std::cos(std::numbers::pi * frac));
}

void parallel_chunks(std::size_t n, std::size_t chunk_size, int threads,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body)
{
    if (n == 0) return;
    if (chunk_size == 0) chunk_size = n;
    const std::size_t chunks = (n + chunk_size - 1) / chunk_size;
    auto run = [&](std::size_t c) { body(c, c * chunk_size, std::min(n, (c + 1) * chunk_size)); };
    if (threads <= 1 || chunks == 1) {
        for (std::size_t c = 0; c < chunks; ++c) run(c);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t c = next++; c < chunks; c = next++) {
            try {
                run(c);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(threads), chunks);
    std::vector<std::thread> pool;
    pool.reserve(count - 1);
    for (std::size_t i = 1; i < count; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

int default_threads()
{
    if (const char* env = std::getenv("FUSE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

}  // namespace fuse::nn
