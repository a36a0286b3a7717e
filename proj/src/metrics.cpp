#include "fuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fuse::metrics {

double crps_empirical(std::span<const double> ensemble, double y)
{
    if (ensemble.empty()) throw DataError("CRPS needs a non-empty ensemble");
    std::vector<double> x(ensemble.begin(), ensemble.end());
    std::sort(x.begin(), x.end());
    const auto m = static_cast<double>(x.size());
    double spread = 0.0, skill = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        skill += std::abs(x[i] - y);
        // sum_ij |x_i - x_j| = 2 sum_i (2i - M + 1) x_(i) on sorted members
        spread += (2.0 * static_cast<double>(i) - m + 1.0) * x[i];
    }
    return skill / m - spread / (m * m);
}

double crps_parameters(const PosteriorEnsemble& ensemble, const Vector& xi_true, const ParameterPrior& prior)
{
    const auto m = static_cast<Eigen::Index>(prior.dim());
    if (ensemble.dim() != m || xi_true.size() != m) throw DataError("CRPS shapes do not match the prior dimension");
    double total = 0.0;
    std::vector<double> col(static_cast<std::size_t>(ensemble.size()));
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        const double lo = prior.lower()[jj], w = prior.width(jj);
        for (Eigen::Index i = 0; i < ensemble.size(); ++i) col[static_cast<std::size_t>(i)] = (ensemble.samples(i, j) - lo) / w;
        total += crps_empirical(col, (xi_true(j) - lo) / w);
    }
    return total / static_cast<double>(m);
}

double relative_lp_error(const Eigen::Ref<const Matrix>& pred, const Eigen::Ref<const Matrix>& truth, int p)
{
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw DataError("relative error shapes differ");
    double num = 0.0, den = 0.0;
    if (p == 1) {
        num = (pred - truth).cwiseAbs().sum();
        den = truth.cwiseAbs().sum();
    } else if (p == 2) {
        num = (pred - truth).norm();
        den = truth.norm();
    } else {
        throw ConfigError("relative error supports p = 1 or 2");
    }
    if (!(den > 0.0)) throw DataError("relative error undefined for a zero-norm reference");
    return num / den;
}

double total_variation(std::span<const double> p, std::span<const double> q)
{
    if (p.size() != q.size()) throw DataError("total variation needs a common support");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
}

std::vector<double> pushforward(std::span<const double> p, std::span<const std::size_t> map, std::size_t target_size)
{
    if (map.size() != p.size()) throw DataError("push-forward map must cover the support");
    std::vector<double> out(target_size, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (map[i] >= target_size) throw DataError("push-forward map leaves the target support");
        out[map[i]] += p[i];
    }
    return out;
}

TvCheck tv_pushforward_check(std::span<const double> p, std::span<const double> q, std::span<const std::size_t> map,
                             std::size_t target_size)
{
    TvCheck r;
    r.before = total_variation(p, q);
    const auto fp = pushforward(p, map, target_size);
    const auto fq = pushforward(q, map, target_size);
    r.after = total_variation(fp, fq);
    return r;
}

double ks_uniform(std::span<const double> samples, double lower, double upper)
{
    if (samples.empty()) throw DataError("KS distance needs samples");
    if (!(upper > lower)) throw ConfigError("KS reference needs lower < upper");
    std::vector<double> x(samples.begin(), samples.end());
    std::sort(x.begin(), x.end());
    const auto n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = std::clamp((x[i] - lower) / (upper - lower), 0.0, 1.0);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

Summary summarize(std::span<const double> values)
{
    Summary s;
    s.count = values.size();
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

const MetricBlock& MetricReport::block(const std::string& name) const
{
    for (const auto& b : blocks) {
        if (b.name == name) return b;
    }
    throw ConfigError("report has no block '" + name + "'");
}

namespace {

nlohmann::json summary_json(const Summary& s)
{
    return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
}

}  // namespace

nlohmann::json MetricReport::to_json() const
{
    nlohmann::json j;
    j["info"] = info;
    nlohmann::json arr = nlohmann::json::object();
    for (const auto& b : blocks) {
        nlohmann::json e;
        auto add = [&](const char* key, const std::vector<double>& v) {
            if (v.empty()) return;
            e[key]["per_sample"] = v;
            e[key]["aggregate"] = summary_json(summarize(v));
        };
        add("crps", b.crps);
        add("rel_l1", b.rel_l1);
        add("rel_l2", b.rel_l2);
        if (!b.crps.empty()) {
            const auto s = summarize(b.crps);
            e["crps_x100"] = {{"mean", 100.0 * s.mean}, {"std", 100.0 * s.std}};
        }
        arr[b.name] = e;
    }
    j["blocks"] = arr;
    return j;
}

std::string MetricReport::to_csv(const std::string& header_comment) const
{
    std::ostringstream os;
    os.precision(17);
    if (!header_comment.empty()) os << "# " << header_comment << "\n";
    os << "block,metric,count,mean,std\n";
    for (const auto& b : blocks) {
        auto row = [&](const char* name, const std::vector<double>& v, double scale) {
            if (v.empty()) return;
            const auto s = summarize(v);
            os << b.name << ',' << name << ',' << s.count << ',' << scale * s.mean << ',' << scale * s.std << "\n";
        };
        row("crps_x100", b.crps, 100.0);
        row("rel_l1", b.rel_l1, 1.0);
        row("rel_l2", b.rel_l2, 1.0);
    }
    return os.str();
}

}  // namespace fuse::metrics
