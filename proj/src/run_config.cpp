#include "fuse/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace fuse {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where)
{
    if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
    }
}

nlohmann::json problem_json(const synth::SynthProblem& p)
{
    return {{"sensors", p.sensors},
            {"t_start", p.grid.front()},
            {"t_end", p.grid.back()},
            {"points", p.grid.size()},
            {"domain", {p.domain_lo, p.domain_hi}},
            {"prior", {{"names", p.prior.names()}, {"lower", p.prior.lower()}, {"upper", p.prior.upper()}}}};
}

synth::SynthProblem problem_from_json(const nlohmann::json& j)
{
    reject_unknown(j, {"sensors", "t_start", "t_end", "points", "domain", "prior"}, "problem");
    synth::SynthProblem p = synth::SynthProblem::standard();
    p.sensors = j.value("sensors", p.sensors);
    const double t0 = j.value("t_start", p.grid.front());
    const double t1 = j.value("t_end", p.grid.back());
    const std::size_t n = j.value("points", p.grid.size());
    if (n < 2 || !(t1 > t0)) throw ConfigError("problem time grid needs points >= 2 and t_end > t_start");
    p.grid = linspace(t0, t1, n);
    if (j.contains("domain")) {
        const auto d = j["domain"].get<std::vector<double>>();
        if (d.size() != 2) throw ConfigError("problem.domain must be [lo, hi]");
        p.domain_lo = d[0];
        p.domain_hi = d[1];
    }
    if (j.contains("prior")) {
        const auto& q = j["prior"];
        reject_unknown(q, {"names", "lower", "upper"}, "problem.prior");
        p.prior = ParameterPrior(q.value("names", p.prior.names()), q.value("lower", p.prior.lower()),
                                 q.value("upper", p.prior.upper()));
    }
    p.validate();
    return p;
}

}  // namespace

nlohmann::json RunConfig::to_json() const
{
    return {{"problem", problem_json(problem)},
            {"data",
             {{"n_train", data.counts.train},
              {"n_val", data.counts.val},
              {"n_test", data.counts.test},
              {"seed", data.seed},
              {"normalization", to_string(data.normalization)}}},
            {"model", model.to_json()},
            {"train", train.to_json()},
            {"eval", {{"ensemble_size", eval.ensemble_size}, {"ode_steps", eval.ode_steps}, {"mask", eval.mask}, {"seed", eval.seed}}},
            {"output_root", output_root}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j)
{
    reject_unknown(j, {"problem", "data", "model", "train", "eval", "output_root"}, "config");
    RunConfig c;
    try {
        if (j.contains("problem")) c.problem = problem_from_json(j["problem"]);
        if (j.contains("data")) {
            const auto& d = j["data"];
            reject_unknown(d, {"n_train", "n_val", "n_test", "seed", "normalization"}, "data");
            c.data.counts.train = d.value("n_train", c.data.counts.train);
            c.data.counts.val = d.value("n_val", c.data.counts.val);
            c.data.counts.test = d.value("n_test", c.data.counts.test);
            c.data.seed = d.value("seed", c.data.seed);
            if (d.contains("normalization")) c.data.normalization = normalization_from_string(d["normalization"]);
        }
        if (j.contains("model")) {
            const auto& m = j["model"];
            reject_unknown(m, {"forward", "encoder", "flow"}, "model");
            if (m.contains("forward")) {
                reject_unknown(m["forward"], {"width", "modes", "layers", "projection_width", "latent_points"}, "model.forward");
            }
            if (m.contains("encoder")) reject_unknown(m["encoder"], {"width", "modes", "layers", "latent_points"}, "model.encoder");
            if (m.contains("flow")) reject_unknown(m["flow"], {"hidden", "layers", "time_frequencies", "sigma_min"}, "model.flow");
            c.model = ModelConfig::from_json(m);
        }
        if (j.contains("train")) {
            reject_unknown(j["train"],
                           {"epochs", "batch_size", "learning_rate", "final_learning_rate", "mask_probability",
                            "divergence_factor", "normalization", "seed"},
                           "train");
            c.train = TrainConfig::from_json(j["train"]);
        }
        if (j.contains("eval")) {
            const auto& e = j["eval"];
            reject_unknown(e, {"ensemble_size", "ode_steps", "mask", "seed"}, "eval");
            c.eval.ensemble_size = e.value("ensemble_size", c.eval.ensemble_size);
            c.eval.ode_steps = e.value("ode_steps", c.eval.ode_steps);
            c.eval.mask = e.value("mask", c.eval.mask);
            c.eval.seed = e.value("seed", c.eval.seed);
        }
        c.output_root = j.value("output_root", c.output_root);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    c.train.normalization = c.data.normalization;
    const int n = static_cast<int>(c.problem.grid.size());
    if (!j.contains("model") || !j["model"].contains("forward") || !j["model"]["forward"].contains("latent_points")) {
        c.model.forward.latent_points = n;
    }
    if (!j.contains("model") || !j["model"].contains("encoder") || !j["model"]["encoder"].contains("latent_points")) {
        c.model.encoder.latent_points = n;
    }
    if (c.eval.ensemble_size < 1 || c.eval.ode_steps < 1) throw ConfigError("eval.ensemble_size and eval.ode_steps must be positive");
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' not found");
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse config '" + path.string() + "': " + e.what());
    }
    return from_json(j);
}

std::string json_hash(const nlohmann::json& j)
{
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string RunConfig::hash() const { return json_hash(to_json()); }

std::string csv_header(const std::string& config_hash)
{
    return std::string("# format=") + kCsvFormat + " config_hash=" + config_hash;
}

}  // namespace fuse
