#include "fuse/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace fuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t to_little(std::uint64_t v)
{
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
        return r;
    }
}

template <typename T>
std::vector<T> json_vector(const json& j, const char* key)
{
    if (!j.contains(key)) throw DataError(std::string("manifest is missing '") + key + "'");
    return j.at(key).get<std::vector<T>>();
}

}  // namespace

void write_f64_file(const fs::path& path, std::span<const double> data)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    std::vector<std::uint64_t> buf(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &data[i], sizeof bits);
        buf[i] = to_little(bits);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 8));
    if (!out) throw DataError("failed writing " + path.string());
}

std::vector<double> read_f64_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % 8 != 0) throw DataError(path.string() + " is not a float64 array");
    in.seekg(0);
    std::vector<std::uint64_t> buf(bytes / 8);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    std::vector<double> out(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const std::uint64_t bits = to_little(buf[i]);
        std::memcpy(&out[i], &bits, sizeof bits);
    }
    return out;
}

json read_json_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const json& j)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

void save_dataset(const fs::path& dir, const Dataset& dataset, const DatasetWriteOptions& options)
{
    if (fs::exists(dir)) {
        if (!options.force) throw ConfigError("output directory " + dir.string() + " exists (use --force)");
    }
    fs::create_directories(dir);

    const std::size_t m = dataset.prior().dim();
    const std::size_t n_points = dataset.grid().size();
    const std::size_t du = dataset.u_channels().size();
    const std::size_t ds = dataset.s_channels().size();

    std::vector<std::size_t> order;
    for (Split s : {Split::train, Split::val, Split::test}) {
        const auto idx = dataset.indices(s);
        order.insert(order.end(), idx.begin(), idx.end());
    }

    std::vector<double> params, u, s;
    params.reserve(order.size() * m);
    u.reserve(order.size() * du * n_points);
    s.reserve(order.size() * ds * n_points);
    for (std::size_t i : order) {
        const Record& r = dataset[i];
        params.insert(params.end(), r.xi.values.begin(), r.xi.values.end());
        for (Eigen::Index c = 0; c < r.u.channels(); ++c)
            for (Eigen::Index t = 0; t < r.u.points(); ++t) u.push_back(r.u.values()(c, t));
        for (Eigen::Index c = 0; c < r.s.channels(); ++c)
            for (Eigen::Index t = 0; t < r.s.points(); ++t) s.push_back(r.s.values()(c, t));
    }

    const SplitCounts counts = dataset.counts();
    json manifest;
    manifest["format"] = kDatasetFormat;
    manifest["m"] = m;
    manifest["n"] = order.size();
    manifest["parameter_names"] = dataset.prior().names();
    manifest["prior"] = {{"lower", dataset.prior().lower()}, {"upper", dataset.prior().upper()}};
    manifest["u_channels"] = dataset.u_channels();
    manifest["s_channels"] = dataset.s_channels();
    manifest["grid"] = dataset.grid();
    manifest["splits"] = {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}};
    manifest["normalization"] = to_string(options.normalization);
    manifest["config_hash"] = options.config_hash;
    manifest["layout"] = {{"params.bin", {"n", "m"}},
                          {"u.bin", {"n", "d_u", "N"}},
                          {"s.bin", {"n", "d_s", "N"}},
                          {"dtype", "float64-le"},
                          {"order", "row-major"}};

    write_json_file(dir / "manifest.json", manifest);
    write_f64_file(dir / "params.bin", params);
    write_f64_file(dir / "u.bin", u);
    write_f64_file(dir / "s.bin", s);
}

LoadedDataset load_dataset(const fs::path& dir)
{
    if (!fs::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " does not exist");
    json manifest = read_json_file(dir / "manifest.json");
    if (manifest.value("format", std::string()) != kDatasetFormat) {
        throw DataError("unsupported dataset format in " + dir.string());
    }

    try {
        ParameterPrior prior(json_vector<std::string>(manifest, "parameter_names"),
                             manifest.at("prior").at("lower").get<std::vector<double>>(),
                             manifest.at("prior").at("upper").get<std::vector<double>>());
        auto grid = json_vector<double>(manifest, "grid");
        auto u_names = json_vector<std::string>(manifest, "u_channels");
        auto s_names = json_vector<std::string>(manifest, "s_channels");
        SplitCounts counts{manifest.at("splits").at("train").get<std::size_t>(),
                           manifest.at("splits").at("val").get<std::size_t>(),
                           manifest.at("splits").at("test").get<std::size_t>()};
        const std::size_t m = manifest.at("m").get<std::size_t>();
        if (m != prior.dim()) throw DataError("manifest m disagrees with parameter names");

        const std::size_t n = counts.total();
        const std::size_t n_points = grid.size();
        const auto params = read_f64_file(dir / "params.bin");
        const auto u = read_f64_file(dir / "u.bin");
        const auto s = read_f64_file(dir / "s.bin");
        if (params.size() != n * m) throw DataError("params.bin size does not match manifest");
        if (u.size() != n * u_names.size() * n_points) throw DataError("u.bin size does not match manifest");
        if (s.size() != n * s_names.size() * n_points) throw DataError("s.bin size does not match manifest");

        Dataset ds(prior, grid, u_names, s_names);
        const auto du = static_cast<Eigen::Index>(u_names.size());
        const auto dss = static_cast<Eigen::Index>(s_names.size());
        const auto np = static_cast<Eigen::Index>(n_points);
        for (std::size_t i = 0; i < n; ++i) {
            Record r;
            r.xi = ParameterVector(std::vector<double>(params.begin() + static_cast<std::ptrdiff_t>(i * m),
                                                       params.begin() + static_cast<std::ptrdiff_t>((i + 1) * m)));
            Matrix uv(du, np), sv(dss, np);
            const double* up = u.data() + i * u_names.size() * n_points;
            const double* sp = s.data() + i * s_names.size() * n_points;
            for (Eigen::Index c = 0; c < du; ++c)
                for (Eigen::Index t = 0; t < np; ++t) uv(c, t) = up[c * np + t];
            for (Eigen::Index c = 0; c < dss; ++c)
                for (Eigen::Index t = 0; t < np; ++t) sv(c, t) = sp[c * np + t];
            r.u = FunctionSample(grid, std::move(uv), u_names);
            r.s = FunctionSample(grid, std::move(sv), s_names);
            r.split = i < counts.train ? Split::train : (i < counts.train + counts.val ? Split::val : Split::test);
            ds.add(std::move(r));
        }

        LoadedDataset out{std::move(ds), normalization_from_string(manifest.value("normalization", "min-max")),
                          manifest};
        return out;
    } catch (const json::exception& e) {
        throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("inconsistent dataset: ") + e.what());
    }
}

}  // namespace fuse
