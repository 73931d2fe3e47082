// SPDX-License-Identifier: Apache-2.0

#include "unfold/array_channel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "unfold/io.hpp"
#include "unfold/rng.hpp"

namespace unfold {

AntennaArray::AntennaArray(Positions positions, double wavelength)
    : positions_(std::move(positions)), wavelength_(wavelength)
{
    if (positions_.rows() < 1) {
        throw std::invalid_argument("AntennaArray: needs at least one antenna");
    }
    if (!(wavelength_ > 0.0) || !std::isfinite(wavelength_)) {
        throw std::invalid_argument("AntennaArray: wavelength must be positive");
    }
    if (!positions_.allFinite()) {
        throw std::invalid_argument("AntennaArray: non-finite position");
    }
    // Arrays already centred up to rounding are left untouched, so re-wrapping
    // saved positions is bit-exact.
    const Eigen::RowVector3d centroid = positions_.colwise().mean();
    const double scale = std::max(1.0, positions_.cwiseAbs().maxCoeff());
    if (centroid.cwiseAbs().maxCoeff() > 1e-13 * scale) {
        positions_.rowwise() -= centroid;
    }
}

Vec3 direction_from_sine(double s)
{
    if (s < -1.0 || s > 1.0) {
        throw std::invalid_argument("direction_from_sine: |s| > 1");
    }
    return {s, std::sqrt(std::max(0.0, 1.0 - s * s)), 0.0};
}

CVec steering_vector(const AntennaArray& array, const Vec3& direction)
{
    if (std::abs(direction.norm() - 1.0) > 1e-12) {
        throw std::invalid_argument("steering_vector: direction is not a unit vector");
    }
    const Eigen::Index a = array.size();
    const double amp = 1.0 / std::sqrt(static_cast<double>(a));
    const double k = wavenumber(array.wavelength());
    const Positions& p = array.positions();
    CVec e(a);
    for (Eigen::Index i = 0; i < a; ++i) {
        e(i) = steering_entry(amp, steering_phase(k, p(i, 0), p(i, 1), p(i, 2), direction));
    }
    return e;
}

AntennaArray make_nominal_ula(Eigen::Index antennas, double wavelength)
{
    if (antennas < 2) {
        throw std::invalid_argument("make_nominal_ula: need at least two antennas");
    }
    Positions p = Positions::Zero(antennas, 3);
    const double half = 0.5 * static_cast<double>(antennas - 1);
    for (Eigen::Index i = 0; i < antennas; ++i) {
        p(i, 0) = (static_cast<double>(i) - half) * (0.5 * wavelength);
    }
    return AntennaArray(std::move(p), wavelength);
}

AntennaArray perturb_array(const AntennaArray& nominal, double std_in_wavelengths, std::uint64_t seed)
{
    if (std_in_wavelengths < 0.0) {
        throw std::invalid_argument("perturb_array: negative standard deviation");
    }
    if (std_in_wavelengths == 0.0) {
        return nominal;
    }
    Rng rng(derive_seed(seed, {0x5045'5254ULL}));
    std::normal_distribution<double> eta(0.0, std_in_wavelengths);
    Positions p = nominal.positions();
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        p(i, 0) += nominal.wavelength() * eta(rng);
    }
    return AntennaArray(std::move(p), nominal.wavelength());
}

RVec sine_grid(Eigen::Index n)
{
    RVec s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        s(i) = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n);
    }
    return s;
}

SteeringDictionary build_dictionary(const AntennaArray& array, Eigen::Index n)
{
    if (n < array.size()) {
        throw std::invalid_argument("build_dictionary: need N >= A");
    }
    const RVec s = sine_grid(n);
    SteeringDictionary d;
    d.atoms.resize(array.size(), n);
    d.directions.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
        d.directions.push_back(direction_from_sine(s(j)));
        d.atoms.col(j) = steering_vector(array, d.directions.back());
    }
    return d;
}

CVec synthesize_channel(const AntennaArray& array, const PathSet& paths)
{
    CVec h = CVec::Zero(array.size());
    for (Eigen::Index p = 0; p < paths.sines.size(); ++p) {
        h += paths.gains(p) * steering_vector(array, direction_from_sine(paths.sines(p)));
    }
    return h;
}

ChannelDataset generate_channels(const AntennaArray& real_array, const AntennaArray& nominal_array,
                                 Eigen::Index count, int paths_max, const GainProfile& profile,
                                 std::uint64_t seed, const std::string& split)
{
    if (paths_max < 1) {
        throw std::invalid_argument("generate_channels: paths_max must be >= 1");
    }
    if (real_array.size() != nominal_array.size() || real_array.wavelength() != nominal_array.wavelength()) {
        throw std::invalid_argument("generate_channels: arrays disagree in size or wavelength");
    }
    ChannelDataset ds{CMat(real_array.size(), count), {}, {}, nominal_array, real_array, seed, paths_max, split};
    ds.path_counts.reserve(static_cast<std::size_t>(count));
    ds.paths.reserve(static_cast<std::size_t>(count));
    for (Eigen::Index c = 0; c < count; ++c) {
        Rng rng(derive_seed(seed, {0x4348'414EULL, static_cast<std::uint64_t>(c)}));
        std::uniform_int_distribution<int> npaths(1, paths_max);
        const int p = npaths(rng);
        PathSet ps{RVec(p), CVec(p)};
        for (int k = 0; k < p; ++k) {
            ps.sines(k) = uniform_real(rng, -1.0, 1.0);
            ps.gains(k) = complex_normal(rng, std::exp(-profile.decay * static_cast<double>(k + 1)));
        }
        ds.channels.col(c) = synthesize_channel(real_array, ps);
        ds.path_counts.push_back(p);
        ds.paths.push_back(std::move(ps));
    }
    return ds;
}

namespace {

nlohmann::json positions_json(const AntennaArray& a)
{
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        arr.push_back({a.positions()(i, 0), a.positions()(i, 1), a.positions()(i, 2)});
    }
    return arr;
}

AntennaArray positions_from_json(const nlohmann::json& arr, double wavelength)
{
    Positions p(static_cast<Eigen::Index>(arr.size()), 3);
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_array() || arr[i].size() != 3) {
            throw DatasetError("manifest: malformed position entry");
        }
        for (int c = 0; c < 3; ++c) {
            p(static_cast<Eigen::Index>(i), c) = arr[i][static_cast<std::size_t>(c)].get<double>();
        }
    }
    return AntennaArray(std::move(p), wavelength);
}

}  // namespace

void save_dataset(const ChannelDataset& ds, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    const auto payload = encode_payload(ds.channels);
    write_bytes(dir / "channels.bin", payload);

    nlohmann::ordered_json m;
    m["A"] = ds.antennas();
    m["count"] = ds.count();
    m["wavelength_m"] = ds.real_array.wavelength();
    m["seed"] = ds.seed;
    m["paths_max"] = ds.paths_max;
    m["split"] = ds.split;
    m["nominal_positions"] = positions_json(ds.nominal_array);
    m["real_positions"] = positions_json(ds.real_array);
    m["path_counts"] = ds.path_counts;
    m["payload_sha256"] = sha256_hex(payload.data(), payload.size());
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

ChannelDataset load_dataset(const std::filesystem::path& dir)
{
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(read_text(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(std::string("manifest: ") + e.what());
    }
    try {
        const auto a = m.at("A").get<Eigen::Index>();
        const auto count = m.at("count").get<Eigen::Index>();
        const double wl = m.at("wavelength_m").get<double>();
        const auto& nominal = m.at("nominal_positions");
        const auto& real = m.at("real_positions");
        if (static_cast<Eigen::Index>(nominal.size()) != a || static_cast<Eigen::Index>(real.size()) != a) {
            throw DatasetError("manifest: position lists disagree with A");
        }
        const auto payload = read_bytes(dir / "channels.bin");
        CMat channels;
        try {
            channels = decode_payload(payload, a, count);
        } catch (const IoError& e) {
            throw DatasetError(std::string("channels.bin: ") + e.what());
        }
        if (sha256_hex(payload.data(), payload.size()) != m.at("payload_sha256").get<std::string>()) {
            throw DatasetError("channels.bin: checksum mismatch");
        }
        std::vector<int> path_counts;
        if (m.contains("path_counts")) {
            path_counts = m.at("path_counts").get<std::vector<int>>();
        }
        return ChannelDataset{std::move(channels),
                              std::move(path_counts),
                              {},
                              positions_from_json(nominal, wl),
                              positions_from_json(real, wl),
                              m.at("seed").get<std::uint64_t>(),
                              m.at("paths_max").get<int>(),
                              m.at("split").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(std::string("manifest: ") + e.what());
    }
}

double mean_atom_correlation(const SteeringDictionary& a, const SteeringDictionary& b)
{
    if (a.atoms.rows() != b.atoms.rows() || a.atoms.cols() != b.atoms.cols()) {
        throw DimensionError("mean_atom_correlation: dictionaries differ in shape");
    }
    double acc = 0.0;
    for (Eigen::Index n = 0; n < a.atoms.cols(); ++n) {
        acc += std::abs(a.atoms.col(n).dot(b.atoms.col(n)));
    }
    return acc / static_cast<double>(a.atoms.cols());
}

}  // namespace unfold
