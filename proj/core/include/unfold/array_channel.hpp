// SPDX-License-Identifier: Apache-2.0
//
// Antenna geometry, steering vectors and dictionaries, the antenna-position
// impairment model, and a synthetic geometric multipath channel generator.
//
// Convention: linear arrays lie along the x axis; directions are in the x-y
// plane, u = (s, sqrt(1 - s^2), 0), where s is the spatial frequency (sine of
// the angle from broadside).

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "unfold/numerics.hpp"

namespace unfold {

using Vec3 = Eigen::Vector3d;
using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3>;

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kDefaultCarrierHz = 28e9;

inline double wavelength_for(double carrier_hz) { return kSpeedOfLight / carrier_hz; }

class AntennaArray {
public:
    /// Positions are re-centred so that the centroid is the origin.
    AntennaArray(Positions positions, double wavelength);

    Eigen::Index size() const { return positions_.rows(); }
    const Positions& positions() const { return positions_; }
    double wavelength() const { return wavelength_; }

private:
    Positions positions_;
    double wavelength_;
};

/// -(2 pi / lambda) a.u, evaluated in a fixed operation order. Every code path
/// that builds steering entries goes through this and steering_entry() so that
/// dictionaries built along different routes agree bit for bit.
inline double steering_phase(double wavenumber, double ax, double ay, double az, const Vec3& u)
{
    return -wavenumber * (ax * u.x() + ay * u.y() + az * u.z());
}

inline cplx steering_entry(double amplitude, double phase)
{
    return {amplitude * std::cos(phase), amplitude * std::sin(phase)};
}

inline double wavenumber(double wavelength) { return 2.0 * kPi / wavelength; }

/// Direction for spatial frequency s in [-1, 1].
Vec3 direction_from_sine(double s);

CVec steering_vector(const AntennaArray& array, const Vec3& direction);

/// lambda/2-spaced, centred ULA along x.
AntennaArray make_nominal_ula(Eigen::Index antennas, double wavelength);

/// Adds lambda * eta_i to each x coordinate, eta_i ~ N(0, std^2), then re-centres.
AntennaArray perturb_array(const AntennaArray& nominal, double std_in_wavelengths, std::uint64_t seed);

enum class DictParam { Fixed, FreeEntries, Positions };

struct SteeringDictionary {
    CMat atoms;                    // A x N
    std::vector<Vec3> directions;  // N unit vectors
    DictParam parameterization = DictParam::Fixed;

    Eigen::Index antennas() const { return atoms.rows(); }
    Eigen::Index size() const { return atoms.cols(); }
};

/// N spatial frequencies uniform on [-1, 1): s_n = -1 + 2n/N.
RVec sine_grid(Eigen::Index n);

SteeringDictionary build_dictionary(const AntennaArray& array, Eigen::Index n);

struct GainProfile {
    double decay = 0.5;  // E|beta_p|^2 = exp(-decay * p), p = 1..P
};

struct PathSet {
    RVec sines;  // spatial frequency per path
    CVec gains;
};

struct ChannelDataset {
    CMat channels;  // A x count, one channel per column
    std::vector<int> path_counts;
    std::vector<PathSet> paths;  // generator metadata; not persisted
    AntennaArray nominal_array;
    AntennaArray real_array;
    std::uint64_t seed = 0;
    int paths_max = 0;
    std::string split = "train";

    Eigen::Index antennas() const { return channels.rows(); }
    Eigen::Index count() const { return channels.cols(); }
};

CVec synthesize_channel(const AntennaArray& array, const PathSet& paths);

/// Each channel is sum_p beta_p e(u_p) on `real_array`, P ~ U{1..paths_max},
/// s_p ~ U[-1, 1), beta_p ~ CN(0, exp(-decay * p)).
ChannelDataset generate_channels(const AntennaArray& real_array, const AntennaArray& nominal_array,
                                 Eigen::Index count, int paths_max, const GainProfile& profile,
                                 std::uint64_t seed, const std::string& split = "train");

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes manifest.json + channels.bin into `dir` (created if missing).
void save_dataset(const ChannelDataset& ds, const std::filesystem::path& dir);
ChannelDataset load_dataset(const std::filesystem::path& dir);

/// Mean over atoms of |<d_nominal_n, d_real_n>|.
double mean_atom_correlation(const SteeringDictionary& a, const SteeringDictionary& b);

}  // namespace unfold
