// SPDX-License-Identifier: Apache-2.0

#include "unfold/sounding.hpp"

#include <cmath>
#include <stdexcept>

#include "unfold/rng.hpp"

namespace unfold {

MeasurementMatrix draw_measurement_matrix(Eigen::Index antennas, int rf_chains, int frames, std::uint64_t seed)
{
    if (antennas < 1 || rf_chains < 1 || frames < 1) {
        throw std::invalid_argument("draw_measurement_matrix: A, L and T must be >= 1");
    }
    Rng rng(derive_seed(seed, {0x4D45'4153ULL}));
    std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
    MeasurementMatrix out;
    out.frames = frames;
    out.rf_chains = rf_chains;
    out.seed = seed;
    out.m.resize(static_cast<Eigen::Index>(frames) * rf_chains, antennas);
    for (Eigen::Index j = 0; j < out.m.cols(); ++j) {
        for (Eigen::Index i = 0; i < out.m.rows(); ++i) {
            const double phi = phase(rng);
            out.m(i, j) = cplx(std::cos(phi), std::sin(phi));
        }
    }
    return out;
}

double calibrate_zeta2(const CMat& channels, double target_snr_db)
{
    if (channels.cols() == 0 || channels.rows() == 0) {
        throw std::invalid_argument("calibrate_zeta2: empty channel set");
    }
    const double mean_energy = channels.colwise().squaredNorm().mean();
    return mean_energy / (static_cast<double>(channels.rows()) * std::pow(10.0, target_snr_db / 10.0));
}

double calibrate_zeta2(const ChannelDataset& ds, double target_snr_db)
{
    return calibrate_zeta2(ds.channels, target_snr_db);
}

CMat noise_covariance(const MeasurementMatrix& meas, double zeta2)
{
    const Eigen::Index l = meas.rf_chains;
    CMat c = CMat::Zero(meas.measurements(), meas.measurements());
    for (int t = 0; t < meas.frames; ++t) {
        const CMat f = meas.frame(t);
        c.block(t * l, t * l, l, l) = zeta2 * (f * f.adjoint());
    }
    return c;
}

double expected_noise_energy(const MeasurementMatrix& meas, double zeta2) { return zeta2 * meas.m.squaredNorm(); }

CMat uplink_noise(Eigen::Index columns, const MeasurementMatrix& meas, double zeta2, std::uint64_t seed)
{
    const Eigen::Index l = meas.rf_chains;
    const Eigen::Index a = meas.antennas();
    CMat noise(meas.measurements(), columns);
    for (Eigen::Index u = 0; u < columns; ++u) {
        for (int t = 0; t < meas.frames; ++t) {
            Rng rng(derive_seed(seed, {0x4E4F'4953ULL, static_cast<std::uint64_t>(u), static_cast<std::uint64_t>(t)}));
            CVec n(a);
            for (Eigen::Index i = 0; i < a; ++i) {
                n(i) = complex_normal(rng, zeta2);
            }
            noise.block(t * l, u, l, 1) = meas.frame(t) * n;
        }
    }
    return noise;
}

Observation observe_uplink(const CMat& channels, const MeasurementMatrix& meas, double zeta2, std::uint64_t seed)
{
    if (channels.rows() != meas.antennas()) {
        throw DimensionError("observe_uplink: channel rows differ from measurement columns");
    }
    if (!(zeta2 >= 0.0)) {
        throw std::invalid_argument("observe_uplink: negative noise variance");
    }
    Observation obs;
    obs.meas = meas;
    obs.zeta2 = zeta2;
    obs.y = meas.m * channels;
    if (zeta2 > 0.0) {
        obs.y += uplink_noise(channels.cols(), meas, zeta2, seed);
    }
    return obs;
}

Observation select_columns(const Observation& obs, const std::vector<Eigen::Index>& cols)
{
    Observation out;
    out.meas = obs.meas;
    out.zeta2 = obs.zeta2;
    out.y.resize(obs.y.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
        out.y.col(static_cast<Eigen::Index>(k)) = obs.y.col(cols[k]);
    }
    return out;
}

}  // namespace unfold
