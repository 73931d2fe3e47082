// SPDX-License-Identifier: Apache-2.0
//
// Uplink sounding: random-phase analog combiners, noise calibration to a
// target average uplink SNR, and observations with combiner-shaped noise.

#pragma once

#include <cstdint>

#include "unfold/array_channel.hpp"
#include "unfold/numerics.hpp"

namespace unfold {

/// Stacked combiners: rows [tL, (t+1)L) hold W_a(t)^H. Entries are unit modulus.
struct MeasurementMatrix {
    CMat m;  // TL x A
    int frames = 1;
    int rf_chains = 1;
    std::uint64_t seed = 0;

    Eigen::Index measurements() const { return m.rows(); }
    Eigen::Index antennas() const { return m.cols(); }
    /// W_a(t)^H, L x A.
    CMat frame(int t) const { return m.middleRows(static_cast<Eigen::Index>(t) * rf_chains, rf_chains); }
};

/// m_ij = exp(j phi_ij), phi_ij ~ U[0, 2 pi).
MeasurementMatrix draw_measurement_matrix(Eigen::Index antennas, int rf_chains, int frames, std::uint64_t seed);

/// zeta^2 = mean ||h||^2 / (A * 10^(snr_db / 10)).
double calibrate_zeta2(const CMat& channels, double target_snr_db);
double calibrate_zeta2(const ChannelDataset& ds, double target_snr_db);

/// Block-diagonal noise covariance zeta^2 * blockdiag(W_a(t)^H W_a(t)), TL x TL.
CMat noise_covariance(const MeasurementMatrix& meas, double zeta2);

/// E ||n_tilde||^2 per column = zeta^2 * ||M||_F^2.
double expected_noise_energy(const MeasurementMatrix& meas, double zeta2);

struct Observation {
    CMat y;  // TL x U
    MeasurementMatrix meas;
    double zeta2 = 0.0;
};

/// Y = M H + N_tilde; the noise block for frame t, column u is W_a(t)^H n with
/// n ~ CN(0, zeta^2 I_A), drawn from a stream keyed by (seed, u, t).
Observation observe_uplink(const CMat& channels, const MeasurementMatrix& meas, double zeta2, std::uint64_t seed);

/// Noise alone (as added by observe_uplink for the same arguments).
CMat uplink_noise(Eigen::Index columns, const MeasurementMatrix& meas, double zeta2, std::uint64_t seed);

/// Column subset of an observation (same M and zeta^2).
Observation select_columns(const Observation& obs, const std::vector<Eigen::Index>& cols);

}  // namespace unfold
