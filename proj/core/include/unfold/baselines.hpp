// SPDX-License-Identifier: Apache-2.0
//
// Reference estimators and precoding bounds.

#pragma once

#include <cstdint>

#include "unfold/mpnet.hpp"
#include "unfold/numerics.hpp"
#include "unfold/sounding.hpp"
#include "unfold/upga.hpp"

namespace unfold {

/// Matching pursuit with a fixed dictionary; same code path as mpNet.
CMat mp_baseline(const Observation& obs, const CMat& dictionary, const StopRule& stop);

enum class NoiseModel { Structured, White };

struct LmmseModel {
    RVec r_diag;    // per-entry channel power
    CMat noise_cov; // TL x TL
};

/// r_diag from the empirical per-entry power of `train_channels`; the noise
/// covariance is zeta^2 blockdiag(W_a(t)^H W_a(t)) (structured) or zeta^2 A I (white).
LmmseModel make_lmmse_model(const CMat& train_channels, const MeasurementMatrix& meas, double zeta2,
                            NoiseModel noise = NoiseModel::Structured);

/// h_hat = R M^H (M R M^H + C)^{-1} y, column by column.
CMat lmmse_estimate(const Observation& obs, const LmmseModel& model);

struct WaterFilling {
    RVec gains;   // c * sigma_i^2 per eigenmode, descending
    RVec powers;  // allocated power per mode
    double level = 0.0;
    double rate_bits = 0.0;
};

/// Water-filling on the modes of H^T: p_i = max(0, nu - 1/g_i), sum p_i = P.
WaterFilling water_filling(const CMat& h, double p_total, double sigma2);

/// Maximum of the rate over unconstrained W with ||W||_F^2 <= P, in bits.
double fully_digital_bound(const CMat& h, double p_total, double sigma2);

/// pga_forward with mu_a = mu_d = step for every iteration.
PgaTrace fixed_step_pga(const CMat& h_input, int iterations, double step, int rf_chains, double p_total,
                        double sigma2, std::uint64_t seed, const CMat* h_eval = nullptr);

}  // namespace unfold
