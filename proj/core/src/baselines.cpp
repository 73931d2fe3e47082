// SPDX-License-Identifier: Apache-2.0

#include "unfold/baselines.hpp"

#include <cmath>
#include <stdexcept>

namespace unfold {

CMat mp_baseline(const Observation& obs, const CMat& dictionary, const StopRule& stop)
{
    return estimate_with_dictionary(obs, dictionary, stop).h_hat;
}

LmmseModel make_lmmse_model(const CMat& train_channels, const MeasurementMatrix& meas, double zeta2,
                            NoiseModel noise)
{
    if (train_channels.rows() != meas.antennas()) {
        throw DimensionError("make_lmmse_model: channel rows differ from measurement columns");
    }
    if (train_channels.cols() == 0) {
        throw std::invalid_argument("make_lmmse_model: empty training set");
    }
    LmmseModel model;
    model.r_diag = train_channels.cwiseAbs2().rowwise().mean();
    if (noise == NoiseModel::Structured) {
        model.noise_cov = noise_covariance(meas, zeta2);
    } else {
        const auto n = meas.measurements();
        model.noise_cov = zeta2 * static_cast<double>(meas.antennas()) * CMat::Identity(n, n);
    }
    return model;
}

CMat lmmse_estimate(const Observation& obs, const LmmseModel& model)
{
    const CMat& m = obs.meas.m;
    if (model.r_diag.size() != m.cols() || model.noise_cov.rows() != m.rows() || obs.y.rows() != m.rows()) {
        throw DimensionError("lmmse_estimate: shape mismatch");
    }
    if ((model.r_diag.array() < 0.0).any()) {
        throw std::invalid_argument("lmmse_estimate: negative channel power");
    }
    const CMat rmh = model.r_diag.cast<cplx>().asDiagonal() * m.adjoint();  // A x TL
    const CMat k = m * rmh + model.noise_cov;
    return rmh * unfold::solve_hpd(k, obs.y);
}

WaterFilling water_filling(const CMat& h, double p_total, double sigma2)
{
    if (!(p_total > 0.0) || !(sigma2 > 0.0)) {
        throw std::invalid_argument("water_filling: p_total and sigma2 must be positive");
    }
    if (h.norm() == 0.0) {
        throw std::invalid_argument("water_filling: zero channel");
    }
    const double c = 1.0 / (static_cast<double>(h.cols()) * sigma2);
    const Eigen::JacobiSVD<CMat> sv(h.transpose());
    const RVec s = sv.singularValues();

    WaterFilling wf;
    wf.gains = c * s.cwiseAbs2();
    wf.powers = RVec::Zero(s.size());

    // largest active set whose water level stays above every active 1/g
    Eigen::Index active = 0;
    double level = 0.0;
    double inv_sum = 0.0;
    for (Eigen::Index m = 0; m < s.size(); ++m) {
        if (!(wf.gains(m) > 0.0)) {
            break;
        }
        inv_sum += 1.0 / wf.gains(m);
        const double nu = (p_total + inv_sum) / static_cast<double>(m + 1);
        if (nu > 1.0 / wf.gains(m)) {
            active = m + 1;
            level = nu;
        } else {
            break;
        }
    }
    wf.level = level;
    double rate = 0.0;
    for (Eigen::Index m = 0; m < active; ++m) {
        wf.powers(m) = level - 1.0 / wf.gains(m);
        rate += std::log1p(wf.gains(m) * wf.powers(m));
    }
    wf.rate_bits = rate / std::log(2.0);
    return wf;
}

double fully_digital_bound(const CMat& h, double p_total, double sigma2)
{
    return water_filling(h, p_total, sigma2).rate_bits;
}

PgaTrace fixed_step_pga(const CMat& h_input, int iterations, double step, int rf_chains, double p_total,
                        double sigma2, std::uint64_t seed, const CMat* h_eval)
{
    if (!(step >= 0.0)) {
        throw std::invalid_argument("fixed_step_pga: step must be >= 0");
    }
    const PgaParams params{RMat::Constant(iterations, 2, step)};
    return pga_forward(h_input, params, rf_chains, p_total, sigma2, seed, h_eval);
}

}  // namespace unfold
