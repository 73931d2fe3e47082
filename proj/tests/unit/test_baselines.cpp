// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "unfold/baselines.hpp"

using namespace unfold;
using namespace testing_support;

namespace {

double rate_bits(const CMat& h, const CMat& w, double s2) { return sum_rate_nats(h, w, s2) / std::log(2.0); }

}  // namespace

TEST(Baselines, WaterFillingMatchesAGridSearch)
{
    const CMat h = random_cmat(4, 2, 1);
    const double p = 2.0, s2 = 0.4;
    const WaterFilling wf = water_filling(h, p, s2);
    ASSERT_EQ(wf.gains.size(), 2);
    // eigenmode gains from the 2x2 Gram matrix of H^T, closed form
    const CMat gram = naive_matmul(h.transpose(), h.conjugate());
    const double tr = gram.trace().real(), det = naive_det(gram).real();
    const double disc = std::sqrt(tr * tr / 4 - det);
    const double c = 1.0 / (2.0 * s2);
    const double g1 = c * (tr / 2 + disc), g2 = c * (tr / 2 - disc);
    EXPECT_NEAR(wf.gains(0), g1, 1e-10);
    EXPECT_NEAR(wf.gains(1), g2, 1e-10);
    double best = 0.0;
    for (int i = 0; i <= 200000; ++i) {
        const double p1 = p * i / 200000.0;
        best = std::max(best, std::log2((1 + g1 * p1) * (1 + g2 * (p - p1))));
    }
    EXPECT_NEAR(wf.rate_bits, best, 1e-8);
    EXPECT_NEAR(fully_digital_bound(h, p, s2), best, 1e-8);
}

TEST(Baselines, WaterFillingSatisfiesKkt)
{
    const CMat h = random_cmat(8, 4, 2);
    for (double s2 : {0.01, 1.0, 20.0}) {
        const WaterFilling wf = water_filling(h, 4.0, s2);
        EXPECT_NEAR(wf.powers.sum(), 4.0, 1e-12);
        for (Eigen::Index i = 0; i < wf.gains.size(); ++i) {
            if (wf.powers(i) > 0) {
                EXPECT_NEAR(wf.powers(i) + 1.0 / wf.gains(i), wf.level, 1e-10);
            } else {
                EXPECT_GE(1.0 / wf.gains(i), wf.level - 1e-12);
            }
        }
    }
}

TEST(Baselines, DigitalBoundDominatesFeasiblePrecoders)
{
    const CMat h = random_cmat(8, 3, 3);
    const double bound = fully_digital_bound(h, 3.0, 0.2);
    for (std::uint64_t s = 0; s < 50; ++s) {
        CMat w = random_cmat(8, 3, 100 + s);
        w *= std::sqrt(3.0) / w.norm();
        EXPECT_LE(rate_bits(h, w, 0.2), bound + 1e-10);
    }
    EXPECT_LE(fixed_step_pga(h, 30, 0.1, 4, 3.0, 0.2, 1).rates.back(), bound + 1e-10);
}

TEST(Baselines, FixedStepPgaIsConstantStepUnrolling)
{
    const CMat h = random_cmat(8, 2, 4);
    const PgaTrace a = fixed_step_pga(h, 5, 0.03, 4, 2.0, 0.5, 7);
    const PgaTrace b = pga_forward(h, constant_step_params(5, 0.03), 4, 2.0, 0.5, 7);
    EXPECT_EQ(a.rates, b.rates);
}

TEST(Baselines, ScalarLmmseShrinks)
{
    MeasurementMatrix m;
    m.m = CMat::Constant(1, 1, cplx(0.6, 0.8));
    Observation obs{CMat::Constant(1, 1, cplx(2.0, -1.0)), m, 0.5};
    LmmseModel model{RVec::Constant(1, 3.0), CMat::Constant(1, 1, cplx(0.5, 0.0))};
    const CMat h = lmmse_estimate(obs, model);
    // h = r conj(m) y / (r |m|^2 + zeta^2)
    const cplx want = 3.0 * std::conj(m.m(0)) * obs.y(0) / (3.0 + 0.5);
    EXPECT_LT(std::abs(h(0) - want), 1e-14);
}

TEST(Baselines, LmmseModelFromTrainingChannels)
{
    const CMat h = random_cmat(4, 500, 5);
    const MeasurementMatrix m = draw_measurement_matrix(4, 2, 2, 1);
    const LmmseModel s = make_lmmse_model(h, m, 0.3);
    for (Eigen::Index i = 0; i < 4; ++i) {
        double p = 0.0;
        for (Eigen::Index c = 0; c < 500; ++c) {
            p += std::norm(h(i, c));
        }
        EXPECT_NEAR(s.r_diag(i), p / 500.0, 1e-12);
    }
    EXPECT_LT(max_abs_diff(s.noise_cov, noise_covariance(m, 0.3)), 1e-14);
    const LmmseModel w = make_lmmse_model(h, m, 0.3, NoiseModel::White);
    EXPECT_LT(max_abs_diff(w.noise_cov, CMat(0.3 * 4.0 * CMat::Identity(4, 4))), 1e-14);
}

TEST(Baselines, LmmseIsExactWithoutNoise)
{
    const CMat h = random_cmat(6, 3, 6);
    const MeasurementMatrix m = draw_measurement_matrix(6, 3, 2, 2);
    const Observation obs = observe_uplink(h, m, 0.0, 1);
    LmmseModel model = make_lmmse_model(h, m, 1e-14);
    EXPECT_LT(max_abs_diff(lmmse_estimate(obs, model), h), 1e-6);
}

TEST(Baselines, LmmseErrorIsOrthogonalToTheObservation)
{
    // h ~ CN(0, diag r): the error must be uncorrelated with y
    const Eigen::Index a = 6, n = 40000;
    RVec r(a);
    r << 3.0, 0.2, 1.0, 0.5, 2.0, 0.1;
    CMat h = random_cmat(a, n, 7);
    for (Eigen::Index i = 0; i < a; ++i) {
        h.row(i) *= std::sqrt(r(i));
    }
    const MeasurementMatrix m = draw_measurement_matrix(a, 2, 1, 3);
    const Observation obs = observe_uplink(h, m, 0.2, 9);
    const LmmseModel model{r, noise_covariance(m, 0.2)};
    const CMat e = lmmse_estimate(obs, model) - h;
    const CMat cross = e * obs.y.adjoint() / static_cast<double>(n);
    const CMat yy = obs.y * obs.y.adjoint() / static_cast<double>(n);
    EXPECT_LT(cross.norm() / std::sqrt(yy.norm() * r.sum()), 0.03);
}

TEST(Baselines, MpBaselineUsesTheSharedPursuit)
{
    const AntennaArray a = make_nominal_ula(16, wavelength_for(kDefaultCarrierHz));
    const ChannelDataset ds = generate_channels(a, a, 5, 3, GainProfile{}, 2);
    const MeasurementMatrix m = draw_measurement_matrix(16, 4, 2, 2);
    const Observation obs = observe_uplink(ds.channels, m, 0.01, 1);
    const CMat d = build_dictionary(a, 64).atoms;
    EXPECT_EQ(max_abs_diff(mp_baseline(obs, d, StopRule{}), estimate_with_dictionary(obs, d, StopRule{}).h_hat), 0.0);
}
