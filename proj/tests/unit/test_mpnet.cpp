// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "unfold/mpnet.hpp"

using namespace unfold;
using namespace testing_support;

namespace {

const double kLambda = wavelength_for(kDefaultCarrierHz);

StopRule depth(int k)
{
    StopRule s;
    s.mode = StopMode::FixedDepth;
    s.max_atoms = k;
    return s;
}

struct NaiveMp {
    std::vector<Eigen::Index> support;
    CVec h_hat;
};

// Plain loops: effective atoms, normalized correlation scan, projection, deflation.
NaiveMp naive_mp(const CMat& d, const CMat& m, const CVec& y, int steps)
{
    const CMat g = naive_matmul(m, d);
    CVec r = y;
    NaiveMp out{{}, CVec::Zero(d.rows())};
    for (int k = 0; k < steps; ++k) {
        Eigen::Index best = 0;
        double best_score = -1.0;
        cplx best_c;
        for (Eigen::Index n = 0; n < g.cols(); ++n) {
            cplx ip = 0.0;
            double nn = 0.0;
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                ip += std::conj(g(i, n)) * r(i);
                nn += std::norm(g(i, n));
            }
            if (std::abs(ip) / std::sqrt(nn) > best_score) {
                best_score = std::abs(ip) / std::sqrt(nn);
                best = n;
                best_c = ip / nn;
            }
        }
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            r(i) -= best_c * g(i, best);
        }
        for (Eigen::Index i = 0; i < d.rows(); ++i) {
            out.h_hat(i) += best_c * d(i, best);
        }
        out.support.push_back(best);
    }
    return out;
}

struct Fixture {
    AntennaArray nominal = make_nominal_ula(16, kLambda);
    AntennaArray real = perturb_array(nominal, 0.1, 4);
    ChannelDataset ds = generate_channels(real, nominal, 12, 3, GainProfile{}, 9);
    MeasurementMatrix meas = draw_measurement_matrix(16, 4, 2, 2);
    double zeta2 = calibrate_zeta2(ds.channels, 15.0);
    Observation obs = observe_uplink(ds.channels, meas, zeta2, 3);
};

}  // namespace

TEST(MpNet, TrainableCounts)
{
    const AntennaArray a = make_nominal_ula(64, kLambda);
    EXPECT_EQ(make_constrained_params(a, 1200).trainable_count(), 64u);
    EXPECT_EQ(make_unconstrained_params(a, 1200).trainable_count(), 2u * 64u * 1200u);
    EXPECT_EQ(mpnet_param_set(make_constrained_params(a, 100)).real_dof(), 64u);
    EXPECT_EQ(mpnet_param_set(make_unconstrained_params(a, 100)).real_dof(), 2u * 64u * 100u);
}

TEST(MpNet, ConstrainedAtomsKeepSteeringModulus)
{
    MpNetParams p = make_constrained_params(make_nominal_ula(16, kLambda), 64);
    p.positions_x(3) += 0.37 * kLambda;
    const SteeringDictionary d = materialize_dictionary(p);
    EXPECT_LT((d.atoms.cwiseAbs().array() - 0.25).abs().maxCoeff(), 1e-15);
}

TEST(MpNet, ParametersInitialisedAtAnArrayReproduceItsDictionary)
{
    const AntennaArray a = perturb_array(make_nominal_ula(16, kLambda), 0.1, 8);
    const CMat ref = build_dictionary(a, 64).atoms;
    EXPECT_LT(max_abs_diff(materialize_dictionary(make_constrained_params(a, 64)).atoms, ref), 1e-14);
    EXPECT_EQ(max_abs_diff(materialize_dictionary(make_unconstrained_params(a, 64)).atoms, ref), 0.0);
}

TEST(MpNet, RecoversAOneSparseChannelExactly)
{
    const AntennaArray a = make_nominal_ula(16, kLambda);
    const MpNetParams p = make_constrained_params(a, 64);
    const CMat d = materialize_dictionary(p).atoms;
    const MeasurementMatrix m = draw_measurement_matrix(16, 4, 1, 6);
    const cplx beta(0.8, -1.3);
    const CVec h = beta * d.col(37);
    const EstimateResult r = mp_forward(m.m * h, m, p, depth(1), 0.0);
    ASSERT_EQ(r.support.size(), 1u);
    EXPECT_EQ(r.support[0], 37);
    EXPECT_LT(std::abs(r.coefficients[0] - beta), 1e-12);
    EXPECT_LT((r.h_hat - h).norm(), 1e-12);
}

TEST(MpNet, MatchesANaiveImplementation)
{
    Fixture f;
    const MpNetParams p = make_unconstrained_params(f.nominal, 48);
    const CMat d = materialize_dictionary(p).atoms;
    for (Eigen::Index u = 0; u < 6; ++u) {
        const CVec y = f.obs.y.col(u);
        const EstimateResult r = mp_forward(y, f.meas, p, depth(5), f.zeta2);
        const NaiveMp o = naive_mp(d, f.meas.m, y, 5);
        EXPECT_EQ(r.support, o.support);
        EXPECT_LT((r.h_hat - o.h_hat).norm(), 1e-12 * (1.0 + o.h_hat.norm()));
    }
}

TEST(MpNet, ResidualNeverIncreases)
{
    Fixture f;
    const MpNetParams p = make_constrained_params(f.nominal, 64);
    for (Eigen::Index u = 0; u < f.obs.y.cols(); ++u) {
        const EstimateResult r = mp_forward(f.obs.y.col(u), f.meas, p, depth(8), f.zeta2);
        for (std::size_t k = 1; k < r.residual_trace.size(); ++k) {
            EXPECT_LE(r.residual_trace[k], r.residual_trace[k - 1] * (1.0 + 1e-12));
        }
    }
}

TEST(MpNet, ThresholdStopsAtTheNoiseLevel)
{
    Fixture f;
    StopRule s;
    s.max_atoms = 30;
    const MpNetParams p = make_constrained_params(f.real, 128);
    const double noise = expected_noise_energy(f.meas, f.zeta2);
    for (Eigen::Index u = 0; u < f.obs.y.cols(); ++u) {
        const EstimateResult r = mp_forward(f.obs.y.col(u), f.meas, p, s, f.zeta2);
        const auto& t = r.residual_trace;
        if (static_cast<int>(r.support.size()) < s.max_atoms) {
            EXPECT_LE(t.back(), noise);
        }
        for (std::size_t k = 0; k + 1 < t.size(); ++k) {
            EXPECT_GT(t[k], noise);
        }
    }
}

TEST(MpNet, TrueDictionaryEqualsTheFixedDictionaryPath)
{
    Fixture f;
    const MpNetParams p = make_constrained_params(f.real, 128);
    StopRule s;
    const CMat a = estimate_channels(f.obs, p, s);
    const CMat b = estimate_with_dictionary(f.obs, build_dictionary(f.real, 128).atoms, s).h_hat;
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(MpNet, LossesMatchTheirDefinitions)
{
    const CMat h = random_cmat(6, 3, 1);
    const CMat e = random_cmat(6, 3, 2);
    const CMat m = random_cmat(4, 6, 3);
    const CMat y = random_cmat(4, 3, 4);
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < h.size(); ++i) {
        num += std::norm(e(i) - h(i));
        den += std::norm(h(i));
    }
    EXPECT_NEAR(loss_supervised(e, h), num / den, 1e-14);
    const CMat r = naive_matmul(m, e) - y;
    EXPECT_NEAR(loss_unsupervised(e, y, m), r.squaredNorm() / y.squaredNorm(), 1e-14);
    EXPECT_NEAR(nmse_db(e, h), 10.0 * std::log10(num / den), 1e-12);
    EXPECT_EQ(nmse_db(h, h), kNmseFloorDb);
}

TEST(MpNet, ReplayReproducesTheForwardEstimate)
{
    Fixture f;
    for (MpNetParams p : {make_constrained_params(f.nominal, 48), make_unconstrained_params(f.nominal, 48)}) {
        const ChannelEstimates est = estimate_channels_detailed(f.obs, p, StopRule{});
        ad::Tape tape;
        const ad::ParamSet ps = mpnet_param_set(p);
        const ad::Var theta = tape.variable(ps.entries()[0].value, ps.entries()[0].real);
        const ad::Var h = estimate_replay(tape, dictionary_node(tape, p, theta), f.obs.y, f.meas, est.supports);
        EXPECT_LT(max_abs_diff(h.value(), est.h_hat), 1e-12);
    }
}

TEST(MpNet, LossGradientsMatchFiniteDifferencesWithFrozenSupports)
{
    Fixture f;
    for (MpNetParams p : {make_constrained_params(f.nominal, 48), make_unconstrained_params(f.nominal, 24)}) {
        const ChannelEstimates est = estimate_channels_detailed(f.obs, p, StopRule{});
        const ad::ParamSet ps = mpnet_param_set(p);
        ad::GradCheckOptions opt;
        opt.tolerance = 1e-5;
        opt.max_entries = 60;
        const auto sup = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
            return loss_supervised(estimate_replay(t, dictionary_node(t, p, v[0]), f.obs.y, f.meas, est.supports),
                                   f.ds.channels);
        };
        const auto unsup = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
            return loss_unsupervised(
                estimate_replay(t, dictionary_node(t, p, v[0]), f.obs.y, f.meas, est.supports), f.obs.y, f.meas.m);
        };
        const ad::GradCheckReport a = ad::grad_check(sup, ps, opt);
        const ad::GradCheckReport b = ad::grad_check(unsup, ps, opt);
        EXPECT_TRUE(a.passed) << to_string(p.variant) << " " << a.max_rel_error;
        EXPECT_TRUE(b.passed) << to_string(p.variant) << " " << b.max_rel_error;
    }
}

TEST(MpNet, ParamSetRoundTrip)
{
    MpNetParams p = make_constrained_params(make_nominal_ula(8, kLambda), 16);
    ad::ParamSet ps = mpnet_param_set(p);
    ps.entries()[0].value(2, 0) += 1e-3;
    assign_param_set(p, ps);
    EXPECT_EQ(p.positions_x(2), ps.entries()[0].value(2, 0).real());
}

TEST(MpNet, CheckpointRoundTripIsExact)
{
    const auto dir = temp_dir("mpnet");
    for (MpNetParams p : {make_constrained_params(perturb_array(make_nominal_ula(8, kLambda), 0.1, 1), 32),
                          make_unconstrained_params(make_nominal_ula(8, kLambda), 32)}) {
        if (p.variant == MpVariant::Unconstrained) {
            p.atoms += 1e-3 * random_cmat(8, 32, 5);
        }
        save_mpnet_checkpoint(p, dir / to_string(p.variant));
        const MpNetParams q = load_mpnet_checkpoint(dir / to_string(p.variant));
        EXPECT_EQ(q.variant, p.variant);
        EXPECT_EQ(max_abs_diff(materialize_dictionary(q).atoms, materialize_dictionary(p).atoms), 0.0);
        EXPECT_EQ(q.trainable_count(), p.trainable_count());
    }
    EXPECT_THROW(load_mpnet_checkpoint(dir / "absent"), std::exception);
}
