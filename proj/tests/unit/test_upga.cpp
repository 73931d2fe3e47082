// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "unfold/upga.hpp"

using namespace unfold;
using namespace testing_support;

namespace {

// log2 det(I + c G G^H) with G = H^T W, via Gauss elimination.
double naive_rate_bits(const CMat& h, const CMat& w, double sigma2)
{
    const CMat g = naive_matmul(h.transpose(), w);
    const double c = 1.0 / (static_cast<double>(h.cols()) * sigma2);
    CMat s = CMat::Identity(g.rows(), g.rows()) + c * naive_matmul(g, g.adjoint());
    return std::log2(naive_det(s).real());
}

// dF/d conj(X) = (dF/dRe + j dF/dIm) / 2 by central differences.
template <class F>
CMat fd_wirtinger(const CMat& x, F f, double h = 1e-6)
{
    CMat g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        CMat p = x, m = x;
        p(i) += h;
        m(i) -= h;
        const double dre = (f(p) - f(m)) / (2 * h);
        p = x;
        m = x;
        p(i) += cplx(0, h);
        m(i) -= cplx(0, h);
        const double dim = (f(p) - f(m)) / (2 * h);
        g(i) = 0.5 * cplx(dre, dim);
    }
    return g;
}

HybridPrecoder some_precoder(Eigen::Index a, int l, Eigen::Index u, double p, std::uint64_t seed)
{
    HybridPrecoder x;
    x.p_total = p;
    x.wa = project_unit_modulus(random_cmat(a, l, seed));
    x.wd = project_power(x.wa, random_cmat(l, u, seed + 1), p);
    return x;
}

PgaTrace fixed_step(const CMat& h, std::uint64_t seed)
{
    return pga_forward(h, constant_step_params(60, 0.05), 4, 2.0, 0.3, seed);
}

}  // namespace

TEST(Upga, RateMatchesTheDeterminantOracle)
{
    const CMat h = random_cmat(8, 3, 1);
    const HybridPrecoder p = some_precoder(8, 4, 3, 3.0, 2);
    for (double s2 : {0.1, 1.0, 7.0}) {
        EXPECT_NEAR(sum_rate(h, p, s2), naive_rate_bits(h, p.w(), s2), 1e-10);
        EXPECT_NEAR(sum_rate_nats(h, p.w(), s2) / std::log(2.0), naive_rate_bits(h, p.w(), s2), 1e-10);
    }
}

TEST(Upga, SingleUserRateIsLogOnePlusSnr)
{
    const CMat h = random_cmat(6, 1, 3);
    const CMat w = random_cmat(6, 1, 4);
    const cplx hw = (h.transpose() * w)(0, 0);
    EXPECT_NEAR(sum_rate_nats(h, w, 0.5), std::log1p(std::norm(hw) / 0.5), 1e-12);
}

TEST(Upga, RateGradientMatchesFiniteDifferences)
{
    const CMat h = random_cmat(6, 2, 5);
    const HybridPrecoder p = some_precoder(6, 3, 2, 2.0, 6);
    const double s2 = 0.3;
    const CMat gw = sum_rate_grad_w(h, p.w(), s2);
    EXPECT_LT(max_abs_diff(gw, fd_wirtinger(p.w(), [&](const CMat& w) { return sum_rate_nats(h, w, s2); })),
              1e-7);
    const PrecoderGrad g = sum_rate_grad(h, p, s2);
    EXPECT_LT(max_abs_diff(g.wa, fd_wirtinger(p.wa, [&](const CMat& wa) { return sum_rate_nats(h, wa * p.wd, s2); })),
              1e-7);
    EXPECT_LT(max_abs_diff(g.wd, fd_wirtinger(p.wd, [&](const CMat& wd) { return sum_rate_nats(h, p.wa * wd, s2); })),
              1e-7);
}

TEST(Upga, Projections)
{
    CMat a(1, 3);
    a << cplx(3, 4), cplx(0, 0), cplx(0, -2);
    const CMat u = project_unit_modulus(a);
    EXPECT_LT(std::abs(u(0) - cplx(0.6, 0.8)), 1e-15);
    EXPECT_EQ(u(1), cplx(1, 0));
    EXPECT_LT(std::abs(u(2) - cplx(0, -1)), 1e-15);

    const CMat wa = project_unit_modulus(random_cmat(5, 2, 7));
    const CMat big = 10.0 * random_cmat(2, 2, 8);
    const CMat small = 1e-3 * random_cmat(2, 2, 9);
    EXPECT_NEAR((wa * project_power(wa, big, 2.0)).squaredNorm(), 2.0, 1e-12);
    EXPECT_EQ(max_abs_diff(project_power(wa, small, 2.0), small), 0.0);
}

TEST(Upga, OneStepMatchesAHandComputedAscent)
{
    // A=4, L=2, U=2, K=1; gradient from c A^H S^-1 A W with A = H^T, naive algebra
    const CMat h = random_cmat(4, 2, 10);
    const HybridPrecoder p = some_precoder(4, 2, 2, 2.0, 11);
    const double s2 = 0.4, ma = 0.7, md = 0.05, c = 1.0 / (2.0 * s2);
    const CMat at = h.transpose();
    const CMat w = naive_matmul(p.wa, p.wd);
    const CMat aw = naive_matmul(at, w);
    const CMat s = CMat::Identity(2, 2) + c * naive_matmul(aw, aw.adjoint());
    const CMat gw = c * naive_matmul(naive_matmul(at.adjoint(), naive_inverse(s)), aw);
    CMat wa = p.wa + ma * naive_matmul(gw, p.wd.adjoint());
    for (Eigen::Index i = 0; i < wa.size(); ++i) {
        wa(i) /= std::abs(wa(i));
    }
    CMat wd = p.wd + md * naive_matmul(p.wa.adjoint(), gw);
    const double norm = naive_matmul(wa, wd).norm();
    if (norm > std::sqrt(2.0)) {
        wd *= std::sqrt(2.0) / norm;
    }
    PgaParams k1 = constant_step_params(1);
    k1.mu << ma, md;
    const PgaTrace t = pga_run(h, k1, p, s2);
    EXPECT_LT(max_abs_diff(t.final.wa, wa), 1e-10);
    EXPECT_LT(max_abs_diff(t.final.wd, wd), 1e-10);
    EXPECT_NEAR(t.rates.back(), naive_rate_bits(h, naive_matmul(wa, wd), s2), 1e-10);
}

TEST(Upga, ZeroStepsKeepTheInitialRate)
{
    const CMat h = random_cmat(8, 2, 20);
    PgaParams p = constant_step_params(4);
    p.mu.setConstant(1e-300);
    const PgaTrace t = pga_forward(h, p, 4, 2.0, 0.3, 1);
    for (double r : t.rates) {
        EXPECT_NEAR(r, t.rates[0], 1e-12);
    }
}

TEST(Upga, ConstraintsHoldAfterEveryIteration)
{
    const CMat h = random_cmat(16, 4, 21);
    const HybridPrecoder init = init_precoders(h, 8, 4.0, 2);
    HybridPrecoder x = init;
    for (int k = 0; k < 200; ++k) {
        x = pga_step(h, x, 0.5, 0.5, 0.05);
        EXPECT_LT((x.wa.cwiseAbs().array() - 1.0).abs().maxCoeff(), 1e-12);
        EXPECT_LE(x.w().squaredNorm(), 4.0 + 1e-9);
    }
}

TEST(Upga, RateIsInvariantToUnitaryMixingOfUsers)
{
    const CMat h = random_cmat(8, 3, 22);
    HybridPrecoder p = some_precoder(8, 4, 3, 3.0, 23);
    const double r = sum_rate(h, p, 0.2);
    const CMat q = random_cmat(3, 3, 24).householderQr().householderQ();
    p.wd = p.wd * q;
    EXPECT_NEAR(sum_rate(h, p, 0.2), r, 1e-10);
}

TEST(Upga, SmallAscentStepIncreasesTheRate)
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        const CMat h = random_cmat(8, 2, 200 + s);
        const HybridPrecoder p = some_precoder(8, 4, 2, 2.0, 300 + s);
        const PrecoderGrad g = sum_rate_grad(h, p, 0.5);
        const double r0 = sum_rate_nats(h, p.w(), 0.5);
        bool up = false;
        for (double mu : {1e-4, 1e-5, 1e-6}) {
            up = up || sum_rate_nats(h, (p.wa + mu * g.wa) * (p.wd + mu * g.wd), 0.5) > r0;
        }
        EXPECT_TRUE(up) << s;
    }
}

TEST(Upga, RankOneChannelInitialisesWithItsPhases)
{
    const CVec v = random_cmat(6, 1, 25).col(0);
    const CMat h = v * RVec::Ones(3).transpose().cast<cplx>();
    const HybridPrecoder p = init_precoders(h, 1, 3.0, 1);
    // the left singular vector is v/|v| up to a global phase
    const cplx rot = p.wa(0) / (v(0) / std::abs(v(0)));
    for (Eigen::Index i = 0; i < 6; ++i) {
        EXPECT_LT(std::abs(p.wa(i) - rot * v(i) / std::abs(v(i))), 1e-12);
    }
}

TEST(Upga, LossesAgreeOnThePerfectEstimate)
{
    const CMat h = random_cmat(8, 2, 26);
    const PgaTrace t = pga_forward(h, constant_step_params(3), 4, 2.0, 0.3, 4);
    EXPECT_EQ(loss_sumrate_supervised(h, t, 0.3), loss_sumrate_unsupervised(h, t, 0.3));
    EXPECT_EQ(sum_rate_nats(h, CMat::Zero(8, 2), 0.3), 0.0);
}

TEST(Upga, PrecoderFromAWrongChannelLosesOnTheTrueOne)
{
    int wins = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const CMat h = random_cmat(8, 2, 400 + s);
        const CMat wrong = random_cmat(8, 2, 500 + s);
        double best = -1e300;
        for (std::uint64_t r = 0; r < 5; ++r) {
            best = std::max(best, -loss_sumrate_supervised(h, fixed_step(h, r), 0.3));
        }
        wins += -loss_sumrate_supervised(h, fixed_step(wrong, 0), 0.3) <= best;
    }
    EXPECT_EQ(wins, 20);
}

TEST(Upga, InitialisationIsFeasibleAndDeterministic)
{
    const CMat h = random_cmat(16, 4, 12);
    const HybridPrecoder a = init_precoders(h, 8, 4.0, 5);
    const HybridPrecoder b = init_precoders(h, 8, 4.0, 5);
    EXPECT_LT((a.wa.cwiseAbs().array() - 1.0).abs().maxCoeff(), 1e-14);
    EXPECT_LE(a.w().squaredNorm(), 4.0 * (1 + 1e-12));
    EXPECT_EQ(max_abs_diff(a.wa, b.wa), 0.0);
    EXPECT_EQ(max_abs_diff(a.wd, b.wd), 0.0);
    EXPECT_GT(max_abs_diff(init_precoders(h, 8, 4.0, 6).wd, a.wd), 0.0);
    EXPECT_THROW(init_precoders(h, 17, 4.0, 5), std::invalid_argument);
}

TEST(Upga, ForwardTraceStartsAtTheInitialisation)
{
    const CMat h = random_cmat(16, 4, 13);
    const PgaParams p = constant_step_params(10);
    const PgaTrace t = pga_forward(h, p, 8, 4.0, 0.1, 3);
    ASSERT_EQ(t.rates.size(), 11u);
    EXPECT_NEAR(t.rates[0], sum_rate(h, init_precoders(h, 8, 4.0, 3), 0.1), 1e-12);
    EXPECT_NEAR(t.rates.back(), sum_rate(h, t.final, 0.1), 1e-12);
    EXPECT_NEAR(loss_sumrate_unsupervised(h, t, 0.1), -t.rates.back() * std::log(2.0), 1e-10);

    const CMat truth = random_cmat(16, 4, 14);
    const PgaTrace e = pga_forward(h, p, 8, 4.0, 0.1, 3, &truth);
    EXPECT_EQ(max_abs_diff(e.final.wa, t.final.wa), 0.0);
    EXPECT_NEAR(e.rates.back(), sum_rate(truth, t.final, 0.1), 1e-12);
}

TEST(Upga, UnrollMatchesTheForwardPass)
{
    const CMat h = random_cmat(8, 2, 15);
    PgaParams p = constant_step_params(4);
    p.mu(2, 0) = 0.5;
    const HybridPrecoder init = init_precoders(h, 3, 2.0, 1);
    const PgaTrace t = pga_run(h, p, init, 0.2);
    ad::Tape tape;
    const PgaUnroll u = pga_unroll(tape, tape.constant(h), tape.constant(p.mu, true), init, 0.2);
    ASSERT_EQ(u.wa.size(), 5u);
    EXPECT_LT(max_abs_diff(u.wa.back().value(), t.final.wa), 1e-12);
    EXPECT_LT(max_abs_diff(u.wd.back().value(), t.final.wd), 1e-12);
    const ad::Var loss = pga_rate_loss(u, tape.constant(h), 0.2);
    EXPECT_NEAR(loss.scalar(), -t.rates.back() * std::log(2.0), 1e-10);
}

TEST(Upga, UnrollGradientsMatchFiniteDifferences)
{
    const CMat h = random_cmat(6, 2, 16);
    const CMat truth = h + 0.3 * random_cmat(6, 2, 17);
    PgaParams p = constant_step_params(3, 0.2);
    const HybridPrecoder init = init_precoders(h, 3, 2.0, 2);
    ad::ParamSet ps;
    ps.add("mu", p.mu.cast<cplx>(), true);
    ps.add("h", h, false);
    for (bool all : {false, true}) {
        const auto fn = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
            return pga_rate_loss(pga_unroll(t, v[1], v[0], init, 0.3), t.constant(truth), 0.3, all);
        };
        ad::GradCheckOptions o;
        o.tolerance = 1e-5;
        const ad::GradCheckReport r = ad::grad_check(fn, ps, o);
        EXPECT_TRUE(r.passed) << r.max_rel_error;
    }
}

TEST(Upga, StepValidationAndCheckpoint)
{
    PgaParams p = constant_step_params(3);
    EXPECT_EQ(p.iterations(), 3);
    EXPECT_EQ(p.mu(2, 1), kDefaultStep);
    p.mu(1, 0) = 0.123456789012345678;
    const auto dir = temp_dir("upga");
    save_pga_checkpoint(p, dir / "upga.json");
    EXPECT_EQ((load_pga_checkpoint(dir / "upga.json").mu - p.mu).norm(), 0.0);
    p.mu(0, 0) = 0.0;
    EXPECT_THROW(validate(p), std::invalid_argument);
}
