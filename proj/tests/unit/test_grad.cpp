// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "unfold/grad.hpp"

using namespace unfold;
using namespace unfold::ad;
using namespace testing_support;

namespace {

// Generic real loss ||f - C||_F^2 around an op output.
Var fit(Var f, std::uint64_t seed)
{
    const CMat c = random_cmat(f.rows(), f.cols(), seed);
    return sqnorm(add_const(f, -c));
}

void expect_passes(const LossFn& fn, const ParamSet& ps, double tol = 1e-6)
{
    GradCheckOptions opt;
    opt.tolerance = tol;
    const GradCheckReport r = grad_check(fn, ps, opt);
    for (const auto& e : r.entries) {
        EXPECT_LT(e.max_rel_error, tol) << e.name;
    }
    EXPECT_TRUE(r.passed);
}

ParamSet one(const std::string& name, CMat v, bool real = false)
{
    ParamSet p;
    p.add(name, std::move(v), real);
    return p;
}

ParamSet two(CMat a, CMat b)
{
    ParamSet p;
    p.add("a", std::move(a), false);
    p.add("b", std::move(b), false);
    return p;
}

}  // namespace

TEST(Grad, SquaredModulusHasConjugateWirtingerGradientZ)
{
    const CMat z = random_cmat(3, 2, 1);
    const GradResult r = backprop([](Tape&, const std::vector<Var>& p) { return sqnorm(p[0]); }, one("z", z));
    EXPECT_NEAR(r.value, z.squaredNorm(), 1e-12);
    EXPECT_LT(max_abs_diff(r.grads[0], z), 1e-14);
}

TEST(Grad, RealParameterReportsOrdinaryDerivative)
{
    // L = x^2 for real x: dL/dx = 2x
    CMat x(1, 1);
    x(0, 0) = 1.5;
    const GradResult r = backprop([](Tape&, const std::vector<Var>& p) { return sqnorm(p[0]); }, one("x", x, true));
    EXPECT_NEAR(r.grads[0](0, 0).real(), 3.0, 1e-14);
    EXPECT_EQ(r.grads[0](0, 0).imag(), 0.0);
}

TEST(Grad, AddSubMul)
{
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(add(p[0], p[1]), 9); },
                  two(random_cmat(3, 2, 1), random_cmat(3, 2, 2)));
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(sub(p[0], p[1]), 9); },
                  two(random_cmat(3, 2, 3), random_cmat(3, 2, 4)));
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(mul(p[0], p[1]), 9); },
                  two(random_cmat(3, 4, 5), random_cmat(4, 2, 6)));
}

TEST(Grad, AdjointTransposeConj)
{
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(adjoint(p[0]), 3); }, one("a", random_cmat(3, 2, 7)));
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(transpose(p[0]), 3); }, one("a", random_cmat(3, 2, 8)));
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(conj(p[0]), 3); }, one("a", random_cmat(3, 2, 9)));
}

TEST(Grad, Scalings)
{
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(scale(p[0], -2.5), 4); }, one("a", random_cmat(2, 2, 10)));
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(scale(p[0], cplx(0.3, -1.2)), 4); },
                  one("a", random_cmat(2, 2, 11)));
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(smul(p[0], p[1]), 4); },
                  two(random_cmat(1, 1, 12), random_cmat(3, 2, 13)));
}

TEST(Grad, SmulWithRealScalar)
{
    ParamSet ps;
    ps.add("s", CMat::Constant(1, 1, cplx(0.7, 0.0)), true);
    ps.add("a", random_cmat(2, 3, 14), false);
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(smul(p[0], p[1]), 5); }, ps);
}

TEST(Grad, ExpJOfRealAngles)
{
    CMat x = random_cmat(4, 2, 15).real().cast<cplx>();
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(exp_j(p[0]), 6); }, one("x", x, true));
}

TEST(Grad, UnitModulusProjection)
{
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(unit_modulus(p[0]), 6); },
                  one("w", random_cmat(4, 3, 16)));
}

TEST(Grad, SolveHpdBothArguments)
{
    const CMat a = random_cmat(4, 4, 17);
    ParamSet ps;
    ps.add("a", a, false);
    ps.add("b", random_cmat(4, 2, 18), false);
    // S = A A^H + 4 I keeps the operand HPD for every perturbation
    expect_passes(
        [](Tape&, const std::vector<Var>& p) {
            const Var s = add_const(mul(p[0], adjoint(p[0])), 4.0 * CMat::Identity(4, 4));
            return fit(solve_hpd(s, p[1]), 7);
        },
        ps);
}

TEST(Grad, LogdetOfGram)
{
    expect_passes(
        [](Tape&, const std::vector<Var>& p) {
            return logdet(add_const(mul(p[0], adjoint(p[0])), CMat::Identity(3, 3)));
        },
        one("a", random_cmat(3, 5, 19)));
}

TEST(Grad, IndexingOps)
{
    const CMat a = random_cmat(4, 5, 20);
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(block(p[0], 1, 2, 2, 3), 8); }, one("a", a));
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(col(p[0], 4), 8); }, one("a", a));
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(entry(p[0], 3, 1), 8); }, one("a", a));
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(gather_cols(p[0], {4, 0, 4}), 8); }, one("a", a));
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(hcat({p[0], col(p[0], 1), p[0]}), 8); },
                  one("a", a));
}

TEST(Grad, RealScalarHelpers)
{
    const CMat a = random_cmat(3, 2, 21);
    expect_passes([](Tape&, const std::vector<Var>& p) { return rexp(scale(sqnorm(p[0]), 0.1)); }, one("a", a));
    expect_passes([](Tape&, const std::vector<Var>& p) { return rsqrt(sqnorm(p[0])); }, one("a", a));
    expect_passes([](Tape&, const std::vector<Var>& p) { return rrecip(sqnorm(p[0])); }, one("a", a));
    expect_passes(
        [](Tape&, const std::vector<Var>& p) {
            return sum({sqnorm(p[0]), rsqrt(sqnorm(p[0])), scale(sqnorm(col(p[0], 0)), 3.0)});
        },
        one("a", a));
}

TEST(Grad, ElementwiseRexpOfMatrix)
{
    CMat x = random_cmat(3, 2, 22).real().cast<cplx>();
    expect_passes([](Tape&, const std::vector<Var>& p) { return fit(rexp(p[0]), 9); }, one("x", x, true));
}

TEST(Grad, StopGradientBlocksFlow)
{
    const CMat a = random_cmat(2, 2, 23);
    const GradResult r = backprop(
        [](Tape&, const std::vector<Var>& p) { return add(sqnorm(stop_gradient(p[0])), sqnorm(scale(p[0], 0.0))); },
        one("a", a));
    EXPECT_EQ(r.grads[0].norm(), 0.0);
    EXPECT_NEAR(r.value, a.squaredNorm(), 1e-12);
}

TEST(Grad, UnregisteredPrimitiveIsReported)
{
    const auto fn = [](Tape& t, const std::vector<Var>& p) {
        const Var odd = t.record("mystery", p[0].value(), false, {p[0]}, nullptr);
        return sqnorm(odd);
    };
    EXPECT_THROW(backprop(fn, one("a", random_cmat(2, 2, 24))), UnregisteredPrimitive);
}

TEST(Grad, BackwardRequiresRealScalarLoss)
{
    Tape t;
    const Var v = t.variable(random_cmat(2, 2, 25));
    EXPECT_THROW(t.backward(v), std::invalid_argument);
}

TEST(Grad, ParamSetRejectsDuplicatesAndCountsDof)
{
    ParamSet p;
    p.add("x", CMat::Zero(3, 1), true);
    p.add("w", CMat::Zero(2, 2), false);
    EXPECT_THROW(p.add("x", CMat::Zero(1, 1), true), std::invalid_argument);
    EXPECT_EQ(p.real_dof(), 3u + 8u);
}

TEST(Grad, GradCheckDetectsAWrongAdjoint)
{
    // conj recorded with the adjoint of the identity: wrong on purpose
    const auto fn = [](Tape& t, const std::vector<Var>& p) {
        const std::size_t ia = p[0].id();
        const Var bad = t.record("bad_conj", p[0].value().conjugate(), false, {p[0]},
                                 [ia](Tape& tt, std::size_t self) { tt.accumulate(ia, tt.grad(self)); });
        return fit(bad, 1);
    };
    const GradCheckReport r = grad_check(fn, one("a", random_cmat(2, 2, 26)));
    EXPECT_FALSE(r.passed);
    EXPECT_GT(r.max_rel_error, 0.1);
}
