// SPDX-License-Identifier: Apache-2.0

#include "unfold/numerics.hpp"

#include <cmath>

namespace unfold {

CMat matmul(const CMat& a, const CMat& b)
{
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " by " +
                             std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    return a * b;
}

CMat adjoint(const CMat& a) { return a.adjoint(); }

double frob_norm(const CMat& a) { return a.norm(); }

double frob_norm2(const CMat& a) { return a.squaredNorm(); }

bool all_finite(const CMat& a) { return a.allFinite(); }

namespace {

SvdResult run_svd(const CMat& a, unsigned options)
{
    if (!a.allFinite()) {
        throw NumericError("svd: non-finite input");
    }
    Eigen::JacobiSVD<CMat> solver(a, options);
    SvdResult out;
    out.u = solver.matrixU();
    out.s = solver.singularValues();
    out.vh = solver.matrixV().adjoint();
    if (!out.u.allFinite() || !out.s.allFinite() || !out.vh.allFinite()) {
        throw NumericError("svd: did not converge to finite factors");
    }
    return out;
}

}  // namespace

SvdResult svd(const CMat& a) { return run_svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV); }

SvdResult svd_full(const CMat& a) { return run_svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV); }

double logdet_psd(const CMat& a)
{
    if (a.rows() != a.cols()) {
        throw DimensionError("logdet_psd: matrix is not square");
    }
    Eigen::LLT<CMat> llt(a);
    if (llt.info() != Eigen::Success) {
        throw NumericError("logdet_psd: matrix is not positive definite");
    }
    const CMat& l = llt.matrixLLT();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
        const double pivot = l(i, i).real();
        if (!(pivot > 0.0) || !std::isfinite(pivot)) {
            throw NumericError("logdet_psd: non-positive pivot");
        }
        acc += std::log(pivot);
    }
    return 2.0 * acc;
}

CMat solve_hpd(const CMat& a, const CMat& b)
{
    if (a.rows() != a.cols() || a.rows() != b.rows()) {
        throw DimensionError("solve_hpd: shape mismatch");
    }
    Eigen::LLT<CMat> llt(a);
    if (llt.info() != Eigen::Success) {
        throw NumericError("solve_hpd: matrix is not positive definite");
    }
    CMat x = llt.solve(b);
    if (!x.allFinite()) {
        throw NumericError("solve_hpd: non-finite solution");
    }
    return x;
}

RVec hermitian_eigenvalues(const CMat& a)
{
    Eigen::SelfAdjointEigenSolver<CMat> es(a, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw NumericError("hermitian_eigenvalues: no convergence");
    }
    return es.eigenvalues();
}

void require_shape(const CMat& m, Eigen::Index rows, Eigen::Index cols, const std::string& what)
{
    if (m.rows() != rows || m.cols() != cols) {
        throw DimensionError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                             std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
}

}  // namespace unfold
