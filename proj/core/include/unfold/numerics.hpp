// SPDX-License-Identifier: Apache-2.0
//
// Dense complex linear algebra shared by every other module. Matrices are
// column-major double-precision complex (Eigen storage), so the in-memory
// layout matches the on-disk payload format byte for byte.

#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace unfold {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

inline constexpr cplx kJ{0.0, 1.0};
inline constexpr double kPi = 3.14159265358979323846;

/// Thrown when a shape precondition is violated.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown on loss of definiteness, non-convergence or non-finite results.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SvdResult {
    CMat u;   // left singular vectors (columns)
    RVec s;   // descending, nonnegative
    CMat vh;  // adjoint of the right singular vectors (rows)
};

CMat matmul(const CMat& a, const CMat& b);
CMat adjoint(const CMat& a);

double frob_norm(const CMat& a);
double frob_norm2(const CMat& a);
bool all_finite(const CMat& a);

/// Thin SVD: u is m x r, vh is r x n with r = min(m, n).
SvdResult svd(const CMat& a);

/// Full SVD: u is m x m, vh is n x n, s has min(m, n) entries.
SvdResult svd_full(const CMat& a);

/// Natural-log determinant of a Hermitian positive definite matrix through a
/// Cholesky factorization. Throws NumericError on a non-positive pivot.
double logdet_psd(const CMat& a);

/// Solves a * x = b for Hermitian positive definite a.
CMat solve_hpd(const CMat& a, const CMat& b);

/// Eigenvalues of a Hermitian matrix, ascending.
RVec hermitian_eigenvalues(const CMat& a);

void require_shape(const CMat& m, Eigen::Index rows, Eigen::Index cols, const std::string& what);

}  // namespace unfold
