#pragma once

#include <Eigen/Core>

#include "expjac/fields.hpp"

namespace expjac {

struct MatExpConfig {
    enum class Method { taylor_series, scaling_squaring_taylor };

    Method method = Method::scaling_squaring_taylor;
    // Upper bound on the number of series terms, the identity included.
    int max_terms = 18;
    // Summation stops once the bound on the dropped tail falls below
    // tol * ||partial sum||.
    double tol = 1e-14;

    static MatExpConfig for_precision(Precision precision);
    // Throws InvalidArgument unless max_terms >= 2 and 0 < tol < 1e-3.
    void check() const;
};

template <int N>
using Mat = Eigen::Matrix<double, N, N>;

template <typename Derived>
double norm1(const Eigen::MatrixBase<Derived>& a)
{
    return a.cwiseAbs().colwise().sum().maxCoeff();
}

// Number of squarings applied for a matrix of the given 1-norm: zero when the
// norm is at most 1, ceil(log2(norm)) otherwise.
int squarings_for(double norm);

// Instantiated for N = 2, 3, 4 and 6.
template <int N>
Mat<N> expm(const Mat<N>& a, const MatExpConfig& cfg = {});

// Frechet derivative of exp at A in direction E, taken from the upper-right
// block of exp([[A, E], [0, A]]).
template <int N>
Mat<N> expm_frechet(const Mat<N>& a, const Mat<N>& direction, const MatExpConfig& cfg = {});

// Gradient of <upstream, exp(A)> with respect to A. Equals the Frechet
// derivative at A^T in direction `upstream`.
template <int N>
Mat<N> expm_vjp(const Mat<N>& a, const Mat<N>& upstream, const MatExpConfig& cfg = {});

// Runtime-sized entry points for 2x2 and 3x3 matrices.
Eigen::MatrixXd expm(const Eigen::MatrixXd& a, const MatExpConfig& cfg = {});
Eigen::MatrixXd expm_vjp(const Eigen::MatrixXd& a, const Eigen::MatrixXd& upstream, const MatExpConfig& cfg = {});

// Voxel-wise exponential of a Jacobian field. Every output matrix has a
// positive determinant (det e^A = e^{tr A}).
JacobianField expm_field(const JacobianField& field, const MatExpConfig& cfg = {});

// Voxel-wise expm_vjp: the cotangent of `field` given the cotangent of
// expm_field(field).
JacobianField expm_field_vjp(const JacobianField& field, const JacobianField& upstream, const MatExpConfig& cfg = {});

} // namespace expjac
