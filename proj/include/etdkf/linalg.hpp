#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "etdkf/errors.hpp"

namespace etdkf {

inline constexpr int kStateDim = 5;
inline constexpr int kMeasurementDim = 3;

using Vec3 = Eigen::Vector3d;
using Vec5 = Eigen::Matrix<double, kStateDim, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat5 = Eigen::Matrix<double, kStateDim, kStateDim>;
using Mat35 = Eigen::Matrix<double, kMeasurementDim, kStateDim>;

// State vector layout: [p_x, p_y, p_z, o, b].
inline constexpr int kIdxPx = 0;
inline constexpr int kIdxPy = 1;
inline constexpr int kIdxPz = 2;
inline constexpr int kIdxOffset = 3;
inline constexpr int kIdxBias = 4;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

template <typename Derived>
auto symmetrized(const Eigen::MatrixBase<Derived>& m) {
    return ((m + m.transpose()) * 0.5).eval();
}

template <typename Derived>
double symmetry_defect(const Eigen::MatrixBase<Derived>& m) {
    return (m - m.transpose()).template lpNorm<Eigen::Infinity>();
}

template <typename Derived>
double min_eigenvalue(const Eigen::MatrixBase<Derived>& m) {
    Eigen::SelfAdjointEigenSolver<typename Derived::PlainObject> es(symmetrized(m));
    return es.eigenvalues().minCoeff();
}

template <typename Derived>
double max_eigenvalue(const Eigen::MatrixBase<Derived>& m) {
    Eigen::SelfAdjointEigenSolver<typename Derived::PlainObject> es(symmetrized(m));
    return es.eigenvalues().maxCoeff();
}

template <typename Derived>
bool is_symmetric_psd(const Eigen::MatrixBase<Derived>& m, double sym_tol, double eig_tol) {
    if (!m.allFinite()) return false;
    if (symmetry_defect(m) > sym_tol) return false;
    return min_eigenvalue(m) >= -eig_tol;
}

// Smallest eigenvalue by cyclic Jacobi sweeps.  On positive-definite matrices
// whose diagonal spans many orders of magnitude (position variances in m^2
// next to clock variances in s^2), tridiagonalization-based solvers lose the
// small eigenvalues to roundoff at the scale of the largest entry; Jacobi
// rotations keep high relative accuracy on such graded matrices, so this is
// the right tool for information-floor checks.
template <typename Derived>
double jacobi_min_eigenvalue(const Eigen::MatrixBase<Derived>& m) {
    auto a = symmetrized(m);
    const int n = static_cast<int>(a.rows());
    const double abs_floor = 1e-300 * (1.0 + a.cwiseAbs().maxCoeff());
    for (int sweep = 0; sweep < 64; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                const double threshold =
                    1e-15 * std::sqrt(std::abs(a(p, p)) * std::abs(a(q, q))) + abs_floor;
                if (std::abs(apq) <= threshold) continue;
                rotated = true;
                const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                a(p, p) -= t * apq;
                a(q, q) += t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (int i = 0; i < n; ++i) {
                    if (i == p || i == q) continue;
                    const double aip = a(i, p);
                    const double aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(p, i) = a(i, p);
                    a(i, q) = s * aip + c * aiq;
                    a(q, i) = a(i, q);
                }
            }
        }
        if (!rotated) break;
    }
    return a.diagonal().minCoeff();
}

// Solves A X = B for symmetric A via LDLT.  On a singular or indefinite
// factorization the solve is retried once with `jitter` added to the diagonal
// of A; if that also fails, throws NumericalFailureError.
template <typename MatA, typename MatB>
auto spd_solve(const MatA& a, const MatB& b, double jitter = 1e-12) {
    using Result = decltype((a.ldlt().solve(b)).eval());
    Eigen::LDLT<typename MatA::PlainObject> ldlt(symmetrized(a));
    if (ldlt.info() == Eigen::Success) {
        Result x = ldlt.solve(b).eval();
        if (x.allFinite()) return x;
    }
    typename MatA::PlainObject jittered = symmetrized(a);
    jittered.diagonal().array() += jitter;
    Eigen::LDLT<typename MatA::PlainObject> retry(jittered);
    if (retry.info() == Eigen::Success) {
        Result x = retry.solve(b).eval();
        if (x.allFinite()) return x;
    }
    throw NumericalFailureError("symmetric solve failed (singular even after jitter)");
}

// Symmetric inverse via solve against the identity.
template <typename MatA>
auto spd_inverse(const MatA& a, double jitter = 1e-12) {
    using Plain = typename MatA::PlainObject;
    Plain identity = Plain::Identity(a.rows(), a.cols());
    return symmetrized(spd_solve(a, identity, jitter));
}

}  // namespace etdkf
