#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "matrix.hpp"

namespace dualenc {

// Eigendecomposition of a symmetric matrix: values sorted descending,
// vectors stored as columns of `vectors` (column j pairs with values[j]).
template <class T>
struct EigenResult {
    std::vector<T> values;
    Matrix<T> vectors;
};

namespace detail {

inline double off_diagonal_norm(const Matrix<double>& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i != j) acc += a(i, j) * a(i, j);
    return std::sqrt(acc);
}

// One cyclic Jacobi sweep over the strict upper triangle, applying each
// rotation to both the working matrix and the accumulated eigenvectors.
inline void jacobi_sweep(Matrix<double>& a, Matrix<double>& v) {
    const std::size_t n = a.rows();
    for (std::size_t p = 0; p + 1 < n; ++p) {
        for (std::size_t q = p + 1; q < n; ++q) {
            const double apq = a(p, q);
            if (apq == 0.0) continue;
            const double app = a(p, p);
            const double aqq = a(q, q);
            const double theta = (aqq - app) / (2.0 * apq);
            // Smaller-magnitude root of t^2 + 2*theta*t - 1 = 0 keeps the
            // rotation angle <= pi/4, which is what makes Jacobi stable.
            const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                             (std::abs(theta) + std::sqrt(theta * theta + 1.0));
            const double c = 1.0 / std::sqrt(t * t + 1.0);
            const double s = t * c;

            for (std::size_t k = 0; k < n; ++k) {
                const double akp = a(k, p);
                const double akq = a(k, q);
                a(k, p) = c * akp - s * akq;
                a(k, q) = s * akp + c * akq;
            }
            for (std::size_t k = 0; k < n; ++k) {
                const double apk = a(p, k);
                const double aqk = a(q, k);
                a(p, k) = c * apk - s * aqk;
                a(q, k) = s * apk + c * aqk;
            }
            for (std::size_t k = 0; k < n; ++k) {
                const double vkp = v(k, p);
                const double vkq = v(k, q);
                v(k, p) = c * vkp - s * vkq;
                v(k, q) = s * vkp + c * vkq;
            }
        }
    }
}

}  // namespace detail

// Cyclic Jacobi eigensolver for symmetric matrices. Internally runs in
// double regardless of T so float callers get the same orderings and signs.
//
// Postconditions:
//  - values strictly sorted descending (ties keep their relative order),
//  - each eigenvector's first component of magnitude > eps is positive,
//  - vectors are orthonormal columns.
template <class T>
EigenResult<T> sym_eig(const Matrix<T>& input) {
    require(input.rows() == input.cols(), "sym_eig: matrix must be square");
    const std::size_t n = input.rows();
    ensure_finite(input, "sym_eig");

    Matrix<double> a = cast_matrix<T, double>(input);

    // Reject matrices that are not symmetric up to roundoff.
    double scale_ref = max_abs(a);
    if (scale_ref == 0.0) scale_ref = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::abs(a(i, j) - a(j, i)) > 1e-9 * scale_ref)
                throw contract_error("sym_eig: matrix is not symmetric at (" +
                                     std::to_string(i) + "," + std::to_string(j) + ")");
            const double sym = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = sym;
            a(j, i) = sym;
        }
    }

    Matrix<double> v = Matrix<double>::identity(n);

    const double tol = 1e-10 * std::max(1.0, scale_ref);
    const int max_sweeps = 100;
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        if (detail::off_diagonal_norm(a) <= tol) break;
        detail::jacobi_sweep(a, v);
    }
    const double residual = detail::off_diagonal_norm(a);
    if (residual > tol)
        throw convergence_error("sym_eig: off-diagonal norm " + std::to_string(residual) +
                                " above tolerance after " + std::to_string(max_sweeps) +
                                " sweeps");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

    EigenResult<T> out;
    out.values.resize(n);
    out.vectors = Matrix<T>(n, n);
    const double sign_eps = 1e-12;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.values[j] = static_cast<T>(a(src, src));
        double sign = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = v(i, src);
            if (std::abs(x) > sign_eps) {
                sign = (x > 0.0) ? 1.0 : -1.0;
                break;
            }
        }
        for (std::size_t i = 0; i < n; ++i)
            out.vectors(i, j) = static_cast<T>(sign * v(i, src));
    }
    return out;
}

}  // namespace dualenc
