#pragma once

#include <dualenc/matrix.hpp>
#include <dualenc/rng.hpp>

#include <cmath>
#include <cstddef>

namespace testutil {

inline dualenc::Matrix<double> random_symmetric(dualenc::Rng& rng, std::size_t n, double scale = 1.0) {
    dualenc::Matrix<double> s(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const double v = rng.normal(0.0, scale);
            s(i, j) = v;
            s(j, i) = v;
        }
    }
    return s;
}

// Cofactor expansion; usable as an independent determinant oracle for n <= 4.
inline double det_cofactor(const dualenc::Matrix<double>& a) {
    const std::size_t n = a.rows();
    if (n == 1) return a(0, 0);
    double total = 0.0;
    double sign = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
        dualenc::Matrix<double> minor(n - 1, n - 1);
        for (std::size_t r = 1; r < n; ++r) {
            std::size_t cc = 0;
            for (std::size_t c = 0; c < n; ++c) {
                if (c == j) continue;
                minor(r - 1, cc++) = a(r, c);
            }
        }
        total += sign * a(0, j) * det_cofactor(minor);
        sign = -sign;
    }
    return total;
}

template <class T>
double max_abs_diff(const dualenc::Matrix<T>& a, const dualenc::Matrix<T>& b) {
    double best = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        best = std::max(best, std::abs(static_cast<double>(a.data()[i]) -
                                       static_cast<double>(b.data()[i])));
    return best;
}

}  // namespace testutil
