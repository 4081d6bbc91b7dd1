#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "matrix.hpp"

namespace dualenc {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_entry = 0;
    std::size_t entries_checked = 0;
};

// Finite-difference comparison against analytic gradients. `f` re-evaluates
// the scalar objective from the current contents of `params`; the harness
// perturbs entries in place and restores them. Uses the fourth-order 5-point
// stencil so the step can stay wide enough to dominate rounding noise without
// introducing visible truncation error. Runs in 64-bit only.
inline GradCheckResult finite_diff_check(const std::function<double()>& f,
                                         const std::vector<Matrix<double>*>& params,
                                         const std::vector<Matrix<double>>& analytic,
                                         double eps = 1e-3) {
    require(params.size() == analytic.size(), "finite_diff_check: param/grad count mismatch");
    GradCheckResult result;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Matrix<double>& theta = *params[p];
        const Matrix<double>& ga = analytic[p];
        require(theta.rows() == ga.rows() && theta.cols() == ga.cols(),
                "finite_diff_check: gradient shape mismatch for param " + std::to_string(p));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta.data()[i];
            auto probe = [&](double offset) {
                theta.data()[i] = saved + offset;
                const double v = f();
                if (!std::isfinite(v))
                    throw contract_error("finite_diff_check: non-finite objective during probe");
                return v;
            };
            const double f1p = probe(eps);
            const double f1m = probe(-eps);
            const double f2p = probe(2.0 * eps);
            const double f2m = probe(-2.0 * eps);
            theta.data()[i] = saved;
            const double gfd = (8.0 * (f1p - f1m) - (f2p - f2m)) / (12.0 * eps);
            const double rel =
                std::abs(ga.data()[i] - gfd) / std::max(std::abs(gfd), 1e-8);
            ++result.entries_checked;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_param = p;
                result.worst_entry = i;
            }
        }
    }
    return result;
}

}  // namespace dualenc
