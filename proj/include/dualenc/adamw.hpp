#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "matrix.hpp"

namespace dualenc {

// Hyper-parameters of the update rule. Kept separate from the training loop
// config so the optimizer can be exercised on bare tensors.
struct OptimizerConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-2;
    std::size_t warmup_iters = 200;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        require(learning_rate > 0.0, "optimizer: learning_rate must be > 0");
        require(weight_decay >= 0.0, "optimizer: weight_decay must be >= 0");
        require(adam_beta1 > 0.0 && adam_beta1 < 1.0, "optimizer: adam_beta1 must be in (0,1)");
        require(adam_beta2 > 0.0 && adam_beta2 < 1.0, "optimizer: adam_beta2 must be in (0,1)");
        require(adam_eps > 0.0, "optimizer: adam_eps must be > 0");
    }
};

// Linear warmup multiplier, reaching 1 at warmup_iters and staying there.
inline double warmup_factor(std::uint64_t step, std::size_t warmup_iters) {
    if (warmup_iters == 0) return 1.0;
    return std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_iters));
}

// First and second moment estimates, one pair per parameter tensor, in the
// same order the tensors were registered.
template <typename T>
struct AdamState {
    std::vector<Matrix<T>> m;
    std::vector<Matrix<T>> v;
    std::uint64_t steps = 0;

    bool empty() const { return m.empty(); }
};

template <typename T>
AdamState<T> make_adam_state(const std::vector<const Matrix<T>*>& params) {
    AdamState<T> s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto* p : params) {
        require(p != nullptr, "adam state: null parameter");
        s.m.emplace_back(p->rows(), p->cols());
        s.v.emplace_back(p->rows(), p->cols());
    }
    return s;
}

// One decoupled-weight-decay Adam update on a single tensor. step is
// 1-based; the learning rate is scaled by the warmup factor, decay
// multiplies the incoming parameter value rather than entering the moments.
template <typename T>
void adamw_update_tensor(Matrix<T>& p, const Matrix<T>& g, Matrix<T>& m, Matrix<T>& v,
                         const OptimizerConfig& cfg, std::uint64_t step, bool decay) {
    require(step >= 1, "adamw: step must be >= 1");
    require(p.rows() == g.rows() && p.cols() == g.cols(), "adamw: grad shape mismatch");
    require(p.rows() == m.rows() && p.cols() == m.cols(), "adamw: state shape mismatch");
    require(p.rows() == v.rows() && p.cols() == v.cols(), "adamw: state shape mismatch");

    const double lr_eff = cfg.learning_rate * warmup_factor(step, cfg.warmup_iters);
    const double bias1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
    const double wd = decay ? cfg.weight_decay : 0.0;

    T* pd = p.data();
    const T* gd = g.data();
    T* md = m.data();
    T* vd = v.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(gd[i]);
        const double mi = cfg.adam_beta1 * static_cast<double>(md[i]) + (1.0 - cfg.adam_beta1) * gi;
        const double vi =
            cfg.adam_beta2 * static_cast<double>(vd[i]) + (1.0 - cfg.adam_beta2) * gi * gi;
        md[i] = static_cast<T>(mi);
        vd[i] = static_cast<T>(vi);
        const double mhat = mi / bias1;
        const double vhat = vi / bias2;
        const double update =
            mhat / (std::sqrt(vhat) + cfg.adam_eps) + wd * static_cast<double>(pd[i]);
        pd[i] = static_cast<T>(static_cast<double>(pd[i]) - lr_eff * update);
    }
}

// Vector form over a parameter group. decay_mask (optional) switches weight
// decay per tensor; bias-like tensors are normally excluded.
template <typename T>
void adamw_step(const std::vector<Matrix<T>*>& params, const std::vector<const Matrix<T>*>& grads,
                AdamState<T>& state, const OptimizerConfig& cfg, std::uint64_t step,
                const std::vector<std::uint8_t>* decay_mask = nullptr) {
    cfg.validate();
    require(step >= 1, "adamw_step: step must be >= 1");
    require(params.size() == grads.size(), "adamw_step: params/grads count mismatch");
    require(params.size() == state.m.size(), "adamw_step: state tensor count mismatch");
    require(decay_mask == nullptr || decay_mask->size() == params.size(),
            "adamw_step: decay mask count mismatch");

    for (std::size_t t = 0; t < params.size(); ++t) {
        require(params[t] != nullptr && grads[t] != nullptr, "adamw_step: null tensor");
        const bool decay = decay_mask == nullptr || (*decay_mask)[t];
        adamw_update_tensor(*params[t], *grads[t], state.m[t], state.v[t], cfg, step, decay);
    }
    state.steps = step;
}

// Euclidean norm over a whole gradient set, accumulated in double.
template <typename T>
double global_grad_norm(const std::vector<Matrix<T>>& grads) {
    double sq = 0.0;
    for (const auto& g : grads) {
        const T* gd = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = static_cast<double>(gd[i]);
            sq += x * x;
        }
    }
    return std::sqrt(sq);
}

// Scales all gradients by max_norm/norm when the global norm exceeds
// max_norm. max_norm <= 0 disables clipping. Returns the pre-clip norm.
template <typename T>
double clip_global_norm(std::vector<Matrix<T>>& grads, double max_norm) {
    const double norm = global_grad_norm(grads);
    if (max_norm <= 0.0 || norm <= max_norm || norm == 0.0) return norm;
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& g : grads) {
        T* gd = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) gd[i] *= scale;
    }
    return norm;
}

}  // namespace dualenc
