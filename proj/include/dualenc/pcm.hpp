#pragma once

// Primary-component machinery and the contrastive objectives built on it.
// A feature batch can be decomposed into principal directions of its own
// spread, filtered to the top-k, and reconstructed; coarse embeddings made
// this way anchor short-caption alignment while fine embeddings train on
// long captions. Also houses the three alternative short-preservation
// objectives used for comparison runs.

#include <dualenc/eig.hpp>
#include <dualenc/matrix.hpp>
#include <dualenc/tape.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace dualenc {

template <typename T>
struct FeatureBatch {
    Matrix<T> features;      // n x d, rows are per-sample embeddings
    bool normalized = false;

    std::size_t count() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }

    void validate() const {
        require(features.rows() >= 1, "FeatureBatch: empty batch");
        ensure_finite(features, "FeatureBatch");
        if (normalized) {
            for (std::size_t i = 0; i < features.rows(); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < features.cols(); ++j)
                    s += static_cast<double>(features(i, j)) * features(i, j);
                require(std::abs(std::sqrt(s) - 1.0) <= 1e-6,
                        "FeatureBatch: row " + std::to_string(i) + " is not unit norm");
            }
        }
    }
};

template <typename T>
FeatureBatch<T> make_feature_batch(Matrix<T> features, bool normalized) {
    FeatureBatch<T> b{std::move(features), normalized};
    b.validate();
    return b;
}

template <typename T>
struct ComponentDecomposition {
    Matrix<T> mean;            // 1 x d
    Matrix<T> components;      // d x m, orthonormal columns, importance-descending
    std::vector<T> importances;  // m entries, >= 0, descending
    Matrix<T> projections;     // n x m, per-sample coordinates

    std::size_t component_count() const { return components.cols(); }
};

struct LossConfig {
    double alpha_loss = 0.1;           // coarse-term weight
    std::size_t k_components = 32;     // kept principal directions
    bool symmetric = true;             // average both retrieval directions
    double temperature_clamp_max = 100.0;  // upper clamp on exp(t)
    double beta_bound = 1.0;           // weight of the bounded variant's penalty

    void validate() const {
        require(alpha_loss >= 0.0, "LossConfig: alpha_loss must be >= 0");
        require(k_components >= 1, "LossConfig: k_components must be >= 1");
        require(temperature_clamp_max >= 1.0, "LossConfig: clamp max below lower clamp 1");
        require(beta_bound >= 0.0, "LossConfig: beta_bound must be >= 0");
    }
};

// Principal directions of the batch spread. Covariance is taken across the
// batch population: C = Xc^T Xc / (n-1) over centered rows. Keeps
// m = min(d, n-1) pairs; eigenvalues are clamped at zero (round-off only).
template <typename T>
ComponentDecomposition<T> decompose(const FeatureBatch<T>& batch) {
    batch.validate();
    const std::size_t n = batch.count(), d = batch.dim();
    require(n >= 2, "decompose: need at least 2 samples for a covariance");

    ComponentDecomposition<T> dec;
    dec.mean = Matrix<T>(1, d);
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(batch.features(i, j));
        dec.mean(0, j) = static_cast<T>(s / static_cast<double>(n));
    }
    Matrix<T> centered(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            centered(i, j) = batch.features(i, j) - dec.mean(0, j);

    Matrix<T> cov = matmul(centered, centered, true, false);
    const T inv = static_cast<T>(1.0 / static_cast<double>(n - 1));
    for (std::size_t i = 0; i < cov.size(); ++i) cov.data()[i] *= inv;

    EigenResult<T> eig = sym_eig(cov);
    const std::size_t m = std::min(d, n - 1);
    dec.components = Matrix<T>(d, m);
    dec.importances.resize(m);
    for (std::size_t t = 0; t < m; ++t) {
        dec.importances[t] = std::max(eig.values[t], T(0));
        for (std::size_t j = 0; j < d; ++j) dec.components(j, t) = eig.vectors(j, t);
    }
    dec.projections = matmul(centered, dec.components);
    return dec;
}

// Keeps the first min(k, m) components; oversize k saturates.
template <typename T>
ComponentDecomposition<T> filter_components(const ComponentDecomposition<T>& dec, std::size_t k) {
    require(k >= 1, "filter_components: k must be >= 1");
    const std::size_t m = dec.component_count();
    const std::size_t k_eff = std::min(k, m);
    if (k_eff == m) return dec;
    ComponentDecomposition<T> out;
    out.mean = dec.mean;
    out.components = Matrix<T>(dec.components.rows(), k_eff);
    out.importances.assign(dec.importances.begin(), dec.importances.begin() + k_eff);
    out.projections = Matrix<T>(dec.projections.rows(), k_eff);
    for (std::size_t j = 0; j < k_eff; ++j) {
        for (std::size_t i = 0; i < dec.components.rows(); ++i)
            out.components(i, j) = dec.components(i, j);
        for (std::size_t i = 0; i < dec.projections.rows(); ++i)
            out.projections(i, j) = dec.projections(i, j);
    }
    return out;
}

// Reconstruction without the final normalization: coordinates back through
// the kept directions, mean restored.
template <typename T>
Matrix<T> reconstruct_raw(const ComponentDecomposition<T>& dec) {
    Matrix<T> out = matmul(dec.projections, dec.components, false, true);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += dec.mean(0, j);
    return out;
}

template <typename T>
FeatureBatch<T> reconstruct(const ComponentDecomposition<T>& dec) {
    Matrix<T> out = reconstruct_raw(dec);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < out.cols(); ++j)
            s += static_cast<double>(out(i, j)) * out(i, j);
        const double norm = std::sqrt(s) + 1e-12;
        for (std::size_t j = 0; j < out.cols(); ++j)
            out(i, j) = static_cast<T>(out(i, j) / norm);
    }
    return FeatureBatch<T>{std::move(out), true};
}

template <typename T>
FeatureBatch<T> primary_component_extract(const FeatureBatch<T>& batch, std::size_t k) {
    return reconstruct(filter_components(decompose(batch), k));
}

// Frozen per-step basis for the in-graph coarse path: gradients never flow
// through mean or components, only through the sample coordinates.
template <typename T>
struct PceBasis {
    Matrix<T> mean;        // 1 x d
    Matrix<T> components;  // d x k_eff
};

template <typename T>
PceBasis<T> compute_pce_basis(const Matrix<T>& features, std::size_t k) {
    auto dec = filter_components(decompose(FeatureBatch<T>{features, false}), k);
    return PceBasis<T>{std::move(dec.mean), std::move(dec.components)};
}

// Coarse features inside a graph: center by the frozen mean, project onto the
// frozen components and back, restore the mean, re-normalize.
template <typename T>
std::size_t pce_graph(Tape<T>& tape, std::size_t features, const PceBasis<T>& basis) {
    Matrix<T> neg_mean = basis.mean;
    for (std::size_t j = 0; j < neg_mean.size(); ++j) neg_mean.data()[j] = -neg_mean.data()[j];
    auto centered = tape.add_rowvec(features, tape.constant(std::move(neg_mean)));
    auto comp = tape.constant(basis.components);
    auto coords = tape.matmul(centered, comp);
    auto recon = tape.matmul(coords, comp, false, true);
    auto restored = tape.add_rowvec(recon, tape.constant(basis.mean));
    return tape.row_l2_normalize(restored);
}

// Diagonal-label contrastive loss over cosine logits. Logits are scaled by
// exp(t) clamped to [1, clamp_max]; the symmetric flag averages the
// image-to-text and text-to-image directions.
template <typename T>
std::size_t contrastive_graph(Tape<T>& tape, std::size_t img, std::size_t txt, std::size_t temp,
                              const LossConfig& cfg) {
    auto logits = tape.matmul(img, txt, false, true);
    auto scale = tape.temp_scale(temp, 1.0, cfg.temperature_clamp_max);
    auto scaled = tape.scale_by_scalar(logits, scale);
    auto fwd = tape.cross_entropy_diag(scaled);
    if (!cfg.symmetric) return fwd;
    auto bwd = tape.cross_entropy_diag(tape.transpose_op(scaled));
    return tape.scale_const(tape.add(fwd, bwd), 0.5);
}

// Component nodes of a composite objective; absent parts are npos. `total`
// is what backward() runs on, the parts exist for logging.
struct LossNodes {
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::size_t total = npos;
    std::size_t fine = npos;
    std::size_t coarse = npos;
    std::size_t penalty = npos;
};

// loss_fine on long captions plus alpha times loss_coarse on the
// primary-component image features against short captions. The basis is
// computed by the caller (normally from the current fine features) and held
// constant through the backward pass.
template <typename T>
LossNodes dual_loss_parts(Tape<T>& tape, std::size_t img_fine, std::size_t txt_long,
                          std::size_t txt_short, std::size_t temp, const LossConfig& cfg,
                          const PceBasis<T>& basis) {
    cfg.validate();
    LossNodes out;
    out.fine = contrastive_graph(tape, img_fine, txt_long, temp, cfg);
    out.coarse =
        contrastive_graph(tape, pce_graph(tape, img_fine, basis), txt_short, temp, cfg);
    out.total = tape.add(out.fine, tape.scale_const(out.coarse, cfg.alpha_loss));
    return out;
}

template <typename T>
std::size_t dual_loss_graph(Tape<T>& tape, std::size_t img_fine, std::size_t txt_long,
                            std::size_t txt_short, std::size_t temp, const LossConfig& cfg,
                            const PceBasis<T>& basis) {
    return dual_loss_parts(tape, img_fine, txt_long, txt_short, temp, cfg, basis).total;
}

// Alternative A: score the same image features against both caption sets,
// with no coarse projection.
template <typename T>
LossNodes undistinguished_loss_parts(Tape<T>& tape, std::size_t img_fine, std::size_t txt_long,
                                     std::size_t txt_short, std::size_t temp,
                                     const LossConfig& cfg) {
    cfg.validate();
    LossNodes out;
    out.fine = contrastive_graph(tape, img_fine, txt_long, temp, cfg);
    out.coarse = contrastive_graph(tape, img_fine, txt_short, temp, cfg);
    out.total = tape.add(out.fine, tape.scale_const(out.coarse, cfg.alpha_loss));
    return out;
}

template <typename T>
std::size_t undistinguished_loss_graph(Tape<T>& tape, std::size_t img_fine, std::size_t txt_long,
                                       std::size_t txt_short, std::size_t temp,
                                       const LossConfig& cfg) {
    return undistinguished_loss_parts(tape, img_fine, txt_long, txt_short, temp, cfg).total;
}

// Alternative B: plain contrastive loss where the caller already substituted
// a seeded fraction of long captions with their short forms.
template <typename T>
LossNodes mixed_length_loss_parts(Tape<T>& tape, std::size_t img_fine, std::size_t txt_mixed,
                                  std::size_t temp, const LossConfig& cfg) {
    cfg.validate();
    LossNodes out;
    out.fine = contrastive_graph(tape, img_fine, txt_mixed, temp, cfg);
    out.total = out.fine;
    return out;
}

template <typename T>
std::size_t mixed_length_loss_graph(Tape<T>& tape, std::size_t img_fine, std::size_t txt_mixed,
                                    std::size_t temp, const LossConfig& cfg) {
    return mixed_length_loss_parts(tape, img_fine, txt_mixed, temp, cfg).total;
}

// Alternative C: long-caption contrastive loss plus a bounded drift penalty
// keeping current short-caption embeddings near the ones from a frozen
// reference encoder.
template <typename T>
LossNodes bounded_loss_parts(Tape<T>& tape, std::size_t img_fine, std::size_t txt_long,
                             std::size_t txt_short_current, std::size_t temp,
                             const Matrix<T>& txt_short_frozen, const LossConfig& cfg) {
    cfg.validate();
    require(!txt_short_frozen.empty(), "bounded loss: missing frozen reference embeddings");
    LossNodes out;
    out.fine = contrastive_graph(tape, img_fine, txt_long, temp, cfg);
    out.penalty = tape.smooth_l1_mean(txt_short_current, tape.constant(txt_short_frozen));
    out.total = tape.add(out.fine, tape.scale_const(out.penalty, cfg.beta_bound));
    return out;
}

template <typename T>
std::size_t bounded_loss_graph(Tape<T>& tape, std::size_t img_fine, std::size_t txt_long,
                               std::size_t txt_short_current, std::size_t temp,
                               const Matrix<T>& txt_short_frozen, const LossConfig& cfg) {
    return bounded_loss_parts(tape, img_fine, txt_long, txt_short_current, temp,
                              txt_short_frozen, cfg)
        .total;
}

namespace detail {

template <typename T>
std::size_t constant_batch(Tape<T>& tape, const FeatureBatch<T>& b, const char* who) {
    b.validate();
    require(b.normalized, std::string(who) + ": features must be normalized");
    return tape.constant(b.features);
}

}  // namespace detail

// Plain (non-graph) evaluations share the graph implementation exactly.
template <typename T>
double contrastive_loss(const FeatureBatch<T>& img, const FeatureBatch<T>& txt, double t,
                        const LossConfig& cfg = {}) {
    require(img.count() == txt.count(), "contrastive_loss: batch size mismatch");
    require(img.dim() == txt.dim(), "contrastive_loss: embedding width mismatch");
    Tape<T> tape;
    auto i = detail::constant_batch(tape, img, "contrastive_loss");
    auto x = detail::constant_batch(tape, txt, "contrastive_loss");
    auto temp = tape.constant(Matrix<T>::full(1, 1, static_cast<T>(t)));
    return static_cast<double>(tape.value(contrastive_graph(tape, i, x, temp, cfg))(0, 0));
}

template <typename T>
double dual_loss(const FeatureBatch<T>& img_fine, const FeatureBatch<T>& txt_long,
                 const FeatureBatch<T>& txt_short, const LossConfig& cfg, double t) {
    require(img_fine.count() == txt_long.count() && img_fine.count() == txt_short.count(),
            "dual_loss: batch size mismatch");
    require(img_fine.count() >= 2, "dual_loss: need at least 2 pairs");
    Tape<T> tape;
    auto i = detail::constant_batch(tape, img_fine, "dual_loss");
    auto tl = detail::constant_batch(tape, txt_long, "dual_loss");
    auto ts = detail::constant_batch(tape, txt_short, "dual_loss");
    auto temp = tape.constant(Matrix<T>::full(1, 1, static_cast<T>(t)));
    auto basis = compute_pce_basis(img_fine.features, cfg.k_components);
    return static_cast<double>(
        tape.value(dual_loss_graph(tape, i, tl, ts, temp, cfg, basis))(0, 0));
}

enum class AltStrategy { undistinguished, mixed_length, bounded };

inline AltStrategy parse_alt_strategy(const std::string& s) {
    if (s == "undistinguished") return AltStrategy::undistinguished;
    if (s == "mixed_length") return AltStrategy::mixed_length;
    if (s == "bounded") return AltStrategy::bounded;
    throw contract_error("unknown alternative strategy '" + s + "'");
}

inline std::string alt_strategy_name(AltStrategy v) {
    switch (v) {
        case AltStrategy::undistinguished: return "undistinguished";
        case AltStrategy::mixed_length: return "mixed_length";
        case AltStrategy::bounded: return "bounded";
    }
    throw contract_error("alt_strategy_name: bad enum");
}

// Plain evaluation of the alternatives. mixed_length expects the caller to
// pass the already-substituted caption batch as txt_long; bounded requires
// frozen reference embeddings for the short captions.
template <typename T>
double alt_strategy_loss(AltStrategy variant, const FeatureBatch<T>& img_fine,
                         const FeatureBatch<T>& txt_long, const FeatureBatch<T>& txt_short,
                         const LossConfig& cfg, double t,
                         const Matrix<T>* txt_short_frozen = nullptr) {
    require(img_fine.count() == txt_long.count(), "alt_strategy_loss: batch size mismatch");
    Tape<T> tape;
    auto i = detail::constant_batch(tape, img_fine, "alt_strategy_loss");
    auto tl = detail::constant_batch(tape, txt_long, "alt_strategy_loss");
    auto temp = tape.constant(Matrix<T>::full(1, 1, static_cast<T>(t)));
    std::size_t loss;
    switch (variant) {
        case AltStrategy::undistinguished: {
            auto ts = detail::constant_batch(tape, txt_short, "alt_strategy_loss");
            loss = undistinguished_loss_graph(tape, i, tl, ts, temp, cfg);
            break;
        }
        case AltStrategy::mixed_length:
            loss = mixed_length_loss_graph(tape, i, tl, temp, cfg);
            break;
        case AltStrategy::bounded: {
            require(txt_short_frozen != nullptr,
                    "alt_strategy_loss: bounded variant needs a frozen reference");
            auto ts = detail::constant_batch(tape, txt_short, "alt_strategy_loss");
            loss = bounded_loss_graph(tape, i, tl, ts, temp, *txt_short_frozen, cfg);
            break;
        }
        default: throw contract_error("alt_strategy_loss: bad variant");
    }
    return static_cast<double>(tape.value(loss)(0, 0));
}

}  // namespace dualenc
