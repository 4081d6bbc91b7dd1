#include <catch2/catch_amalgamated.hpp>

#include <dualenc/gradcheck.hpp>
#include <dualenc/pcm.hpp>
#include <dualenc/rng.hpp>

#include "support/svd_oracle.hpp"

#include <cmath>
#include <vector>

using dualenc::ComponentDecomposition;
using dualenc::FeatureBatch;
using dualenc::LossConfig;
using dualenc::Matrix;
using dualenc::Rng;
using dualenc::Tape;

namespace {

Matrix<double> unit_rows(Matrix<double> m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * m(i, j);
        const double norm = std::sqrt(s);
        for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) /= norm;
    }
    return m;
}

FeatureBatch<double> random_unit_batch(std::uint64_t seed, std::size_t n, std::size_t d) {
    Rng rng(seed);
    return {unit_rows(rng.normal_matrix<double>(n, d, 0.0, 1.0)), true};
}

Matrix<double> centered(const Matrix<double>& x) {
    Matrix<double> out = x;
    for (std::size_t j = 0; j < x.cols(); ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) mu += x(i, j);
        mu /= static_cast<double>(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i) out(i, j) -= mu;
    }
    return out;
}

double frob2(const Matrix<double>& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) s += m.storage()[i] * m.storage()[i];
    return s;
}

}  // namespace

TEST_CASE("decompose: identical rows have zero importances and mean equal to the row") {
    Matrix<double> x(5, 3);
    for (std::size_t i = 0; i < 5; ++i) {
        x(i, 0) = 0.6;
        x(i, 1) = 0.0;
        x(i, 2) = 0.8;
    }
    auto dec = dualenc::decompose(FeatureBatch<double>{x, true});
    REQUIRE(dec.component_count() == 3);
    for (double v : dec.importances) REQUIRE(v <= 1e-12);
    REQUIRE(dec.mean(0, 0) == Catch::Approx(0.6).margin(1e-12));
    REQUIRE(dec.mean(0, 2) == Catch::Approx(0.8).margin(1e-12));
}

TEST_CASE("decompose: collinear points yield one informative direction") {
    Matrix<double> x(3, 2);
    const double dir[2] = {3.0 / 5.0, 4.0 / 5.0};
    const double ts[3] = {-1.0, 0.25, 1.5};
    for (std::size_t i = 0; i < 3; ++i) {
        x(i, 0) = 0.1 + ts[i] * dir[0];
        x(i, 1) = -0.2 + ts[i] * dir[1];
    }
    auto dec = dualenc::decompose(FeatureBatch<double>{x, false});
    REQUIRE(dec.component_count() == 2);
    REQUIRE(dec.importances[1] <= 1e-10);
    const double cosine =
        std::abs(dec.components(0, 0) * dir[0] + dec.components(1, 0) * dir[1]);
    REQUIRE(cosine == Catch::Approx(1.0).margin(1e-6));

    auto top = dualenc::filter_components(dec, 1);
    REQUIRE(top.component_count() == 1);
    REQUIRE(std::abs(top.components(0, 0) * dir[0] + top.components(1, 0) * dir[1]) ==
            Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("decompose importances equal scaled squared singular values") {
    auto batch = random_unit_batch(91, 8, 4);
    auto dec = dualenc::decompose(batch);
    auto svd = testsupport::jacobi_svd(centered(batch.features));
    REQUIRE(dec.component_count() == 4);
    for (std::size_t t = 0; t < 4; ++t) {
        const double expect = svd.sigma[t] * svd.sigma[t] / 7.0;
        REQUIRE(dec.importances[t] == Catch::Approx(expect).margin(1e-8));
    }
}

TEST_CASE("decompose rejects single-sample batches") {
    REQUIRE_THROWS_AS(dualenc::decompose(random_unit_batch(1, 1, 4)), dualenc::contract_error);
}

TEST_CASE("filter_components saturates and truncates") {
    auto dec = dualenc::decompose(random_unit_batch(5, 12, 6));
    REQUIRE(dualenc::filter_components(dec, 99).component_count() == dec.component_count());
    auto cut = dualenc::filter_components(dec, 2);
    REQUIRE(cut.component_count() == 2);
    REQUIRE(cut.importances[0] == dec.importances[0]);
    REQUIRE(cut.importances[1] == dec.importances[1]);
    REQUIRE(cut.projections.cols() == 2);
    REQUIRE_THROWS_AS(dualenc::filter_components(dec, 0), dualenc::contract_error);
}

TEST_CASE("a 256x64 batch keeps exactly 32 components at k=32") {
    auto dec = dualenc::decompose(random_unit_batch(17, 256, 64));
    REQUIRE(dec.component_count() == 64);
    REQUIRE(dualenc::filter_components(dec, 32).component_count() == 32);
}

TEST_CASE("full-rank reconstruction recovers a normalized batch") {
    auto batch = random_unit_batch(23, 8, 4);
    auto rebuilt = dualenc::reconstruct(dualenc::decompose(batch));
    REQUIRE(rebuilt.normalized);
    for (std::size_t i = 0; i < batch.features.size(); ++i)
        REQUIRE(rebuilt.features.storage()[i] ==
                Catch::Approx(batch.features.storage()[i]).margin(1e-5));
}

TEST_CASE("zero-variance batch reconstructs to the normalized mean") {
    Matrix<double> x(4, 3);
    for (std::size_t i = 0; i < 4; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = 2.0;
        x(i, 2) = 2.0;
    }
    auto out = dualenc::reconstruct(dualenc::decompose(FeatureBatch<double>{x, false}));
    for (std::size_t i = 0; i < 4; ++i) {
        REQUIRE(out.features(i, 0) == Catch::Approx(1.0 / 3.0).margin(1e-9));
        REQUIRE(out.features(i, 1) == Catch::Approx(2.0 / 3.0).margin(1e-9));
        REQUIRE(out.features(i, 2) == Catch::Approx(2.0 / 3.0).margin(1e-9));
    }
}

TEST_CASE("rank-k residual equals the importance tail") {
    auto batch = random_unit_batch(29, 10, 6);
    auto dec = dualenc::decompose(batch);
    for (std::size_t k = 1; k <= dec.component_count(); ++k) {
        auto raw = dualenc::reconstruct_raw(dualenc::filter_components(dec, k));
        Matrix<double> resid = dualenc::sub(batch.features, raw);
        double tail = 0.0;
        for (std::size_t t = k; t < dec.component_count(); ++t)
            tail += dec.importances[t] * 9.0;  // (n-1) = 9
        REQUIRE(frob2(resid) == Catch::Approx(tail).margin(1e-6));
    }
}

TEST_CASE("reconstruction error is non-increasing in k") {
    auto batch = random_unit_batch(31, 12, 8);
    auto dec = dualenc::decompose(batch);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= dec.component_count(); ++k) {
        auto raw = dualenc::reconstruct_raw(dualenc::filter_components(dec, k));
        const double err = frob2(dualenc::sub(batch.features, raw));
        REQUIRE(err <= prev + 1e-10);
        prev = err;
    }
}

TEST_CASE("primary component extraction equals the truncated-SVD oracle") {
    Rng seeds(37);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 6 + seeds.below(12);
        const std::size_t d = 3 + seeds.below(10);
        const std::size_t k = 1 + seeds.below(d);
        auto batch = random_unit_batch(seeds.next_u64(), n, d);

        auto mine = dualenc::reconstruct_raw(
            dualenc::filter_components(dualenc::decompose(batch), k));

        auto svd = testsupport::jacobi_svd(centered(batch.features));
        auto oracle = testsupport::truncated_reconstruction(svd, std::min(k, n - 1));
        for (std::size_t j = 0; j < d; ++j) {
            double mu = 0.0;
            for (std::size_t i = 0; i < n; ++i) mu += batch.features(i, j);
            mu /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) oracle(i, j) += mu;
        }
        REQUIRE(dualenc::max_abs(dualenc::sub(mine, oracle)) < 1e-6);
    }
}

TEST_CASE("oversize k makes extraction an identity on normalized batches") {
    auto batch = random_unit_batch(41, 9, 5);
    auto out = dualenc::primary_component_extract(batch, 64);
    for (std::size_t i = 0; i < batch.features.size(); ++i)
        REQUIRE(out.features.storage()[i] ==
                Catch::Approx(batch.features.storage()[i]).margin(1e-5));
}

TEST_CASE("extraction suppresses a low-variance outlier direction") {
    // seven rows spread inside span(e0,e1), one row pointing along e3
    Rng rng(43);
    Matrix<double> x(8, 4);
    for (std::size_t i = 0; i < 7; ++i) {
        const double a = rng.normal(), b = rng.normal();
        const double norm = std::sqrt(a * a + b * b);
        x(i, 0) = a / norm;
        x(i, 1) = b / norm;
    }
    x(7, 3) = 1.0;
    FeatureBatch<double> batch{x, true};
    auto coarse = dualenc::primary_component_extract(batch, 2);
    auto cosine = [&](std::size_t i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) s += coarse.features(i, j) * x(i, j);
        return s;
    };
    double worst_inlier = 1.0;
    for (std::size_t i = 0; i < 7; ++i) worst_inlier = std::min(worst_inlier, cosine(i));
    REQUIRE(cosine(7) < worst_inlier);
}

TEST_CASE("extraction applied twice stays near the once-extracted batch") {
    // premise: the batch variance is already concentrated in k directions, so
    // the first extraction is near-lossless and the second changes little
    Rng rng(47);
    const std::size_t n = 16, d = 8, k = 4;
    auto span = rng.normal_matrix<double>(d, k, 0.0, 1.0);
    Matrix<double> x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> z(k);
        for (auto& v : z) v = 0.002 * rng.normal();
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.3;  // common offset keeps the mean informative
            for (std::size_t t = 0; t < k; ++t) s += span(j, t) * z[t];
            x(i, j) = s + 1e-6 * rng.normal();
        }
    }
    FeatureBatch<double> batch{unit_rows(x), true};
    auto once = dualenc::primary_component_extract(batch, k);
    auto twice = dualenc::primary_component_extract(once, k);
    REQUIRE(dualenc::max_abs(dualenc::sub(twice.features, once.features)) < 1e-5);
}

TEST_CASE("extraction is permutation-equivariant") {
    auto batch = random_unit_batch(53, 6, 4);
    std::vector<std::size_t> perm = {4, 2, 0, 5, 1, 3};
    Matrix<double> permuted(6, 4);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 4; ++j) permuted(i, j) = batch.features(perm[i], j);

    auto a = dualenc::primary_component_extract(batch, 2);
    auto b = dualenc::primary_component_extract(FeatureBatch<double>{permuted, true}, 2);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            REQUIRE(b.features(i, j) == Catch::Approx(a.features(perm[i], j)).margin(1e-9));
}

TEST_CASE("contrastive loss closed forms") {
    LossConfig cfg;
    const double t100 = std::log(100.0);

    // single pair: only one class, zero loss
    Matrix<double> one(1, 4);
    one(0, 0) = 1.0;
    REQUIRE(dualenc::contrastive_loss(FeatureBatch<double>{one, true},
                                      FeatureBatch<double>{one, true}, t100, cfg) == 0.0);

    // orthonormal matched pair at scale 100: essentially zero
    auto eye = Matrix<double>::identity(2);
    FeatureBatch<double> ib{eye, true};
    REQUIRE(dualenc::contrastive_loss(ib, ib, t100, cfg) < 1e-10);

    // swapped pair: near the worst case, ~100 per direction
    Matrix<double> swapped(2, 2);
    swapped(0, 1) = 1.0;
    swapped(1, 0) = 1.0;
    REQUIRE(dualenc::contrastive_loss(ib, FeatureBatch<double>{swapped, true}, t100, cfg) ==
            Catch::Approx(100.0).margin(0.01));
}

TEST_CASE("uniform logits give exactly log n") {
    LossConfig cfg;
    for (std::size_t n : {2u, 4u}) {
        Matrix<double> rows(n, 3);
        for (std::size_t i = 0; i < n; ++i) rows(i, 0) = 1.0;  // identical unit rows
        FeatureBatch<double> b{rows, true};
        const double loss = dualenc::contrastive_loss(b, b, std::log(5.0), cfg);
        REQUIRE(loss == Catch::Approx(std::log(static_cast<double>(n))).margin(1e-12));
    }
}

TEST_CASE("contrastive loss is nonnegative and permutation-invariant") {
    LossConfig cfg;
    auto img = random_unit_batch(59, 6, 8);
    auto txt = random_unit_batch(61, 6, 8);
    const double base = dualenc::contrastive_loss(img, txt, 2.0, cfg);
    REQUIRE(base >= 0.0);

    std::vector<std::size_t> perm = {5, 0, 3, 1, 4, 2};
    Matrix<double> pi(6, 8), pt(6, 8);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            pi(i, j) = img.features(perm[i], j);
            pt(i, j) = txt.features(perm[i], j);
        }
    const double permuted = dualenc::contrastive_loss(FeatureBatch<double>{pi, true},
                                                      FeatureBatch<double>{pt, true}, 2.0, cfg);
    REQUIRE(permuted == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("pre-normalization scale does not change the loss") {
    LossConfig cfg;
    Rng rng(67);
    auto raw = rng.normal_matrix<double>(5, 6, 0.0, 1.0);
    auto scaled = dualenc::scale(raw, 7.5);
    auto txt = random_unit_batch(71, 5, 6);
    const double a = dualenc::contrastive_loss(FeatureBatch<double>{unit_rows(raw), true}, txt,
                                               1.5, cfg);
    const double b = dualenc::contrastive_loss(FeatureBatch<double>{unit_rows(scaled), true},
                                               txt, 1.5, cfg);
    REQUIRE(a == Catch::Approx(b).margin(1e-12));
}

TEST_CASE("contrastive loss rejects mismatched or unnormalized inputs") {
    LossConfig cfg;
    auto a = random_unit_batch(73, 4, 8);
    auto b = random_unit_batch(79, 5, 8);
    REQUIRE_THROWS_AS(dualenc::contrastive_loss(a, b, 1.0, cfg), dualenc::contract_error);

    auto c = random_unit_batch(83, 4, 8);
    c.normalized = false;
    REQUIRE_THROWS_AS(dualenc::contrastive_loss(a, c, 1.0, cfg), dualenc::contract_error);

    Matrix<double> off = a.features;
    off(0, 0) += 0.5;
    REQUIRE_THROWS_AS(
        dualenc::contrastive_loss(a, FeatureBatch<double>{off, true}, 1.0, cfg),
        dualenc::contract_error);
}

TEST_CASE("dual loss composition") {
    auto img = random_unit_batch(89, 8, 6);
    auto tl = random_unit_batch(97, 8, 6);
    auto ts = random_unit_batch(101, 8, 6);

    LossConfig zero;
    zero.alpha_loss = 0.0;
    zero.k_components = 4;
    REQUIRE(dualenc::dual_loss(img, tl, ts, zero, 1.7) ==
            Catch::Approx(dualenc::contrastive_loss(img, tl, 1.7, zero)).margin(1e-12));

    // oversize k and identical caption sets collapse to (1 + alpha) * fine
    LossConfig full;
    full.alpha_loss = 0.1;
    full.k_components = 64;
    const double fine = dualenc::contrastive_loss(img, tl, 1.7, full);
    REQUIRE(dualenc::dual_loss(img, tl, tl, full, 1.7) ==
            Catch::Approx(1.1 * fine).margin(1e-5));
}

TEST_CASE("dual loss gradients pass finite differences with the basis frozen") {
    Rng rng(103);
    Matrix<double> img_raw = rng.normal_matrix<double>(8, 6, 0.0, 1.0);
    Matrix<double> tl_raw = rng.normal_matrix<double>(8, 6, 0.0, 1.0);
    Matrix<double> ts_raw = rng.normal_matrix<double>(8, 6, 0.0, 1.0);
    Matrix<double> temp = Matrix<double>::full(1, 1, 2.0);

    LossConfig cfg;
    cfg.alpha_loss = 0.1;
    cfg.k_components = 4;

    const auto basis = dualenc::compute_pce_basis(unit_rows(img_raw), cfg.k_components);

    auto build = [&](bool trainable, std::vector<Matrix<double>>* grads) {
        Tape<double> tape;
        auto reg = [&](const Matrix<double>& m) {
            return trainable ? tape.leaf(m) : tape.constant(m);
        };
        auto img = tape.row_l2_normalize(reg(img_raw));
        auto tl = tape.row_l2_normalize(reg(tl_raw));
        auto ts = tape.row_l2_normalize(reg(ts_raw));
        auto tnode = reg(temp);
        auto loss = dualenc::dual_loss_graph(tape, img, tl, ts, tnode, cfg, basis);
        if (grads) {
            tape.backward(loss);
            // leaves are ids 0..3 in registration order
            grads->push_back(tape.grad(0));
            grads->push_back(tape.grad(2));
            grads->push_back(tape.grad(4));
            grads->push_back(tape.has_grad(6) ? tape.grad(6) : Matrix<double>::zeros(1, 1));
        }
        return tape.value(loss)(0, 0);
    };

    std::vector<Matrix<double>> analytic;
    build(true, &analytic);
    std::vector<Matrix<double>*> params = {&img_raw, &tl_raw, &ts_raw, &temp};
    auto f = [&]() { return build(false, nullptr); };
    auto res = dualenc::finite_diff_check(f, params, analytic, 7e-4);
    INFO("worst param " << res.worst_param << " entry " << res.worst_entry);
    REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("alternative objectives") {
    auto img = random_unit_batch(107, 6, 8);
    auto tl = random_unit_batch(109, 6, 8);
    auto ts = random_unit_batch(113, 6, 8);
    LossConfig cfg;
    cfg.alpha_loss = 0.1;

    // zero substitutions: mixed batch equals the long batch
    REQUIRE(dualenc::alt_strategy_loss(dualenc::AltStrategy::mixed_length, img, tl, ts, cfg,
                                       1.2) ==
            Catch::Approx(dualenc::contrastive_loss(img, tl, 1.2, cfg)).margin(1e-12));

    // frozen == current: the drift penalty vanishes
    REQUIRE(dualenc::alt_strategy_loss(dualenc::AltStrategy::bounded, img, tl, ts, cfg, 1.2,
                                       &ts.features) ==
            Catch::Approx(dualenc::contrastive_loss(img, tl, 1.2, cfg)).margin(1e-12));

    // identical caption sets: undistinguished collapses to (1 + alpha) * fine
    REQUIRE(dualenc::alt_strategy_loss(dualenc::AltStrategy::undistinguished, img, tl, tl, cfg,
                                       1.2) ==
            Catch::Approx(1.1 * dualenc::contrastive_loss(img, tl, 1.2, cfg)).margin(1e-12));

    REQUIRE_THROWS_AS(
        dualenc::alt_strategy_loss(dualenc::AltStrategy::bounded, img, tl, ts, cfg, 1.2),
        dualenc::contract_error);

    REQUIRE(dualenc::parse_alt_strategy("bounded") == dualenc::AltStrategy::bounded);
    REQUIRE(dualenc::alt_strategy_name(dualenc::AltStrategy::mixed_length) == "mixed_length");
    REQUIRE_THROWS_AS(dualenc::parse_alt_strategy("other"), dualenc::contract_error);
}
