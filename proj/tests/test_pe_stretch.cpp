#include <catch2/catch_amalgamated.hpp>

#include <dualenc/pe_stretch.hpp>
#include <dualenc/rng.hpp>

#include <algorithm>
#include <limits>

using dualenc::Matrix;
using dualenc::PositionalTable;
using dualenc::StretchMode;
using dualenc::StretchSpec;

namespace {

PositionalTable<double> random_table(std::uint64_t seed, std::size_t rows, std::size_t cols) {
    dualenc::Rng rng(seed);
    PositionalTable<double> pe;
    pe.table = rng.normal_matrix<double>(rows, cols, 0.0, 1.0);
    return pe;
}

}  // namespace

TEST_CASE("ratio one is a bit-exact identity for both modes") {
    auto pe = random_table(3, 77, 16);
    auto lin = dualenc::linear_stretch(pe, 1.0);
    REQUIRE(lin.table == pe.table);
    auto kps = dualenc::kps_stretch(pe, 20, 1.0);
    REQUIRE(kps.table == pe.table);
}

TEST_CASE("stretched lengths: 77 rows give 231 linear, 248 keep-prefix") {
    auto pe = random_table(5, 77, 8);
    REQUIRE(dualenc::linear_stretch(pe, 3.0).table.rows() == 231);
    REQUIRE(dualenc::kps_stretch(pe, 20, 4.0).table.rows() == 248);
}

TEST_CASE("linear interpolation midpoint: ratio 2, output row 3 mixes rows 1 and 2") {
    auto pe = random_table(7, 10, 6);
    auto out = dualenc::linear_stretch(pe, 2.0);
    REQUIRE(out.table.rows() == 20);
    for (std::size_t j = 0; j < 6; ++j) {
        double expect = 0.5 * pe.table(1, j) + 0.5 * pe.table(2, j);
        REQUIRE(out.table(3, j) == Catch::Approx(expect).margin(1e-12));
    }
    // even rows are direct copies
    for (std::size_t pos = 0; pos < 10; ++pos)
        for (std::size_t j = 0; j < 6; ++j) REQUIRE(out.table(2 * pos, j) == pe.table(pos, j));
}

TEST_CASE("keep-prefix stretch: first rows bit-exact, row 21 mixes rows 20 and 21") {
    auto pe = random_table(11, 77, 12);
    auto out = dualenc::kps_stretch(pe, 20, 4.0);
    for (std::size_t pos = 0; pos < 20; ++pos)
        for (std::size_t j = 0; j < 12; ++j) REQUIRE(out.table(pos, j) == pe.table(pos, j));
    for (std::size_t j = 0; j < 12; ++j) {
        double expect = 0.75 * pe.table(20, j) + 0.25 * pe.table(21, j);
        REQUIRE(out.table(21, j) == Catch::Approx(expect).margin(1e-12));
    }
}

TEST_CASE("every output entry stays within the bracketing source rows") {
    dualenc::Rng seeds(99);
    for (int trial = 0; trial < 20; ++trial) {
        auto pe = random_table(seeds.next_u64(), 5 + seeds.below(60), 1 + seeds.below(24));
        const double ratio = 1.0 + 4.0 * seeds.uniform();
        const std::size_t keep = 1 + seeds.below(pe.table.rows() - 1);
        for (const auto& out :
             {dualenc::linear_stretch(pe, ratio), dualenc::kps_stretch(pe, keep, ratio)}) {
            for (std::size_t j = 0; j < pe.table.cols(); ++j) {
                double lo = std::numeric_limits<double>::infinity(), hi = -lo;
                for (std::size_t i = 0; i < pe.table.rows(); ++i) {
                    lo = std::min(lo, pe.table(i, j));
                    hi = std::max(hi, pe.table(i, j));
                }
                for (std::size_t i = 0; i < out.table.rows(); ++i) {
                    REQUIRE(out.table(i, j) >= lo);
                    REQUIRE(out.table(i, j) <= hi);
                }
            }
        }
    }
}

TEST_CASE("keep equal to source_len-1 only appends copies of the last row") {
    auto pe = random_table(13, 10, 4);
    auto out = dualenc::kps_stretch(pe, 9, 3.0);
    REQUIRE(out.table.rows() == 12);
    for (std::size_t pos = 0; pos < 9; ++pos)
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(out.table(pos, j) == pe.table(pos, j));
    for (std::size_t pos = 9; pos < 12; ++pos)
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(out.table(pos, j) == pe.table(9, j));
}

TEST_CASE("invalid stretch parameters are rejected") {
    auto pe = random_table(17, 8, 4);
    REQUIRE_THROWS_AS(dualenc::linear_stretch(pe, 0.5), dualenc::contract_error);
    REQUIRE_THROWS_AS(dualenc::kps_stretch(pe, 8, 2.0), dualenc::contract_error);
    REQUIRE_THROWS_AS(dualenc::kps_stretch(pe, 0, 2.0), dualenc::contract_error);
    StretchSpec bad;
    bad.ratio = 0.0;
    REQUIRE_THROWS_AS(dualenc::apply_stretch(pe, bad), dualenc::contract_error);
}

TEST_CASE("apply_stretch dispatches on mode and keeps the trainable flag") {
    auto pe = random_table(19, 77, 4);
    pe.trainable = false;
    StretchSpec lin{StretchMode::linear, 3.0, 20};
    StretchSpec kps{StretchMode::kps, 4.0, 20};
    auto a = dualenc::apply_stretch(pe, lin);
    auto b = dualenc::apply_stretch(pe, kps);
    REQUIRE(a.table.rows() == 231);
    REQUIRE(b.table.rows() == 248);
    REQUIRE_FALSE(a.trainable);
    REQUIRE_FALSE(b.trainable);
    REQUIRE(a.table == dualenc::linear_stretch(pe, 3.0).table);
    REQUIRE(b.table == dualenc::kps_stretch(pe, 20, 4.0).table);
}

TEST_CASE("mode names parse and print round-trip") {
    REQUIRE(dualenc::parse_stretch_mode("linear") == StretchMode::linear);
    REQUIRE(dualenc::parse_stretch_mode("kps") == StretchMode::kps);
    REQUIRE(dualenc::stretch_mode_name(StretchMode::kps) == "kps");
    REQUIRE_THROWS_AS(dualenc::parse_stretch_mode("cubic"), dualenc::contract_error);
}

TEST_CASE("float tables keep the preserved prefix bit-exact") {
    dualenc::Rng rng(23);
    PositionalTable<float> pe;
    pe.table = rng.normal_matrix<float>(77, 8, 0.0, 0.02);
    auto out = dualenc::kps_stretch(pe, 20, 4.0);
    for (std::size_t pos = 0; pos < 20; ++pos)
        for (std::size_t j = 0; j < 8; ++j) REQUIRE(out.table(pos, j) == pe.table(pos, j));
}
