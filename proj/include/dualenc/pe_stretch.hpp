#pragma once

// Positional-embedding table and the two stretching procedures that extend it
// to longer contexts: plain fixed-ratio interpolation and keep-prefix
// stretching (first `keep` rows copied bit-exactly, the rest interpolated at a
// larger ratio).

#include <dualenc/matrix.hpp>

#include <cmath>
#include <cstddef>
#include <string>

namespace dualenc {

template <typename T>
struct PositionalTable {
    Matrix<T> table;        // row pos = embedding for position pos
    bool trainable = true;  // stretched tables stay trainable by default

    std::size_t length() const { return table.rows(); }
    std::size_t dim() const { return table.cols(); }
};

enum class StretchMode { linear, kps };

struct StretchSpec {
    StretchMode mode = StretchMode::kps;
    double ratio = 1.0;      // >= 1
    std::size_t keep = 20;   // kps only; ignored for linear

    void validate(std::size_t source_len) const {
        require(ratio >= 1.0, "stretch: ratio must be >= 1, got " + std::to_string(ratio));
        if (mode == StretchMode::kps) {
            require(keep > 0, "stretch: keep must be positive");
            require(keep < source_len, "stretch: keep " + std::to_string(keep) +
                                           " must be below source length " +
                                           std::to_string(source_len));
        }
    }
};

inline StretchMode parse_stretch_mode(const std::string& s) {
    if (s == "linear") return StretchMode::linear;
    if (s == "kps") return StretchMode::kps;
    throw contract_error("stretch: unknown mode '" + s + "' (expected linear or kps)");
}

inline std::string stretch_mode_name(StretchMode m) {
    return m == StretchMode::linear ? "linear" : "kps";
}

namespace detail {

// Interpolated row: out = (1-alpha) * src[i0] + alpha * src[i1], computed with
// std::lerp so each entry stays inside [min, max] of the two source entries.
// alpha == 0 short-circuits to a bit-exact copy of row i0.
template <typename T>
void lerp_row(const Matrix<T>& src, std::size_t i0, std::size_t i1, double alpha, Matrix<T>& dst,
              std::size_t out_row) {
    if (alpha == 0.0 || i0 == i1) {
        for (std::size_t j = 0; j < src.cols(); ++j) dst(out_row, j) = src(i0, j);
        return;
    }
    for (std::size_t j = 0; j < src.cols(); ++j) {
        double v = std::lerp(static_cast<double>(src(i0, j)), static_cast<double>(src(i1, j)),
                             alpha);
        dst(out_row, j) = static_cast<T>(v);
    }
}

}  // namespace detail

// Fixed-ratio interpolation. Output length floor(source_len * ratio); output
// row pos reads source coordinate pos / ratio. Integer coordinates (ratio 1 in
// particular) copy source rows bit-exactly.
template <typename T>
PositionalTable<T> linear_stretch(const PositionalTable<T>& pe, double ratio) {
    require(ratio >= 1.0, "linear_stretch: ratio must be >= 1");
    ensure_finite(pe.table, "linear_stretch input");
    const std::size_t src_len = pe.table.rows();
    require(src_len > 0, "linear_stretch: empty table");

    const std::size_t out_len = static_cast<std::size_t>(std::floor(src_len * ratio));
    PositionalTable<T> out;
    out.trainable = pe.trainable;
    out.table = Matrix<T>(out_len, pe.table.cols());
    for (std::size_t pos = 0; pos < out_len; ++pos) {
        const double u = static_cast<double>(pos) / ratio;
        std::size_t i0 = static_cast<std::size_t>(std::floor(u));
        if (i0 >= src_len) i0 = src_len - 1;
        const double alpha = u - static_cast<double>(i0);
        const std::size_t i1 = std::min(i0 + 1, src_len - 1);
        detail::lerp_row(pe.table, i0, i1, alpha, out.table, pos);
    }
    return out;
}

// Keep-prefix stretching. Rows below `keep` are copied bit-exactly; the tail
// is interpolated at `ratio` through the shifted source coordinate
// s = keep + (pos - keep) / ratio. Output length keep + (source_len - keep) * ratio.
template <typename T>
PositionalTable<T> kps_stretch(const PositionalTable<T>& pe, std::size_t keep, double ratio) {
    const std::size_t src_len = pe.table.rows();
    require(keep > 0 && keep < src_len, "kps_stretch: keep must be in (0, source_len)");
    require(ratio >= 1.0, "kps_stretch: ratio must be >= 1");
    ensure_finite(pe.table, "kps_stretch input");

    const std::size_t out_len =
        keep + static_cast<std::size_t>(std::floor(static_cast<double>(src_len - keep) * ratio));
    PositionalTable<T> out;
    out.trainable = pe.trainable;
    out.table = Matrix<T>(out_len, pe.table.cols());
    for (std::size_t pos = 0; pos < keep; ++pos)
        for (std::size_t j = 0; j < pe.table.cols(); ++j) out.table(pos, j) = pe.table(pos, j);
    for (std::size_t pos = keep; pos < out_len; ++pos) {
        const double s =
            static_cast<double>(keep) + static_cast<double>(pos - keep) / ratio;
        std::size_t i0 = static_cast<std::size_t>(std::floor(s));
        if (i0 >= src_len) i0 = src_len - 1;
        const double alpha = s - static_cast<double>(i0);
        const std::size_t i1 = std::min(i0 + 1, src_len - 1);
        detail::lerp_row(pe.table, i0, i1, alpha, out.table, pos);
    }
    return out;
}

template <typename T>
PositionalTable<T> apply_stretch(const PositionalTable<T>& pe, const StretchSpec& spec) {
    spec.validate(pe.table.rows());
    if (spec.mode == StretchMode::linear) return linear_stretch(pe, spec.ratio);
    return kps_stretch(pe, spec.keep, spec.ratio);
}

}  // namespace dualenc
