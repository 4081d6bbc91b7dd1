#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "matrix.hpp"
#include "rng.hpp"
#include "vocab.hpp"

namespace dualenc {

struct Attribute {
    std::string object;
    std::string color;
    std::string position;
    double salience = 1.0;
};

struct SceneSpec {
    int scene_id = 0;
    std::vector<Attribute> attributes;  // index 0 is most salient
    std::size_t primary_count = 0;
};

struct CaptionPair {
    std::string long_text;   // every attribute, with color and position
    std::string short_text;  // first primary_count attributes, no positions
};

struct GenConfig {
    std::size_t n_attributes = 7;
    std::size_t primary_count = 2;
    // Scenes come in sibling groups: the first shared_count attributes are
    // identical across the group, the rest differ per sibling. Keeping
    // shared_count above primary_count pushes all distinguishing tokens
    // beyond the short-caption content.
    std::size_t shared_count = 3;
    std::size_t group_size = 4;
    std::size_t grid = 4;
    std::size_t channels = 12;
    double kernel_sigma = 0.7;

    void validate() const {
        require(n_attributes >= 1, "GenConfig: need at least one attribute");
        require(primary_count >= 1 && primary_count <= n_attributes,
                "GenConfig: primary_count must be in [1, n_attributes]");
        require(group_size >= 1, "GenConfig: group_size must be positive");
        require(grid == 4, "GenConfig: only the 4x4 grid has position words");
        require(channels >= 2, "GenConfig: need at least 2 image channels");
        require(n_attributes <= grid * grid, "GenConfig: more attributes than grid cells");
    }

    std::size_t effective_shared() const {
        std::size_t s = shared_count;
        if (s < primary_count) s = primary_count;
        if (s > n_attributes) s = n_attributes;
        return s;
    }
};

struct GeneratedScene {
    SceneSpec spec;
    CaptionPair captions;
    Matrix<float> image;  // grid*grid rows (row-major cells) x channels
};

namespace detail {

// Content vector for a single word, stable across datasets and seeds.
inline std::vector<double> token_vector(const std::string& token, std::size_t channels) {
    Rng rng(Rng::seed_mix(0x746f6b76u, token));
    std::vector<double> v(channels);
    double sq = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        sq += x * x;
    }
    const double inv = 1.0 / std::sqrt(std::max(sq, 1e-12));
    for (auto& x : v) x *= inv;
    return v;
}

inline std::vector<std::size_t> sample_distinct(Rng& rng, std::size_t pool, std::size_t k) {
    require(k <= pool, "sample_distinct: pool too small");
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    // partial Fisher-Yates: only the first k slots are needed
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

inline std::string render_long(const SceneSpec& spec) {
    std::string out = "a photo of";
    for (std::size_t i = 0; i < spec.attributes.size(); ++i) {
        const Attribute& a = spec.attributes[i];
        out += (i == 0) ? " a " : " and a ";
        out += a.color + " " + a.object + " in the " + a.position;
    }
    return out;
}

inline std::string render_short(const SceneSpec& spec) {
    std::string out = "a photo of";
    for (std::size_t i = 0; i < spec.primary_count; ++i) {
        const Attribute& a = spec.attributes[i];
        out += (i == 0) ? " a " : " and a ";
        out += a.color + " " + a.object;
    }
    return out;
}

inline Matrix<float> render_image(const SceneSpec& spec, const GenConfig& cfg) {
    const std::size_t g = cfg.grid;
    const std::size_t c = cfg.channels;
    Matrix<double> acc(g * g, c);
    const auto& positions = wordlists::positions();
    for (const Attribute& attr : spec.attributes) {
        std::vector<double> color_v = token_vector(attr.color, c);
        std::vector<double> object_v = token_vector(attr.object, c);
        std::vector<double> content(c);
        double sq = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            content[j] = color_v[j] + object_v[j];
            sq += content[j] * content[j];
        }
        const double inv = attr.salience / std::sqrt(std::max(sq, 1e-12));
        for (std::size_t j = 0; j < c; ++j) content[j] *= inv;

        std::size_t cell = 0;
        for (; cell < positions.size(); ++cell)
            if (attr.position == positions[cell]) break;
        require(cell < positions.size(), "render_image: unknown position word");
        const double pr = static_cast<double>(cell / g);
        const double pc = static_cast<double>(cell % g);
        const double denom = 2.0 * cfg.kernel_sigma * cfg.kernel_sigma;
        for (std::size_t x = 0; x < g; ++x) {
            for (std::size_t y = 0; y < g; ++y) {
                const double dx = static_cast<double>(x) - pr;
                const double dy = static_cast<double>(y) - pc;
                const double w = std::exp(-(dx * dx + dy * dy) / denom);
                double* row = acc.row_ptr(x * g + y);
                for (std::size_t j = 0; j < c; ++j) row[j] += w * content[j];
            }
        }
    }
    return cast_matrix<double, float>(acc);
}

}  // namespace detail

// Deterministic under seed. Scenes are emitted in sibling groups; all draws
// come from the "data" substream in a fixed order.
inline std::vector<GeneratedScene> generate_dataset(std::uint64_t seed, std::size_t n_scenes,
                                                    const GenConfig& cfg = GenConfig{}) {
    require(n_scenes >= 1, "generate_dataset: n_scenes must be positive");
    cfg.validate();
    const std::size_t shared = cfg.effective_shared();
    const std::size_t tail = cfg.n_attributes - shared;
    const auto& objects = wordlists::objects();
    const auto& colors = wordlists::colors();
    const auto& positions = wordlists::positions();
    require(shared + tail * cfg.group_size <= objects.size(),
            "generate_dataset: object pool too small for group structure");

    Rng rng = Rng(seed).stream("data");
    std::vector<GeneratedScene> out;
    out.reserve(n_scenes);

    for (std::size_t base = 0; base < n_scenes; base += cfg.group_size) {
        const std::size_t gsize = std::min(cfg.group_size, n_scenes - base);

        // one draw of distinct objects covers the shared block and every
        // sibling's tail block, so no scene repeats an object
        const std::size_t total_objects = shared + tail * gsize;
        std::vector<std::size_t> obj_idx =
            detail::sample_distinct(rng, objects.size(), total_objects);

        std::vector<std::string> shared_colors(shared);
        for (auto& col : shared_colors) col = colors[rng.below(colors.size())];
        std::vector<std::size_t> shared_cells =
            detail::sample_distinct(rng, positions.size(), shared);

        for (std::size_t s = 0; s < gsize; ++s) {
            SceneSpec spec;
            spec.scene_id = static_cast<int>(base + s);
            spec.primary_count = cfg.primary_count;
            for (std::size_t i = 0; i < shared; ++i) {
                Attribute a;
                a.object = objects[obj_idx[i]];
                a.color = shared_colors[i];
                a.position = positions[shared_cells[i]];
                a.salience = std::pow(0.9, static_cast<double>(i));
                spec.attributes.push_back(std::move(a));
            }
            // tail cells avoid the shared cells; remaining pool re-indexed
            std::vector<std::size_t> free_cells;
            for (std::size_t cell = 0; cell < positions.size(); ++cell) {
                bool used = false;
                for (std::size_t sc : shared_cells) used = used || (sc == cell);
                if (!used) free_cells.push_back(cell);
            }
            std::vector<std::size_t> tail_pick =
                detail::sample_distinct(rng, free_cells.size(), tail);
            for (std::size_t j = 0; j < tail; ++j) {
                Attribute a;
                a.object = objects[obj_idx[shared + j * gsize + s]];
                a.color = colors[rng.below(colors.size())];
                a.position = positions[free_cells[tail_pick[j]]];
                a.salience = std::pow(0.9, static_cast<double>(shared + j));
                spec.attributes.push_back(std::move(a));
            }

            GeneratedScene scene;
            scene.captions.long_text = detail::render_long(spec);
            scene.captions.short_text = detail::render_short(spec);
            scene.image = detail::render_image(spec, cfg);
            scene.spec = std::move(spec);
            out.push_back(std::move(scene));
        }
    }
    return out;
}

}  // namespace dualenc
