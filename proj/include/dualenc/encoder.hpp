#pragma once

// Dual text/image encoder at toy scale. Both towers are pre-layer-norm
// transformer stacks sharing an embedding space: the text side consumes
// token ids plus absolute positional rows and pools at the EOT position,
// the image side consumes a flattened cell grid and mean-pools. Outputs are
// unit-normalized rows of a shared d_embed space.

#include <dualenc/matrix.hpp>
#include <dualenc/pe_stretch.hpp>
#include <dualenc/rng.hpp>
#include <dualenc/tape.hpp>
#include <dualenc/vocab.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dualenc {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t context_len = 77;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_embed = 64;
    std::size_t image_grid = 4;      // g: image is a g*g cell grid
    std::size_t image_channels = 12; // feature channels per cell
    std::uint64_t init_seed = 0;
    double temperature_init = 2.659260036932778;  // ln(1/0.07)

    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t grid_cells() const { return image_grid * image_grid; }

    void validate() const {
        require(vocab_size > Vocabulary::reserved_count, "config: vocab_size too small");
        require(context_len >= 3, "config: context_len must be >= 3");
        require(d_model > 0 && n_layers > 0 && n_heads > 0, "config: zero-sized model");
        require(d_model % n_heads == 0, "config: d_model must be divisible by n_heads");
        require(d_embed >= 8, "config: d_embed must be >= 8");
        require(image_grid > 0 && image_channels > 0, "config: zero-sized image input");
    }
};

template <typename T>
struct LayerParams {
    Matrix<T> ln1_gain, ln1_bias;
    Matrix<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Matrix<T> ln2_gain, ln2_bias;
    Matrix<T> w1, b1, w2, b2;
};

template <typename T>
struct TowerParams {
    std::vector<LayerParams<T>> layers;
    Matrix<T> ln_f_gain, ln_f_bias;
    Matrix<T> proj;  // d_model x d_embed
};

template <typename T>
struct DualEncoder {
    ModelConfig config;

    Matrix<T> token_embedding;    // vocab_size x d_model
    PositionalTable<T> text_pos;  // context_len x d_model
    TowerParams<T> text;

    Matrix<T> image_input_w;  // image_channels x d_model
    Matrix<T> image_input_b;  // 1 x d_model
    Matrix<T> image_pos;      // grid_cells x d_model
    TowerParams<T> image;

    Matrix<T> temperature;  // 1x1 log-scale t; exp(t) clamped to [1, 100] in logits

    // Single authority on parameter order and naming; checkpoint layout and
    // optimizer state follow this order.
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        visit(*this, fn);
    }
    template <typename Fn>
    void for_each_param(Fn&& fn) const {
        visit(*this, fn);
    }

  private:
    template <typename Self, typename Fn>
    static void visit(Self& m, Fn& fn) {
        fn("text.token_embedding", m.token_embedding);
        fn("text.pos_embedding", m.text_pos.table);
        visit_tower(m.text, "text", fn);
        fn("image.input.weight", m.image_input_w);
        fn("image.input.bias", m.image_input_b);
        fn("image.pos_embedding", m.image_pos);
        visit_tower(m.image, "image", fn);
        fn("temperature", m.temperature);
    }

    template <typename Tower, typename Fn>
    static void visit_tower(Tower& t, const std::string& prefix, Fn& fn) {
        for (std::size_t i = 0; i < t.layers.size(); ++i) {
            auto& L = t.layers[i];
            const std::string p = prefix + ".layers." + std::to_string(i) + ".";
            fn(p + "ln1.gain", L.ln1_gain);
            fn(p + "ln1.bias", L.ln1_bias);
            fn(p + "attn.q.weight", L.wq);
            fn(p + "attn.q.bias", L.bq);
            fn(p + "attn.k.weight", L.wk);
            fn(p + "attn.k.bias", L.bk);
            fn(p + "attn.v.weight", L.wv);
            fn(p + "attn.v.bias", L.bv);
            fn(p + "attn.out.weight", L.wo);
            fn(p + "attn.out.bias", L.bo);
            fn(p + "ln2.gain", L.ln2_gain);
            fn(p + "ln2.bias", L.ln2_bias);
            fn(p + "mlp.fc1.weight", L.w1);
            fn(p + "mlp.fc1.bias", L.b1);
            fn(p + "mlp.fc2.weight", L.w2);
            fn(p + "mlp.fc2.bias", L.b2);
        }
        fn(prefix + ".ln_f.gain", t.ln_f_gain);
        fn(prefix + ".ln_f.bias", t.ln_f_bias);
        fn(prefix + ".projection", t.proj);
    }
};

namespace detail {

template <typename T>
void allocate_tower(TowerParams<T>& t, const ModelConfig& cfg) {
    t.layers.resize(cfg.n_layers);
    for (auto& L : t.layers) {
        L.ln1_gain = Matrix<T>(1, cfg.d_model);
        L.ln1_bias = Matrix<T>(1, cfg.d_model);
        L.wq = Matrix<T>(cfg.d_model, cfg.d_model);
        L.bq = Matrix<T>(1, cfg.d_model);
        L.wk = Matrix<T>(cfg.d_model, cfg.d_model);
        L.bk = Matrix<T>(1, cfg.d_model);
        L.wv = Matrix<T>(cfg.d_model, cfg.d_model);
        L.bv = Matrix<T>(1, cfg.d_model);
        L.wo = Matrix<T>(cfg.d_model, cfg.d_model);
        L.bo = Matrix<T>(1, cfg.d_model);
        L.ln2_gain = Matrix<T>(1, cfg.d_model);
        L.ln2_bias = Matrix<T>(1, cfg.d_model);
        L.w1 = Matrix<T>(cfg.d_model, 4 * cfg.d_model);
        L.b1 = Matrix<T>(1, 4 * cfg.d_model);
        L.w2 = Matrix<T>(4 * cfg.d_model, cfg.d_model);
        L.b2 = Matrix<T>(1, cfg.d_model);
    }
    t.ln_f_gain = Matrix<T>(1, cfg.d_model);
    t.ln_f_bias = Matrix<T>(1, cfg.d_model);
    t.proj = Matrix<T>(cfg.d_model, cfg.d_embed);
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

// Allocates every tensor at its contracted shape, zero filled.
template <typename T>
DualEncoder<T> allocate_model(const ModelConfig& cfg) {
    cfg.validate();
    DualEncoder<T> m;
    m.config = cfg;
    m.token_embedding = Matrix<T>(cfg.vocab_size, cfg.d_model);
    m.text_pos.table = Matrix<T>(cfg.context_len, cfg.d_model);
    detail::allocate_tower(m.text, cfg);
    m.image_input_w = Matrix<T>(cfg.image_channels, cfg.d_model);
    m.image_input_b = Matrix<T>(1, cfg.d_model);
    m.image_pos = Matrix<T>(cfg.grid_cells(), cfg.d_model);
    detail::allocate_tower(m.image, cfg);
    m.temperature = Matrix<T>(1, 1);
    return m;
}

// Allocates and seeds a model. Every tensor draws from its own named stream of
// init_seed, so adding or reordering tensors never shifts another tensor's
// values. Embedding tables use std 0.02, weights std 1/sqrt(fan_in), biases 0,
// layer-norm gains 1.
template <typename T>
DualEncoder<T> init_model(const ModelConfig& cfg) {
    DualEncoder<T> m = allocate_model<T>(cfg);

    m.for_each_param([&](const std::string& name, Matrix<T>& p) {
        Rng rng(Rng::seed_mix(cfg.init_seed, "init/" + name));
        if (name == "temperature") {
            p(0, 0) = static_cast<T>(cfg.temperature_init);
        } else if (detail::ends_with(name, ".bias")) {
            // stays zero
        } else if (detail::ends_with(name, ".gain")) {
            for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] = T(1);
        } else if (name.find("embedding") != std::string::npos) {
            p = rng.template normal_matrix<T>(p.rows(), p.cols(), 0.0, 0.02);
        } else {
            const double std = 1.0 / std::sqrt(static_cast<double>(p.rows()));
            p = rng.template normal_matrix<T>(p.rows(), p.cols(), 0.0, std);
        }
    });
    return m;
}

// Node ids of every parameter inside one tape, in for_each_param order.
struct LayerNodes {
    std::size_t ln1_gain, ln1_bias;
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_gain, ln2_bias;
    std::size_t w1, b1, w2, b2;
};

struct TowerNodes {
    std::vector<LayerNodes> layers;
    std::size_t ln_f_gain, ln_f_bias, proj;
};

struct ModelNodes {
    std::size_t token_embedding, text_pos;
    TowerNodes text;
    std::size_t image_input_w, image_input_b, image_pos;
    TowerNodes image;
    std::size_t temperature;
    std::vector<std::size_t> ordered;  // matches for_each_param order
};

// Registers every parameter on the tape. trainable=true creates leaves (grads
// tracked); false creates constants for inference-only graphs. A positional
// table marked non-trainable stays a constant either way.
template <typename T>
ModelNodes make_model_nodes(Tape<T>& tape, const DualEncoder<T>& model, bool trainable) {
    ModelNodes n;
    std::vector<std::size_t> flat;
    model.for_each_param([&](const std::string& name, const Matrix<T>& p) {
        bool train_this = trainable;
        if (name == "text.pos_embedding" && !model.text_pos.trainable) train_this = false;
        flat.push_back(train_this ? tape.leaf(p) : tape.constant(p));
    });
    n.ordered = flat;

    std::size_t i = 0;
    auto take = [&]() { return flat[i++]; };
    auto take_tower = [&](TowerNodes& t) {
        t.layers.resize(model.config.n_layers);
        for (auto& L : t.layers) {
            L.ln1_gain = take();
            L.ln1_bias = take();
            L.wq = take();
            L.bq = take();
            L.wk = take();
            L.bk = take();
            L.wv = take();
            L.bv = take();
            L.wo = take();
            L.bo = take();
            L.ln2_gain = take();
            L.ln2_bias = take();
            L.w1 = take();
            L.b1 = take();
            L.w2 = take();
            L.b2 = take();
        }
        t.ln_f_gain = take();
        t.ln_f_bias = take();
        t.proj = take();
    };
    n.token_embedding = take();
    n.text_pos = take();
    take_tower(n.text);
    n.image_input_w = take();
    n.image_input_b = take();
    n.image_pos = take();
    take_tower(n.image);
    n.temperature = take();
    require(i == flat.size(), "model nodes: parameter walk out of sync");
    return n;
}

namespace detail {

template <typename T>
std::size_t transformer_block(Tape<T>& tape, const LayerNodes& L, std::size_t x,
                              std::size_t n_heads, std::size_t head_dim) {
    auto h = tape.layer_norm(x, L.ln1_gain, L.ln1_bias);
    auto q = tape.add_rowvec(tape.matmul(h, L.wq), L.bq);
    auto k = tape.add_rowvec(tape.matmul(h, L.wk), L.bk);
    auto v = tape.add_rowvec(tape.matmul(h, L.wv), L.bv);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<std::size_t> heads;
    heads.reserve(n_heads);
    for (std::size_t i = 0; i < n_heads; ++i) {
        auto qh = tape.slice_cols(q, i * head_dim, head_dim);
        auto kh = tape.slice_cols(k, i * head_dim, head_dim);
        auto vh = tape.slice_cols(v, i * head_dim, head_dim);
        auto scores = tape.scale_const(tape.matmul(qh, kh, false, true), inv_sqrt);
        heads.push_back(tape.matmul(tape.row_softmax(scores), vh));
    }
    auto ctx = tape.concat_cols(heads);
    auto attn_out = tape.add_rowvec(tape.matmul(ctx, L.wo), L.bo);
    x = tape.add(x, attn_out);
    auto h2 = tape.layer_norm(x, L.ln2_gain, L.ln2_bias);
    auto mid = tape.gelu(tape.add_rowvec(tape.matmul(h2, L.w1), L.b1));
    auto mlp_out = tape.add_rowvec(tape.matmul(mid, L.w2), L.b2);
    return tape.add(x, mlp_out);
}

}  // namespace detail

// Builds the text tower over a batch of variable-length sequences. Each
// sequence runs at its natural length (no padding, attention over all its
// tokens), is pooled at the final (EOT) row, then the batch is projected and
// unit-normalized together. Returns the node of the n x d_embed embedding
// matrix.
template <typename T>
std::size_t encode_text_graph(Tape<T>& tape, const ModelNodes& nodes, const ModelConfig& cfg,
                              const std::vector<TokenSequence>& seqs) {
    require(!seqs.empty(), "encode_text: empty batch");
    const std::size_t pe_len = tape.value(nodes.text_pos).rows();
    std::vector<std::size_t> pooled;
    pooled.reserve(seqs.size());
    for (const auto& seq : seqs) {
        const std::size_t len = seq.ids.size();
        require(len >= 2, "encode_text: sequence needs at least BOS and EOT");
        require(len <= cfg.context_len && len <= pe_len,
                "encode_text: sequence length " + std::to_string(len) +
                    " exceeds context " + std::to_string(std::min(cfg.context_len, pe_len)));
        std::vector<std::size_t> idx(len);
        for (std::size_t i = 0; i < len; ++i) {
            require(seq.ids[i] >= 0 && static_cast<std::size_t>(seq.ids[i]) < cfg.vocab_size,
                    "encode_text: token id out of vocabulary");
            idx[i] = static_cast<std::size_t>(seq.ids[i]);
        }
        auto x = tape.add(tape.gather_rows(nodes.token_embedding, idx),
                          tape.slice_rows(nodes.text_pos, 0, len));
        for (const auto& L : nodes.text.layers)
            x = detail::transformer_block(tape, L, x, cfg.n_heads, cfg.head_dim());
        x = tape.layer_norm(x, nodes.text.ln_f_gain, nodes.text.ln_f_bias);
        pooled.push_back(tape.gather_rows(x, {len - 1}));
    }
    auto stacked = pooled.size() == 1 ? pooled[0] : tape.vstack(pooled);
    return tape.row_l2_normalize(tape.matmul(stacked, nodes.text.proj));
}

// Image tower over a batch of grid images (each grid_cells x image_channels).
// Cells are projected into the model width, offset by per-cell positional
// rows, run through the blocks, then mean-pooled.
template <typename T>
std::size_t encode_image_graph(Tape<T>& tape, const ModelNodes& nodes, const ModelConfig& cfg,
                               const std::vector<Matrix<T>>& images) {
    require(!images.empty(), "encode_image: empty batch");
    std::vector<std::size_t> pooled;
    pooled.reserve(images.size());
    for (const auto& img : images) {
        require(img.rows() == cfg.grid_cells() && img.cols() == cfg.image_channels,
                "encode_image: grid shape mismatch, got " + std::to_string(img.rows()) + "x" +
                    std::to_string(img.cols()));
        auto cells = tape.constant(img);
        auto x = tape.add(tape.add_rowvec(tape.matmul(cells, nodes.image_input_w),
                                          nodes.image_input_b),
                          nodes.image_pos);
        for (const auto& L : nodes.image.layers)
            x = detail::transformer_block(tape, L, x, cfg.n_heads, cfg.head_dim());
        x = tape.layer_norm(x, nodes.image.ln_f_gain, nodes.image.ln_f_bias);
        pooled.push_back(tape.mean_rows(x));
    }
    auto stacked = pooled.size() == 1 ? pooled[0] : tape.vstack(pooled);
    return tape.row_l2_normalize(tape.matmul(stacked, nodes.image.proj));
}

// Replaces the positional table with its stretched version and widens the
// model's context to match. Other parameters are untouched.
template <typename T>
void stretch_model(DualEncoder<T>& model, const StretchSpec& spec) {
    model.text_pos = apply_stretch(model.text_pos, spec);
    model.config.context_len = model.text_pos.length();
}

// Single-input conveniences over frozen weights; each builds a throwaway
// inference graph. Batched evaluation should reuse one tape via the _graph
// builders instead.
template <typename T>
Matrix<T> encode_text(const DualEncoder<T>& model, const TokenSequence& tokens) {
    Tape<T> tape;
    ModelNodes nodes = make_model_nodes(tape, model, false);
    auto out = encode_text_graph(tape, nodes, model.config, {tokens});
    return tape.value(out);
}

template <typename T>
Matrix<T> encode_image(const DualEncoder<T>& model, const Matrix<T>& image) {
    Tape<T> tape;
    ModelNodes nodes = make_model_nodes(tape, model, false);
    auto out = encode_image_graph(tape, nodes, model.config, {image});
    return tape.value(out);
}

// Embeds many inputs through frozen weights, a bounded chunk per graph.
// Output row i is input i's embedding.
template <typename T>
Matrix<T> embed_text_batch(const DualEncoder<T>& model, const std::vector<TokenSequence>& seqs,
                           std::size_t chunk = 64) {
    require(chunk >= 1, "embed_text_batch: chunk must be >= 1");
    Matrix<T> out(seqs.size(), model.config.d_embed);
    for (std::size_t start = 0; start < seqs.size(); start += chunk) {
        const std::size_t stop = std::min(seqs.size(), start + chunk);
        Tape<T> tape;
        ModelNodes nodes = make_model_nodes(tape, model, false);
        std::vector<TokenSequence> part(seqs.begin() + static_cast<std::ptrdiff_t>(start),
                                        seqs.begin() + static_cast<std::ptrdiff_t>(stop));
        const Matrix<T>& emb = tape.value(encode_text_graph(tape, nodes, model.config, part));
        for (std::size_t r = 0; r < emb.rows(); ++r)
            for (std::size_t c = 0; c < emb.cols(); ++c) out(start + r, c) = emb(r, c);
    }
    return out;
}

template <typename T>
Matrix<T> embed_image_batch(const DualEncoder<T>& model, const std::vector<Matrix<T>>& images,
                            std::size_t chunk = 64) {
    require(chunk >= 1, "embed_image_batch: chunk must be >= 1");
    Matrix<T> out(images.size(), model.config.d_embed);
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const std::size_t stop = std::min(images.size(), start + chunk);
        Tape<T> tape;
        ModelNodes nodes = make_model_nodes(tape, model, false);
        std::vector<Matrix<T>> part(images.begin() + static_cast<std::ptrdiff_t>(start),
                                    images.begin() + static_cast<std::ptrdiff_t>(stop));
        const Matrix<T>& emb = tape.value(encode_image_graph(tape, nodes, model.config, part));
        for (std::size_t r = 0; r < emb.rows(); ++r)
            for (std::size_t c = 0; c < emb.cols(); ++c) out(start + r, c) = emb(r, c);
    }
    return out;
}

}  // namespace dualenc
