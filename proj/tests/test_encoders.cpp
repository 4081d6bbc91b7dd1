#include <catch2/catch_amalgamated.hpp>

#include <dualenc/encoder.hpp>
#include <dualenc/gradcheck.hpp>

#include <cmath>
#include <set>
#include <string>
#include <vector>

using dualenc::DualEncoder;
using dualenc::Matrix;
using dualenc::ModelConfig;
using dualenc::ModelNodes;
using dualenc::Tape;
using dualenc::TokenSequence;
using dualenc::Vocabulary;

namespace {

Vocabulary tiny_vocab() {
    Vocabulary v;
    for (const char* w : {"red", "cat", "dog", "sits"}) v.add(w);
    return v;
}

ModelConfig tiny_config(const Vocabulary& v) {
    ModelConfig cfg;
    cfg.vocab_size = v.size();
    cfg.context_len = 12;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_embed = 8;
    cfg.image_grid = 2;
    cfg.image_channels = 3;
    cfg.init_seed = 42;
    return cfg;
}

ModelConfig default_config() {
    ModelConfig cfg;
    cfg.vocab_size = dualenc::build_vocabulary().size();
    cfg.init_seed = 7;
    return cfg;
}

double norm_of_row(const Matrix<double>& m, std::size_t r) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m(r, j) * m(r, j);
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("initialization fills every tensor by role") {
    auto cfg = default_config();
    auto m = dualenc::init_model<double>(cfg);

    REQUIRE(m.token_embedding.rows() == cfg.vocab_size);
    REQUIRE(m.text_pos.length() == 77);
    REQUIRE(m.image_pos.rows() == 16);
    REQUIRE(m.temperature(0, 0) == Catch::Approx(std::log(1.0 / 0.07)).epsilon(1e-12));

    std::size_t count = 0;
    std::set<std::string> names;
    m.for_each_param([&](const std::string& name, Matrix<double>& p) {
        ++count;
        REQUIRE(names.insert(name).second);  // unique names
        REQUIRE(p.size() > 0);
        if (name.ends_with(".bias"))
            for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(p.storage()[i] == 0.0);
        if (name.ends_with(".gain"))
            for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(p.storage()[i] == 1.0);
    });
    // 2 embedding tables + 2 towers of (16 per layer + 3) + 3 image input/pos + temperature
    REQUIRE(count == 2 + (16 * 2 + 3) + 3 + (16 * 2 + 3) + 1);

    // weight std lands near 1/sqrt(fan_in)
    double ss = 0.0;
    const auto& w = m.text.layers[0].wq;
    for (std::size_t i = 0; i < w.size(); ++i) ss += w.storage()[i] * w.storage()[i];
    const double std_measured = std::sqrt(ss / static_cast<double>(w.size()));
    REQUIRE(std_measured == Catch::Approx(1.0 / 8.0).epsilon(0.25));
}

TEST_CASE("initialization is seed-deterministic and seed-sensitive") {
    auto cfg = default_config();
    auto a = dualenc::init_model<double>(cfg);
    auto b = dualenc::init_model<double>(cfg);
    REQUIRE(a.token_embedding == b.token_embedding);
    REQUIRE(a.text.layers[1].w2 == b.text.layers[1].w2);

    cfg.init_seed = 8;
    auto c = dualenc::init_model<double>(cfg);
    REQUIRE_FALSE(a.token_embedding == c.token_embedding);
}

TEST_CASE("text embeddings are unit rows and bit-reproducible") {
    auto v = tiny_vocab();
    auto m = dualenc::init_model<double>(tiny_config(v));
    auto seq = dualenc::tokenize("red cat sits", v, 12);
    auto e1 = dualenc::encode_text(m, seq);
    auto e2 = dualenc::encode_text(m, seq);
    REQUIRE(e1.rows() == 1);
    REQUIRE(e1.cols() == 8);
    REQUIRE(norm_of_row(e1, 0) == Catch::Approx(1.0).margin(1e-6));
    REQUIRE(e1 == e2);
}

TEST_CASE("tokenizer truncation makes over-long captions collide") {
    auto v = tiny_vocab();
    auto cfg = tiny_config(v);
    auto m = dualenc::init_model<double>(cfg);
    std::string base = "red cat dog sits red cat dog sits red cat";
    auto s1 = dualenc::tokenize(base + " dog dog", v, cfg.context_len);
    auto s2 = dualenc::tokenize(base + " sits red", v, cfg.context_len);
    REQUIRE(s1.ids == s2.ids);
    REQUIRE(dualenc::encode_text(m, s1) == dualenc::encode_text(m, s2));
}

TEST_CASE("positional rows beyond the sequence length never matter") {
    auto v = tiny_vocab();
    auto m = dualenc::init_model<double>(tiny_config(v));
    auto seq = dualenc::tokenize("dog sits", v, 12);  // 4 tokens
    auto before = dualenc::encode_text(m, seq);
    for (std::size_t pos = seq.ids.size(); pos < m.text_pos.length(); ++pos)
        for (std::size_t j = 0; j < m.text_pos.dim(); ++j) m.text_pos.table(pos, j) += 123.0;
    REQUIRE(dualenc::encode_text(m, seq) == before);
}

TEST_CASE("keep-prefix stretch leaves short-caption embeddings bit-identical") {
    auto v = tiny_vocab();
    auto cfg = tiny_config(v);
    auto m = dualenc::init_model<double>(cfg);
    auto short_seq = dualenc::tokenize("red cat", v, 12);          // 4 tokens, below keep
    auto long_seq = dualenc::tokenize("red cat dog sits dog sits dog", v, 12);  // 9 tokens
    auto short_before = dualenc::encode_text(m, short_seq);
    auto long_before = dualenc::encode_text(m, long_seq);

    dualenc::StretchSpec spec{dualenc::StretchMode::kps, 2.0, 6};
    dualenc::stretch_model(m, spec);
    REQUIRE(m.config.context_len == 6 + 12);  // 6 kept + 6*2 interpolated

    REQUIRE(dualenc::encode_text(m, short_seq) == short_before);
    REQUIRE_FALSE(dualenc::encode_text(m, long_seq) == long_before);
}

TEST_CASE("image embeddings: unit norm, zero input allowed, position sensitivity") {
    auto v = tiny_vocab();
    auto cfg = tiny_config(v);
    auto m = dualenc::init_model<double>(cfg);

    auto zero = Matrix<double>::zeros(4, 3);
    auto e0 = dualenc::encode_image(m, zero);
    REQUIRE(norm_of_row(e0, 0) == Catch::Approx(1.0).margin(1e-6));

    dualenc::Rng rng(5);
    auto img = rng.normal_matrix<double>(4, 3, 0.0, 1.0);
    auto e1 = dualenc::encode_image(m, img);
    REQUIRE(norm_of_row(e1, 0) == Catch::Approx(1.0).margin(1e-6));

    auto swapped = img;
    for (std::size_t j = 0; j < 3; ++j) std::swap(swapped(0, j), swapped(3, j));
    auto e2 = dualenc::encode_image(m, swapped);
    double diff = 0.0;
    for (std::size_t j = 0; j < 8; ++j) diff = std::max(diff, std::abs(e1(0, j) - e2(0, j)));
    REQUIRE(diff > 1e-6);
}

TEST_CASE("shape and range violations are rejected") {
    auto v = tiny_vocab();
    auto cfg = tiny_config(v);
    auto m = dualenc::init_model<double>(cfg);

    TokenSequence too_long;
    too_long.ids.assign(13, Vocabulary::unk_id);
    too_long.ids.front() = Vocabulary::bos_id;
    too_long.ids.back() = Vocabulary::eot_id;
    REQUIRE_THROWS_AS(dualenc::encode_text(m, too_long), dualenc::contract_error);

    TokenSequence bad_id;
    bad_id.ids = {Vocabulary::bos_id, static_cast<int>(cfg.vocab_size), Vocabulary::eot_id};
    REQUIRE_THROWS_AS(dualenc::encode_text(m, bad_id), dualenc::contract_error);

    REQUIRE_THROWS_AS(dualenc::encode_image(m, Matrix<double>::zeros(4, 5)),
                      dualenc::contract_error);
    REQUIRE_THROWS_AS(dualenc::encode_image(m, Matrix<double>::zeros(3, 3)),
                      dualenc::contract_error);

    ModelConfig bad = cfg;
    bad.n_heads = 3;
    REQUIRE_THROWS_AS(dualenc::init_model<double>(bad), dualenc::contract_error);
}

TEST_CASE("batched graph matches single-sequence encodes exactly") {
    auto v = tiny_vocab();
    auto cfg = tiny_config(v);
    auto m = dualenc::init_model<double>(cfg);
    std::vector<TokenSequence> seqs = {
        dualenc::tokenize("red cat", v, 12),
        dualenc::tokenize("dog sits red", v, 12),
        dualenc::tokenize("cat", v, 12),
    };
    Tape<double> tape;
    auto nodes = dualenc::make_model_nodes(tape, m, false);
    auto batch = tape.value(dualenc::encode_text_graph(tape, nodes, cfg, seqs));
    REQUIRE(batch.rows() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        auto single = dualenc::encode_text(m, seqs[i]);
        for (std::size_t j = 0; j < 8; ++j) REQUIRE(batch(i, j) == single(0, j));
    }
}

TEST_CASE("alignment loss gradients match finite differences across all parameters") {
    auto v = tiny_vocab();
    auto cfg = tiny_config(v);
    auto m = dualenc::init_model<double>(cfg);
    std::vector<TokenSequence> seqs = {
        dualenc::tokenize("red cat sits", v, 12),
        dualenc::tokenize("dog dog", v, 12),
    };
    dualenc::Rng rng(17);
    std::vector<Matrix<double>> images = {rng.normal_matrix<double>(4, 3, 0.0, 1.0),
                                          rng.normal_matrix<double>(4, 3, 0.0, 1.0)};

    auto loss_value = [&]() {
        Tape<double> tape;
        auto nodes = dualenc::make_model_nodes(tape, m, false);
        auto t = dualenc::encode_text_graph(tape, nodes, cfg, seqs);
        auto i = dualenc::encode_image_graph(tape, nodes, cfg, images);
        return tape.value(tape.sum_all(tape.mul_elem(t, i)))(0, 0);
    };

    std::vector<Matrix<double>*> params;
    std::vector<Matrix<double>> analytic;
    {
        Tape<double> tape;
        auto nodes = dualenc::make_model_nodes(tape, m, true);
        auto t = dualenc::encode_text_graph(tape, nodes, cfg, seqs);
        auto i = dualenc::encode_image_graph(tape, nodes, cfg, images);
        tape.backward(tape.sum_all(tape.mul_elem(t, i)));
        std::size_t k = 0;
        m.for_each_param([&](const std::string&, Matrix<double>& p) {
            params.push_back(&p);
            const auto id = nodes.ordered[k++];
            analytic.push_back(tape.has_grad(id) ? tape.grad(id)
                                                 : Matrix<double>::zeros(p.rows(), p.cols()));
        });
    }
    auto res = dualenc::finite_diff_check(loss_value, params, analytic, 7e-4);
    INFO("worst " << res.worst_param << " entry " << res.worst_entry);
    REQUIRE(res.max_rel_err < 1e-4);
}
