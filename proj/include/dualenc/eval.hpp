#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dataset_io.hpp"
#include "encoder.hpp"
#include "text_format.hpp"
#include "vocab.hpp"

namespace dualenc {

struct RetrievalReport {
    std::string direction;  // image_to_text | text_to_image
    std::vector<std::size_t> ks;
    std::vector<double> recalls;
    std::size_t n_queries = 0;
};

struct RetrievalPair {
    RetrievalReport image_to_text;
    RetrievalReport text_to_image;
};

namespace detail {

// Rank of the matching item for query row q: how many gallery rows score
// strictly higher, plus those equal with a lower index. Deterministic under
// ties by construction.
template <typename T>
std::size_t match_rank(const Matrix<T>& queries, const Matrix<T>& gallery, std::size_t q) {
    const std::size_t d = queries.cols();
    auto sim = [&](std::size_t row) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c)
            s += static_cast<double>(queries(q, c)) * static_cast<double>(gallery(row, c));
        return s;
    };
    const double s_true = sim(q);
    std::size_t rank = 0;
    for (std::size_t j = 0; j < gallery.rows(); ++j) {
        if (j == q) continue;
        const double s = sim(j);
        if (s > s_true || (s == s_true && j < q)) ++rank;
    }
    return rank;
}

template <typename T>
RetrievalReport recall_one_direction(const Matrix<T>& queries, const Matrix<T>& gallery,
                                     const std::vector<std::size_t>& ks,
                                     const std::string& direction) {
    RetrievalReport rep;
    rep.direction = direction;
    rep.ks = ks;
    rep.n_queries = queries.rows();
    std::vector<std::size_t> ranks(queries.rows());
    for (std::size_t q = 0; q < queries.rows(); ++q) ranks[q] = match_rank(queries, gallery, q);
    for (std::size_t k : ks) {
        std::size_t hits = 0;
        for (auto r : ranks)
            if (r < k) ++hits;
        rep.recalls.push_back(static_cast<double>(hits) / static_cast<double>(queries.rows()));
    }
    return rep;
}

}  // namespace detail

// Recall@K in both directions over matched pairs: row i of the image set
// corresponds to row i of the text set. The gallery may hold extra rows
// beyond the paired block (used by the duplicate-item property); queries
// always come from the paired block.
template <typename T>
RetrievalPair recall_at_k(const Matrix<T>& img_embs, const Matrix<T>& txt_embs,
                          std::vector<std::size_t> ks) {
    require(img_embs.rows() == txt_embs.rows() && img_embs.cols() == txt_embs.cols(),
            "recall_at_k: embedding sets must have matching shape");
    require(img_embs.rows() >= 1, "recall_at_k: empty embedding sets");
    require(!ks.empty(), "recall_at_k: no k values");
    for (std::size_t i = 0; i < ks.size(); ++i) {
        require(ks[i] >= 1, "recall_at_k: k must be >= 1");
        require(i == 0 || ks[i] > ks[i - 1], "recall_at_k: ks must be strictly ascending");
    }
    RetrievalPair pair;
    pair.image_to_text = detail::recall_one_direction(img_embs, txt_embs, ks, "image_to_text");
    pair.text_to_image = detail::recall_one_direction(txt_embs, img_embs, ks, "text_to_image");
    return pair;
}

// Single-direction form with an independent gallery (gallery rows beyond
// the query count are distractors).
template <typename T>
RetrievalReport recall_against_gallery(const Matrix<T>& queries, const Matrix<T>& gallery,
                                       std::vector<std::size_t> ks,
                                       const std::string& direction) {
    require(queries.cols() == gallery.cols(), "recall: embedding width mismatch");
    require(gallery.rows() >= queries.rows(), "recall: gallery smaller than query set");
    require(!ks.empty(), "recall: no k values");
    for (std::size_t i = 0; i < ks.size(); ++i) {
        require(ks[i] >= 1, "recall: k must be >= 1");
        require(i == 0 || ks[i] > ks[i - 1], "recall: ks must be strictly ascending");
    }
    return detail::recall_one_direction(queries, gallery, ks, direction);
}

// Eight toy prompt templates; every word is in the generator's vocabulary
// so class prompts only produce UNK when the class name itself is unknown.
inline std::vector<std::string> default_prompt_templates() {
    return {
        "a photo of a {}",  "a picture of a {}",     "an image of a {}",
        "a scene with a {}", "there is a {}",        "a small {}",
        "a large {}",        "the {} in the scene",
    };
}

inline std::string fill_template(const std::string& tmpl, const std::string& name) {
    const auto pos = tmpl.find("{}");
    require(pos != std::string::npos, "prompt template missing {} placeholder: " + tmpl);
    std::string out = tmpl;
    out.replace(pos, 2, name);
    return out;
}

struct ClassifyReport {
    double accuracy = 0.0;
    std::size_t n_images = 0;
    std::size_t unk_words = 0;  // UNK tokens hit while embedding prompts
    std::vector<std::size_t> predictions;
};

// Each class becomes the re-normalized mean of its filled-template
// embeddings, so a uniform scaling of the raw per-prompt vectors cannot
// change downstream argmax decisions. unk_total accumulates UNK tokens hit
// while tokenizing prompts.
template <typename T>
Matrix<T> class_embeddings(const DualEncoder<T>& model, const Vocabulary& vocab,
                           const std::vector<std::string>& class_names,
                           const std::vector<std::string>& templates,
                           std::size_t* unk_total = nullptr) {
    require(!class_names.empty(), "class_embeddings: no classes");
    require(!templates.empty(), "class_embeddings: no templates");
    const std::size_t d = model.config.d_embed;
    Matrix<T> class_embs(class_names.size(), d);
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        std::vector<TokenSequence> prompts;
        prompts.reserve(templates.size());
        for (const auto& t : templates)
            prompts.push_back(tokenize(fill_template(t, class_names[c]), vocab,
                                       model.config.context_len, unk_total));
        const Matrix<T> emb = embed_text_batch(model, prompts);
        std::vector<double> mean(d, 0.0);
        for (std::size_t r = 0; r < emb.rows(); ++r)
            for (std::size_t j = 0; j < d; ++j) mean[j] += static_cast<double>(emb(r, j));
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mean[j] /= static_cast<double>(emb.rows());
            sq += mean[j] * mean[j];
        }
        const double inv = 1.0 / std::sqrt(std::max(sq, 1e-24));
        for (std::size_t j = 0; j < d; ++j)
            class_embs(c, j) = static_cast<T>(mean[j] * inv);
    }
    return class_embs;
}

// Prompt-ensembled zero-shot classification: prediction is the cosine
// argmax over class embeddings with ties to the lower class index.
template <typename T>
ClassifyReport zero_shot_classify(const DualEncoder<T>& model, const Vocabulary& vocab,
                                  const std::vector<Matrix<T>>& images,
                                  const std::vector<std::size_t>& labels,
                                  const std::vector<std::string>& class_names,
                                  const std::vector<std::string>& templates) {
    require(!images.empty(), "zero_shot_classify: no images");
    require(images.size() == labels.size(), "zero_shot_classify: images/labels count mismatch");
    for (auto l : labels)
        require(l < class_names.size(), "zero_shot_classify: label out of range");

    ClassifyReport rep;
    rep.n_images = images.size();
    const std::size_t d = model.config.d_embed;
    const Matrix<T> class_embs =
        class_embeddings(model, vocab, class_names, templates, &rep.unk_words);

    const Matrix<T> img_embs = embed_image_batch(model, images);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::size_t best = 0;
        double best_s = -2.0;
        for (std::size_t c = 0; c < class_names.size(); ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                s += static_cast<double>(img_embs(i, j)) * static_cast<double>(class_embs(c, j));
            if (s > best_s) {
                best_s = s;
                best = c;
            }
        }
        rep.predictions.push_back(best);
        if (best == labels[i]) ++correct;
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(images.size());
    return rep;
}

struct LengthProbeCurve {
    std::vector<std::size_t> lengths;  // caption token budgets, strictly ascending
    std::vector<double> r_at_1;
    std::string model_tag;
};

// Expands a requested grid against an eval set: budgets at or beyond the
// longest caption are dropped, then the full length is appended so the
// curve always ends at the untruncated captions.
inline std::vector<std::size_t> probe_grid(const std::vector<std::size_t>& requested,
                                           std::size_t full_length) {
    std::vector<std::size_t> out;
    for (auto m : requested)
        if (m < full_length) out.push_back(m);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    out.push_back(full_length);
    return out;
}

inline std::vector<std::size_t> default_probe_lengths() { return {5, 10, 15, 20, 30, 40, 60}; }

// Text-to-image R@1 as the long captions are truncated to m body tokens.
// Truncation happens in token space: the encoder sees BOS + m tokens + EOT.
template <typename T>
LengthProbeCurve effective_length_probe(const DualEncoder<T>& model,
                                        const std::vector<DataRecord>& records,
                                        const Vocabulary& vocab,
                                        const std::vector<std::size_t>& lengths,
                                        const std::string& model_tag = "") {
    require(!records.empty(), "effective_length_probe: empty eval set");
    require(!lengths.empty(), "effective_length_probe: no probe lengths");

    std::size_t full = 0;
    for (const auto& r : records) full = std::max(full, word_count(r.long_text));
    LengthProbeCurve curve;
    curve.model_tag = model_tag;
    curve.lengths = probe_grid(lengths, full);
    for (std::size_t i = 1; i < curve.lengths.size(); ++i)
        require(curve.lengths[i] > curve.lengths[i - 1],
                "effective_length_probe: lengths must be strictly ascending");
    require(curve.lengths.back() + 2 <= model.config.context_len,
            "effective_length_probe: budget " + std::to_string(curve.lengths.back()) +
                " tokens plus frame exceeds model context " +
                std::to_string(model.config.context_len));

    std::vector<Matrix<T>> images;
    images.reserve(records.size());
    for (const auto& r : records) {
        Matrix<T> img(r.image.rows(), r.image.cols());
        for (std::size_t j = 0; j < img.size(); ++j)
            img.data()[j] = static_cast<T>(r.image.data()[j]);
        images.push_back(std::move(img));
    }
    const Matrix<T> img_embs = embed_image_batch(model, images);

    for (std::size_t m : curve.lengths) {
        std::vector<TokenSequence> seqs;
        seqs.reserve(records.size());
        for (const auto& r : records) seqs.push_back(tokenize(r.long_text, vocab, m + 2));
        const Matrix<T> txt_embs = embed_text_batch(model, seqs);
        const auto rep = recall_against_gallery(txt_embs, img_embs, {1}, "text_to_image");
        curve.r_at_1.push_back(rep.recalls[0]);
    }
    return curve;
}

// Fixed-order JSON document for one direction's recall figures.
inline std::string retrieval_report_json(const RetrievalReport& rep) {
    std::string s = "{";
    s += "\"direction\":\"" + json_escape(rep.direction) + "\"";
    s += ",\"ks\":[";
    for (std::size_t i = 0; i < rep.ks.size(); ++i)
        s += (i ? "," : "") + std::to_string(rep.ks[i]);
    s += "],\"recalls\":[";
    for (std::size_t i = 0; i < rep.recalls.size(); ++i)
        s += (i ? "," : "") + format_g17(rep.recalls[i]);
    s += "],\"n\":" + std::to_string(rep.n_queries);
    s += "}";
    return s;
}

inline std::string retrieval_pair_json(const RetrievalPair& pair) {
    return "{\"image_to_text\":" + retrieval_report_json(pair.image_to_text) +
           ",\"text_to_image\":" + retrieval_report_json(pair.text_to_image) + "}";
}

inline std::string probe_curve_csv(const LengthProbeCurve& curve) {
    std::string s = "length,r_at_1\n";
    for (std::size_t i = 0; i < curve.lengths.size(); ++i)
        s += std::to_string(curve.lengths[i]) + "," + format_g17(curve.r_at_1[i]) + "\n";
    return s;
}

inline std::string probe_curve_json(const LengthProbeCurve& curve) {
    std::string s = "{";
    s += "\"model_tag\":\"" + json_escape(curve.model_tag) + "\"";
    s += ",\"lengths\":[";
    for (std::size_t i = 0; i < curve.lengths.size(); ++i)
        s += (i ? "," : "") + std::to_string(curve.lengths[i]);
    s += "],\"r_at_1\":[";
    for (std::size_t i = 0; i < curve.r_at_1.size(); ++i)
        s += (i ? "," : "") + format_g17(curve.r_at_1[i]);
    s += "]}";
    return s;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot open for writing: " + path);
    out << content;
    require(out.good(), "write failed: " + path);
}

}  // namespace dualenc
