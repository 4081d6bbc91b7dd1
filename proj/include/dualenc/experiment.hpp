#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "checkpoint.hpp"
#include "datagen.hpp"
#include "eval.hpp"
#include "train.hpp"

namespace dualenc {

// One corpus, one base model, and the fine-tuning recipes of the ablation
// grid. Training defaults here are desk-scale: small batches and a hot
// learning rate move a toy encoder in minutes, where the reference values
// (lr 1e-4, warmup 200) assume web-scale batches and days of compute.
struct ExperimentConfig {
    std::uint64_t data_seed = 7;
    std::size_t train_scenes = 2000;
    std::size_t eval_scenes = 200;
    GenConfig gen;

    ModelConfig model;
    TrainConfig baseline;
    TrainConfig finetune;

    double kps_ratio = 4.0;  // 77 -> 248
    std::size_t kps_keep = 20;
    double linear_ratio = 3.0;  // 77 -> 231

    ExperimentConfig() {
        model.init_seed = 1;
        baseline.variant = TrainVariant::short_baseline;
        baseline.seed = 11;
        baseline.batch_size = 64;
        baseline.epochs = 12;
        baseline.learning_rate = 3e-3;
        baseline.warmup_iters = 20;
        finetune.variant = TrainVariant::kps_pcm;
        finetune.seed = 12;
        finetune.batch_size = 64;
        finetune.epochs = 8;
        finetune.learning_rate = 1e-3;
        finetune.warmup_iters = 20;
        // the coarse term needs more weight here than at web scale: with a
        // barely-trained base model the fine and coarse gradients disagree
        // hard, and 0.1 lets shorts drift
        finetune.loss.alpha_loss = 0.4;
    }

    StretchSpec kps_spec() const { return StretchSpec{StretchMode::kps, kps_ratio, kps_keep}; }
    StretchSpec linear_spec() const {
        return StretchSpec{StretchMode::linear, linear_ratio, 0};
    }
};

// Sibling groups never straddle the split: scene generation proceeds in
// whole groups, so cutting at a group boundary keeps eval groups unseen.
struct CorpusSplit {
    std::vector<DataRecord> train;
    std::vector<DataRecord> eval;
};

inline CorpusSplit make_corpus(const ExperimentConfig& cfg) {
    require(cfg.train_scenes % cfg.gen.group_size == 0,
            "experiment: train_scenes must be a multiple of the sibling group size");
    const std::size_t total = cfg.train_scenes + cfg.eval_scenes;
    auto records = to_records(generate_dataset(cfg.data_seed, total, cfg.gen));
    CorpusSplit split;
    split.train.assign(records.begin(),
                       records.begin() + static_cast<std::ptrdiff_t>(cfg.train_scenes));
    split.eval.assign(records.begin() + static_cast<std::ptrdiff_t>(cfg.train_scenes),
                      records.end());
    return split;
}

struct EvalPair {
    double long_r1 = 0.0;
    double short_r1 = 0.0;
    double mean_r1() const { return 0.5 * (long_r1 + short_r1); }
};

// Text-to-image R@1 with long and short captions as the two query sets.
template <typename T>
EvalPair evaluate_t2i(const DualEncoder<T>& model, const std::vector<DataRecord>& records,
                      const Vocabulary& vocab) {
    require(!records.empty(), "evaluate_t2i: empty eval set");
    std::vector<Matrix<T>> images;
    std::vector<TokenSequence> longs, shorts;
    images.reserve(records.size());
    for (const auto& r : records) {
        Matrix<T> img(r.image.rows(), r.image.cols());
        for (std::size_t i = 0; i < img.size(); ++i)
            img.data()[i] = static_cast<T>(r.image.data()[i]);
        images.push_back(std::move(img));
        longs.push_back(tokenize(r.long_text, vocab, model.config.context_len));
        shorts.push_back(tokenize(r.short_text, vocab, model.config.context_len));
    }
    const Matrix<T> img_embs = embed_image_batch(model, images);

    EvalPair out;
    out.long_r1 =
        recall_against_gallery(embed_text_batch(model, longs), img_embs, {1}, "text_to_image")
            .recalls[0];
    out.short_r1 =
        recall_against_gallery(embed_text_batch(model, shorts), img_embs, {1}, "text_to_image")
            .recalls[0];
    return out;
}

// Ablation rows: the two mechanisms toggled independently, then the three
// alternative strategies, all fine-tuned from the same short-caption base.
struct RecipeSpec {
    std::string name;
    StretchMode stretch;
    TrainVariant variant;
};

inline std::vector<RecipeSpec> ablation_recipes() {
    return {
        {"direct_ft", StretchMode::linear, TrainVariant::direct_ft},
        {"kps_only", StretchMode::kps, TrainVariant::direct_ft},
        {"pcm_only", StretchMode::linear, TrainVariant::kps_pcm},
        {"kps_pcm", StretchMode::kps, TrainVariant::kps_pcm},
        {"undistinguished", StretchMode::kps, TrainVariant::undistinguished},
        {"mixed_length", StretchMode::kps, TrainVariant::mixed_length},
        {"bounded", StretchMode::kps, TrainVariant::bounded},
    };
}

inline std::vector<std::string> grid_recipe_names() {
    return {"direct_ft", "kps_only", "pcm_only", "kps_pcm"};
}

inline std::vector<std::string> all_recipe_names() {
    std::vector<std::string> names;
    for (const auto& r : ablation_recipes()) names.push_back(r.name);
    return names;
}

inline RecipeSpec find_recipe(const std::string& name) {
    for (const auto& r : ablation_recipes())
        if (r.name == name) return r;
    throw contract_error("unknown ablation recipe: " + name);
}

struct AblationRow {
    std::string name;
    double long_r1 = 0.0;
    double short_r1 = 0.0;
    double mean_r1 = 0.0;
};

struct AblationTable {
    AblationRow reference;  // the short-caption base the recipes start from
    std::vector<AblationRow> rows;
};

template <typename T>
struct ExperimentOutcome {
    AblationTable table;
    Checkpoint<T> baseline;
    std::map<std::string, Checkpoint<T>> variants;
    CorpusSplit corpus;
    Vocabulary vocab;
    std::vector<EpochLog> baseline_epochs;
    std::map<std::string, std::vector<EpochLog>> variant_epochs;
};

// Trains the short-caption base once, then stretches and fine-tunes one
// model per requested recipe, evaluating everything on the held-out split.
template <typename T = float>
ExperimentOutcome<T> run_experiment(const ExperimentConfig& cfg,
                                    const std::vector<std::string>& recipe_names) {
    ExperimentOutcome<T> out;
    out.vocab = build_vocabulary();
    out.corpus = make_corpus(cfg);

    ModelConfig mc = cfg.model;
    mc.vocab_size = static_cast<std::size_t>(out.vocab.size());

    auto base_model = init_model<T>(mc);
    auto base_res = train(cfg.baseline, std::move(base_model), out.corpus.train, out.vocab);
    out.baseline = std::move(base_res.checkpoint);
    out.baseline_epochs = std::move(base_res.epochs);

    const EvalPair base_eval = evaluate_t2i(out.baseline.model, out.corpus.eval, out.vocab);
    out.table.reference = {"short_baseline", base_eval.long_r1, base_eval.short_r1,
                           base_eval.mean_r1()};

    for (const auto& name : recipe_names) {
        const RecipeSpec recipe = find_recipe(name);
        DualEncoder<T> model = out.baseline.model;
        const StretchSpec spec =
            recipe.stretch == StretchMode::kps ? cfg.kps_spec() : cfg.linear_spec();
        stretch_model(model, spec);

        TrainConfig tc = cfg.finetune;
        tc.variant = recipe.variant;
        auto res = train(tc, std::move(model), out.corpus.train, out.vocab,
                         stretch_mode_name(recipe.stretch));

        const EvalPair ev = evaluate_t2i(res.checkpoint.model, out.corpus.eval, out.vocab);
        out.table.rows.push_back({name, ev.long_r1, ev.short_r1, ev.mean_r1()});
        out.variants.emplace(name, std::move(res.checkpoint));
        out.variant_epochs.emplace(name, std::move(res.epochs));
    }
    return out;
}

inline std::string ablation_row_json(const AblationRow& row) {
    std::string s = "{";
    s += "\"name\":\"" + json_escape(row.name) + "\"";
    s += ",\"long_r1\":" + format_g17(row.long_r1);
    s += ",\"short_r1\":" + format_g17(row.short_r1);
    s += ",\"mean_r1\":" + format_g17(row.mean_r1);
    s += "}";
    return s;
}

inline std::string ablation_table_json(const AblationTable& table) {
    std::string s = "{\"reference\":" + ablation_row_json(table.reference) + ",\"rows\":[";
    for (std::size_t i = 0; i < table.rows.size(); ++i)
        s += (i ? "," : "") + ablation_row_json(table.rows[i]);
    s += "]}";
    return s;
}

// The generator puts each scene's most salient object at word 5 of the
// short caption ("a photo of a <color> <object> ..."); that object is the
// scene's class for zero-shot purposes.
struct ClassTask {
    std::vector<std::string> class_names;  // most frequent first, ties by name
    std::vector<std::size_t> labels;       // per record index into class_names
    std::vector<std::size_t> kept;         // record indices whose class made the cut
};

inline std::string primary_object(const DataRecord& record) {
    std::istringstream in(record.short_text);
    std::string w;
    for (int i = 0; i <= 5; ++i)
        require(static_cast<bool>(in >> w), "primary_object: short caption too short: '" +
                                                record.short_text + "'");
    return w;
}

inline ClassTask derive_class_task(const std::vector<DataRecord>& records,
                                   std::size_t max_classes = 8) {
    require(!records.empty(), "derive_class_task: no records");
    require(max_classes >= 1, "derive_class_task: max_classes must be >= 1");
    std::map<std::string, std::size_t> counts;
    std::vector<std::string> objects;
    objects.reserve(records.size());
    for (const auto& r : records) {
        objects.push_back(primary_object(r));
        ++counts[objects.back()];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    ClassTask task;
    for (std::size_t i = 0; i < std::min(max_classes, ranked.size()); ++i)
        task.class_names.push_back(ranked[i].first);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < task.class_names.size(); ++i) index[task.class_names[i]] = i;
    for (std::size_t r = 0; r < records.size(); ++r) {
        auto it = index.find(objects[r]);
        if (it == index.end()) continue;
        task.labels.push_back(it->second);
        task.kept.push_back(r);
    }
    return task;
}

}  // namespace dualenc
