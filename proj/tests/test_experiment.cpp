#include <catch2/catch_amalgamated.hpp>

#include <dualenc/experiment.hpp>

#include <string>
#include <vector>

using dualenc::DataRecord;
using dualenc::ExperimentConfig;
using dualenc::LrSchedule;
using dualenc::Matrix;
using dualenc::StretchMode;
using dualenc::TrainVariant;

namespace {

DataRecord short_caption_record(int id, const std::string& short_text) {
    DataRecord r;
    r.id = id;
    r.long_text = short_text;
    r.short_text = short_text;
    return r;
}

ExperimentConfig micro_config() {
    ExperimentConfig cfg;
    cfg.train_scenes = 8;
    cfg.eval_scenes = 4;
    cfg.model.d_model = 16;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    cfg.model.d_embed = 16;
    cfg.baseline.epochs = 1;
    cfg.baseline.batch_size = 4;
    cfg.baseline.warmup_iters = 1;
    cfg.baseline.learning_rate = 1e-3;
    cfg.finetune.epochs = 1;
    cfg.finetune.batch_size = 4;
    cfg.finetune.warmup_iters = 1;
    cfg.finetune.learning_rate = 1e-3;
    cfg.finetune.loss.k_components = 4;
    return cfg;
}

}  // namespace

TEST_CASE("corpus split cuts at a group boundary and keeps eval scenes unseen") {
    ExperimentConfig cfg;
    cfg.train_scenes = 16;
    cfg.eval_scenes = 8;
    auto split = dualenc::make_corpus(cfg);
    REQUIRE(split.train.size() == 16);
    REQUIRE(split.eval.size() == 8);
    for (const auto& r : split.train) REQUIRE(r.id < 16);
    for (const auto& r : split.eval) REQUIRE(r.id >= 16);

    cfg.train_scenes = 18;  // not a multiple of the sibling group size 4
    REQUIRE_THROWS_AS(dualenc::make_corpus(cfg), dualenc::contract_error);
}

TEST_CASE("recipe registry pairs each table with its loss") {
    auto recipes = dualenc::ablation_recipes();
    REQUIRE(recipes.size() == 7);
    REQUIRE(dualenc::grid_recipe_names() ==
            std::vector<std::string>{"direct_ft", "kps_only", "pcm_only", "kps_pcm"});
    REQUIRE(dualenc::all_recipe_names().size() == 7);

    auto kps_only = dualenc::find_recipe("kps_only");
    REQUIRE(kps_only.stretch == StretchMode::kps);
    REQUIRE(kps_only.variant == TrainVariant::direct_ft);

    auto pcm_only = dualenc::find_recipe("pcm_only");
    REQUIRE(pcm_only.stretch == StretchMode::linear);
    REQUIRE(pcm_only.variant == TrainVariant::kps_pcm);

    auto combined = dualenc::find_recipe("kps_pcm");
    REQUIRE(combined.stretch == StretchMode::kps);
    REQUIRE(combined.variant == TrainVariant::kps_pcm);

    REQUIRE_THROWS_AS(dualenc::find_recipe("nope"), dualenc::contract_error);
}

TEST_CASE("class task ranks objects by frequency then name") {
    std::vector<DataRecord> records = {
        short_caption_record(0, "a flat red toy beside lamp here"),
        short_caption_record(1, "a flat red toy beside mug here"),
        short_caption_record(2, "a flat red toy beside lamp here"),
        short_caption_record(3, "a flat red toy beside vase here"),
        short_caption_record(4, "a flat red toy beside mug here"),
        short_caption_record(5, "a flat red toy beside lamp here"),
    };

    REQUIRE(dualenc::primary_object(records[0]) == "lamp");

    auto task = dualenc::derive_class_task(records, 2);
    REQUIRE(task.class_names == std::vector<std::string>{"lamp", "mug"});
    REQUIRE(task.kept == std::vector<std::size_t>{0, 1, 2, 4, 5});
    REQUIRE(task.labels == std::vector<std::size_t>{0, 1, 0, 1, 0});

    // ties fall back to name order
    auto full = dualenc::derive_class_task(records, 8);
    REQUIRE(full.class_names == std::vector<std::string>{"lamp", "mug", "vase"});
    REQUIRE(full.kept.size() == records.size());

    REQUIRE_THROWS_AS(dualenc::primary_object(short_caption_record(9, "too few words")),
                      dualenc::contract_error);
}

TEST_CASE("ablation table serializes in fixed order") {
    dualenc::AblationTable table;
    table.reference = {"short_baseline", 0.25, 0.5, 0.375};
    table.rows.push_back({"kps_pcm", 1.0, 0.0, 0.5});
    REQUIRE(dualenc::ablation_table_json(table) ==
            "{\"reference\":{\"name\":\"short_baseline\",\"long_r1\":0.25,"
            "\"short_r1\":0.5,\"mean_r1\":0.375},\"rows\":[{\"name\":\"kps_pcm\","
            "\"long_r1\":1,\"short_r1\":0,\"mean_r1\":0.5}]}");
}

TEST_CASE("learning-rate schedules decay as specified") {
    using dualenc::lr_schedule_factor;
    REQUIRE(lr_schedule_factor(LrSchedule::constant, 1, 100, 10) == 1.0);
    REQUIRE(lr_schedule_factor(LrSchedule::constant, 100, 100, 10) == 1.0);

    REQUIRE(lr_schedule_factor(LrSchedule::cosine, 10, 100, 10) == 1.0);
    REQUIRE(lr_schedule_factor(LrSchedule::cosine, 100, 100, 10) ==
            Catch::Approx(0.0).margin(1e-12));
    REQUIRE(lr_schedule_factor(LrSchedule::cosine, 55, 100, 10) ==
            Catch::Approx(0.5).margin(1e-12));
    // degenerate plan shorter than warmup never decays
    REQUIRE(lr_schedule_factor(LrSchedule::cosine, 5, 8, 10) == 1.0);

    REQUIRE(dualenc::parse_lr_schedule("cosine") == LrSchedule::cosine);
    REQUIRE(std::string(dualenc::lr_schedule_name(LrSchedule::constant)) == "constant");
    REQUIRE_THROWS_AS(dualenc::parse_lr_schedule("linear"), dualenc::contract_error);
}

TEST_CASE("mixed-substitution mask seed falls back to the shuffle seed") {
    dualenc::TrainConfig cfg;
    cfg.seed = 42;
    REQUIRE(cfg.mixed_mask_seed() == 42);
    cfg.mixed_seed = 99;
    REQUIRE(cfg.mixed_mask_seed() == 99);
}

TEST_CASE("micro experiment wires each recipe to its stretched table") {
    auto cfg = micro_config();
    auto outcome = dualenc::run_experiment<float>(cfg, dualenc::grid_recipe_names());

    REQUIRE(outcome.table.reference.name == "short_baseline");
    REQUIRE(outcome.table.rows.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        REQUIRE(outcome.table.rows[i].name == dualenc::grid_recipe_names()[i]);

    REQUIRE(outcome.baseline.model.config.context_len == 77);
    REQUIRE(outcome.variants.at("direct_ft").model.config.context_len == 231);
    REQUIRE(outcome.variants.at("pcm_only").model.config.context_len == 231);
    REQUIRE(outcome.variants.at("kps_only").model.config.context_len == 248);
    REQUIRE(outcome.variants.at("kps_pcm").model.config.context_len == 248);
    REQUIRE(outcome.variants.at("kps_pcm").pe_mode == "kps");
    REQUIRE(outcome.variants.at("pcm_only").pe_mode == "linear");

    for (const auto& row : outcome.table.rows) {
        REQUIRE(row.long_r1 >= 0.0);
        REQUIRE(row.long_r1 <= 1.0);
        REQUIRE(row.short_r1 >= 0.0);
        REQUIRE(row.short_r1 <= 1.0);
        REQUIRE(row.mean_r1 == Catch::Approx(0.5 * (row.long_r1 + row.short_r1)));
    }

    REQUIRE(outcome.baseline_epochs.size() == 1);
    REQUIRE(outcome.variant_epochs.at("kps_pcm").size() == 1);
    REQUIRE(outcome.corpus.eval.size() == 4);
}
