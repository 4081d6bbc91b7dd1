#include <CLI11.hpp>
#include <json.hpp>

#include <dualenc/experiment.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace dualenc;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config resolution: defaults, then the JSON config file, then explicit
// flags. Every accepted file key is registered up front; unknown keys are
// rejected by name.

class KeyedConfig {
  public:
    void on(const std::string& key, std::function<void(const nlohmann::json&)> setter) {
        setters_[key] = std::move(setter);
    }

    void apply_file(const std::string& path) {
        std::ifstream in(path);
        require(static_cast<bool>(in), "config file not found: " + path);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw contract_error("config: " + path + " is not valid JSON: " + e.what());
        }
        require(doc.is_object(), "config: " + path + " must hold a JSON object");
        for (const auto& [key, value] : doc.items()) {
            auto it = setters_.find(key);
            require(it != setters_.end(), "config: unknown key '" + key + "' in " + path);
            try {
                it->second(value);
            } catch (const nlohmann::json::exception& e) {
                throw contract_error("config: bad value for '" + key + "': " + e.what());
            }
        }
    }

  private:
    std::map<std::string, std::function<void(const nlohmann::json&)>> setters_;
};

// Flag-beats-file bookkeeping: flags parse into shadow variables, and each
// registered apply step copies a shadow into the real config only when its
// flag was actually given.
struct Overrides {
    std::vector<CLI::Option*> opts;
    std::vector<std::function<void()>> apply;

    void bind(CLI::Option* opt, std::function<void()> fn) {
        opts.push_back(opt);
        apply.push_back(std::move(fn));
    }
    void commit() const {
        for (std::size_t i = 0; i < opts.size(); ++i)
            if (opts[i]->count() > 0) apply[i]();
    }
    std::size_t count(std::size_t first, std::size_t last) const {
        std::size_t c = 0;
        for (std::size_t i = first; i < last && i < opts.size(); ++i) c += opts[i]->count();
        return c;
    }
};

// Fixed-order resolved-config document. Values are pre-rendered strings so
// reruns produce identical bytes; no timestamps.
class ResolvedConfig {
  public:
    void add(const std::string& key, const std::string& rendered) {
        entries_.emplace_back(key, rendered);
    }
    void add_str(const std::string& key, const std::string& v) {
        add(key, "\"" + json_escape(v) + "\"");
    }
    void add_num(const std::string& key, double v) { add(key, format_g17(v)); }
    void add_int(const std::string& key, std::uint64_t v) { add(key, std::to_string(v)); }
    void add_bool(const std::string& key, bool v) { add(key, v ? "true" : "false"); }

    std::string render() const {
        std::string s = "{";
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            s += (i ? ",\n " : "\n ");
            s += "\"" + json_escape(entries_[i].first) + "\":" + entries_[i].second;
        }
        s += "\n}\n";
        return s;
    }

  private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

// Declared outputs of a run. The process succeeds only when every declared
// path exists on disk at exit.
struct ArtifactLedger {
    std::vector<std::string> paths;

    void write_text(const std::string& path, const std::string& body) {
        if (auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
        std::ofstream out(path, std::ios::binary);
        require(static_cast<bool>(out), "cannot open for writing: " + path);
        out << body;
        require(static_cast<bool>(out), "write failed: " + path);
        paths.push_back(path);
    }

    void note(const std::string& path) { paths.push_back(path); }

    int verify() const {
        for (const auto& p : paths) {
            if (!fs::exists(p)) {
                std::fprintf(stderr, "error: declared artifact missing: %s\n", p.c_str());
                return 1;
            }
        }
        return 0;
    }
};

std::vector<std::size_t> parse_size_list(const std::string& csv, const char* what) {
    std::vector<std::size_t> out;
    std::string token;
    std::istringstream in(csv);
    while (std::getline(in, token, ',')) {
        require(!token.empty(), std::string(what) + ": empty element in list '" + csv + "'");
        try {
            out.push_back(static_cast<std::size_t>(std::stoull(token)));
        } catch (const std::exception&) {
            throw contract_error(std::string(what) + ": '" + token + "' is not an integer");
        }
    }
    require(!out.empty(), std::string(what) + ": empty list");
    return out;
}

std::string render_size_list(const std::vector<std::size_t>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s + "]";
}

template <typename T>
Checkpoint<T> load_checkpoint_or_die(const std::string& path) {
    require(fs::exists(path), "checkpoint not found: " + path);
    return load_checkpoint<T>(path);
}

std::vector<DataRecord> read_dataset_or_die(const std::string& path) {
    require(fs::exists(path), "dataset not found: " + path);
    return read_dataset(path);
}

Vocabulary load_vocab_or_die(const std::string& path) {
    require(fs::exists(path), "vocabulary not found: " + path);
    return Vocabulary::load(path);
}

void require_path(const std::string& value, const char* flag) {
    require(!value.empty(), std::string("missing required path: ") + flag);
}

std::string epochs_log_text(const std::vector<EpochLog>& epochs) {
    std::string s = "epoch\tsteps\ttotal\tfine\tcoarse\tpenalty\twall_seconds\n";
    char line[256];
    for (const auto& e : epochs) {
        std::snprintf(line, sizeof(line), "%zu\t%zu\t%.17g\t%.17g\t%.17g\t%.17g\t%.3f\n", e.epoch,
                      e.steps, e.total, e.fine, e.coarse, e.penalty, e.wall_seconds);
        s += line;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Reusable key bundles over the real config structs.

struct GenSettings {
    std::uint64_t seed = 0;
    std::size_t n = 100;
    GenConfig gen;

    void register_keys(KeyedConfig& kc) {
        kc.on("data.seed", [this](const nlohmann::json& v) { seed = v.get<std::uint64_t>(); });
        kc.on("data.n", [this](const nlohmann::json& v) { n = v.get<std::size_t>(); });
        kc.on("gen.n_attributes",
              [this](const nlohmann::json& v) { gen.n_attributes = v.get<std::size_t>(); });
        kc.on("gen.primary_count",
              [this](const nlohmann::json& v) { gen.primary_count = v.get<std::size_t>(); });
        kc.on("gen.shared_count",
              [this](const nlohmann::json& v) { gen.shared_count = v.get<std::size_t>(); });
        kc.on("gen.group_size",
              [this](const nlohmann::json& v) { gen.group_size = v.get<std::size_t>(); });
        kc.on("gen.grid", [this](const nlohmann::json& v) { gen.grid = v.get<std::size_t>(); });
        kc.on("gen.channels",
              [this](const nlohmann::json& v) { gen.channels = v.get<std::size_t>(); });
        kc.on("gen.kernel_sigma",
              [this](const nlohmann::json& v) { gen.kernel_sigma = v.get<double>(); });
    }

    void resolved(ResolvedConfig& rc) const {
        rc.add_int("data.seed", seed);
        rc.add_int("data.n", n);
        rc.add_int("gen.n_attributes", gen.n_attributes);
        rc.add_int("gen.primary_count", gen.primary_count);
        rc.add_int("gen.shared_count", gen.shared_count);
        rc.add_int("gen.group_size", gen.group_size);
        rc.add_int("gen.grid", gen.grid);
        rc.add_int("gen.channels", gen.channels);
        rc.add_num("gen.kernel_sigma", gen.kernel_sigma);
    }
};

struct ModelSettings {
    ModelConfig model;

    void register_keys(KeyedConfig& kc, const std::string& p = "model.") {
        kc.on(p + "context_len",
              [this](const nlohmann::json& v) { model.context_len = v.get<std::size_t>(); });
        kc.on(p + "d_model",
              [this](const nlohmann::json& v) { model.d_model = v.get<std::size_t>(); });
        kc.on(p + "n_layers",
              [this](const nlohmann::json& v) { model.n_layers = v.get<std::size_t>(); });
        kc.on(p + "n_heads",
              [this](const nlohmann::json& v) { model.n_heads = v.get<std::size_t>(); });
        kc.on(p + "d_embed",
              [this](const nlohmann::json& v) { model.d_embed = v.get<std::size_t>(); });
        kc.on(p + "image_grid",
              [this](const nlohmann::json& v) { model.image_grid = v.get<std::size_t>(); });
        kc.on(p + "image_channels",
              [this](const nlohmann::json& v) { model.image_channels = v.get<std::size_t>(); });
        kc.on(p + "init_seed",
              [this](const nlohmann::json& v) { model.init_seed = v.get<std::uint64_t>(); });
        kc.on(p + "temperature_init",
              [this](const nlohmann::json& v) { model.temperature_init = v.get<double>(); });
    }

    void resolved(ResolvedConfig& rc, const std::string& p = "model.") const {
        rc.add_int(p + "context_len", model.context_len);
        rc.add_int(p + "d_model", model.d_model);
        rc.add_int(p + "n_layers", model.n_layers);
        rc.add_int(p + "n_heads", model.n_heads);
        rc.add_int(p + "d_embed", model.d_embed);
        rc.add_int(p + "image_grid", model.image_grid);
        rc.add_int(p + "image_channels", model.image_channels);
        rc.add_int(p + "init_seed", model.init_seed);
        rc.add_num(p + "temperature_init", model.temperature_init);
    }
};

struct TrainSettings {
    TrainConfig train;
    std::string variant_name = "kps_pcm";
    std::string schedule_name = "constant";
    std::uint64_t mixed_seed_value = 0;
    bool mixed_seed_set = false;

    void register_keys(KeyedConfig& kc, const std::string& p, bool with_variant) {
        if (with_variant)
            kc.on(p + "variant",
                  [this](const nlohmann::json& v) { variant_name = v.get<std::string>(); });
        kc.on(p + "batch_size",
              [this](const nlohmann::json& v) { train.batch_size = v.get<std::size_t>(); });
        kc.on(p + "epochs",
              [this](const nlohmann::json& v) { train.epochs = v.get<std::size_t>(); });
        kc.on(p + "learning_rate",
              [this](const nlohmann::json& v) { train.learning_rate = v.get<double>(); });
        kc.on(p + "weight_decay",
              [this](const nlohmann::json& v) { train.weight_decay = v.get<double>(); });
        kc.on(p + "warmup_iters",
              [this](const nlohmann::json& v) { train.warmup_iters = v.get<std::size_t>(); });
        kc.on(p + "adam_beta1",
              [this](const nlohmann::json& v) { train.adam_beta1 = v.get<double>(); });
        kc.on(p + "adam_beta2",
              [this](const nlohmann::json& v) { train.adam_beta2 = v.get<double>(); });
        kc.on(p + "adam_eps",
              [this](const nlohmann::json& v) { train.adam_eps = v.get<double>(); });
        kc.on(p + "seed",
              [this](const nlohmann::json& v) { train.seed = v.get<std::uint64_t>(); });
        kc.on(p + "mixed_seed", [this](const nlohmann::json& v) {
            mixed_seed_value = v.get<std::uint64_t>();
            mixed_seed_set = true;
        });
        kc.on(p + "clip_norm",
              [this](const nlohmann::json& v) { train.clip_norm = v.get<double>(); });
        kc.on(p + "mixed_rate",
              [this](const nlohmann::json& v) { train.mixed_rate = v.get<double>(); });
        kc.on(p + "schedule",
              [this](const nlohmann::json& v) { schedule_name = v.get<std::string>(); });
        kc.on(p + "alpha",
              [this](const nlohmann::json& v) { train.loss.alpha_loss = v.get<double>(); });
        kc.on(p + "k_components",
              [this](const nlohmann::json& v) { train.loss.k_components = v.get<std::size_t>(); });
        kc.on(p + "symmetric",
              [this](const nlohmann::json& v) { train.loss.symmetric = v.get<bool>(); });
        kc.on(p + "beta_bound",
              [this](const nlohmann::json& v) { train.loss.beta_bound = v.get<double>(); });
    }

    TrainConfig finish() {
        train.variant = parse_train_variant(variant_name);
        train.schedule = parse_lr_schedule(schedule_name);
        if (mixed_seed_set) train.mixed_seed = mixed_seed_value;
        train.validate();
        return train;
    }

    void resolved(ResolvedConfig& rc, const std::string& p, bool with_variant) const {
        if (with_variant) rc.add_str(p + "variant", variant_name);
        rc.add_int(p + "batch_size", train.batch_size);
        rc.add_int(p + "epochs", train.epochs);
        rc.add_num(p + "learning_rate", train.learning_rate);
        rc.add_num(p + "weight_decay", train.weight_decay);
        rc.add_int(p + "warmup_iters", train.warmup_iters);
        rc.add_num(p + "adam_beta1", train.adam_beta1);
        rc.add_num(p + "adam_beta2", train.adam_beta2);
        rc.add_num(p + "adam_eps", train.adam_eps);
        rc.add_int(p + "seed", train.seed);
        rc.add_int(p + "mixed_seed", mixed_seed_set ? mixed_seed_value : train.seed);
        rc.add_num(p + "clip_norm", train.clip_norm);
        rc.add_num(p + "mixed_rate", train.mixed_rate);
        rc.add_str(p + "schedule", schedule_name);
        rc.add_num(p + "alpha", train.loss.alpha_loss);
        rc.add_int(p + "k_components", train.loss.k_components);
        rc.add_bool(p + "symmetric", train.loss.symmetric);
        rc.add_num(p + "beta_bound", train.loss.beta_bound);
    }
};

// ---------------------------------------------------------------------------
// Command bodies. Config resolution happens before these run; each body does
// the work, writes its artifacts, and returns the process exit code.

int run_gen_data(const GenSettings& s, const std::string& out_dir) {
    auto records = to_records(generate_dataset(s.seed, s.n, s.gen));
    auto vocab = build_vocabulary();

    ArtifactLedger ledger;
    fs::create_directories(out_dir);
    const std::string data_path = (fs::path(out_dir) / "dataset.jsonl").string();
    const std::string vocab_path = (fs::path(out_dir) / "vocab.txt").string();
    write_dataset(data_path, records);
    ledger.note(data_path);
    vocab.save(vocab_path);
    ledger.note(vocab_path);

    ResolvedConfig rc;
    s.resolved(rc);
    rc.add_str("io.out", out_dir);
    ledger.write_text((fs::path(out_dir) / "gen-data.config.json").string(), rc.render());

    std::printf("gen-data: %zu records -> %s\n", records.size(), data_path.c_str());
    return ledger.verify();
}

int run_stretch(const std::string& in_path, const std::string& out_path,
                const std::string& mode_name, StretchSpec spec) {
    spec.mode = parse_stretch_mode(mode_name);
    auto ckpt = load_checkpoint_or_die<float>(in_path);
    const std::size_t before = ckpt.model.text_pos.length();
    stretch_model(ckpt.model, spec);
    ckpt.pe_mode = mode_name;
    ckpt.opt = AdamState<float>{};  // table shape changed, moments are stale

    ArtifactLedger ledger;
    if (auto dir = fs::path(out_path).parent_path(); !dir.empty()) fs::create_directories(dir);
    save_checkpoint(out_path, ckpt);
    ledger.note(out_path);

    ResolvedConfig rc;
    rc.add_str("io.checkpoint", in_path);
    rc.add_str("io.out", out_path);
    rc.add_str("stretch.mode", mode_name);
    rc.add_num("stretch.ratio", spec.ratio);
    rc.add_int("stretch.keep", spec.keep);
    ledger.write_text(out_path + ".config.json", rc.render());

    std::printf("stretch: %zu -> %zu positions (%s)\n", before, ckpt.model.text_pos.length(),
                mode_name.c_str());
    return ledger.verify();
}

int run_train(TrainSettings& ts, const ModelSettings& ms, bool geometry_flags_given,
              const std::string& data_path, const std::string& vocab_path,
              const std::string& ckpt_in, const std::string& out_path,
              const std::string& log_path) {
    const bool from_checkpoint = !ckpt_in.empty();
    require(!(from_checkpoint && geometry_flags_given),
            "train: model geometry flags conflict with --checkpoint; geometry comes from the "
            "checkpoint");

    auto records = read_dataset_or_die(data_path);
    auto vocab = load_vocab_or_die(vocab_path);
    TrainConfig cfg = ts.finish();

    DualEncoder<float> model;
    std::string pe_mode = "none";
    if (from_checkpoint) {
        auto ckpt = load_checkpoint_or_die<float>(ckpt_in);
        model = std::move(ckpt.model);
        pe_mode = ckpt.pe_mode;
    } else {
        ModelConfig mc = ms.model;
        mc.vocab_size = static_cast<std::size_t>(vocab.size());
        model = init_model<float>(mc);
    }

    auto result = train(cfg, std::move(model), records, vocab, pe_mode);

    ArtifactLedger ledger;
    if (auto dir = fs::path(out_path).parent_path(); !dir.empty()) fs::create_directories(dir);
    save_checkpoint(out_path, result.checkpoint);
    ledger.note(out_path);

    ResolvedConfig rc;
    rc.add_str("io.data", data_path);
    rc.add_str("io.vocab", vocab_path);
    rc.add_str("io.checkpoint", ckpt_in);
    rc.add_str("io.out", out_path);
    rc.add_str("io.log", log_path);
    ts.resolved(rc, "train.", true);
    if (!from_checkpoint) ms.resolved(rc, "model.");
    ledger.write_text(out_path + ".config.json", rc.render());

    if (!log_path.empty()) ledger.write_text(log_path, epochs_log_text(result.epochs));

    std::printf("train: %s, %zu epochs, %llu steps, final loss %.6f -> %s\n",
                train_variant_name(cfg.variant), result.epochs.size(),
                static_cast<unsigned long long>(result.checkpoint.step),
                result.epochs.back().total, out_path.c_str());
    return ledger.verify();
}

int run_eval_retrieval(const std::string& data_path, const std::string& vocab_path,
                       const std::string& ckpt_path, const std::string& out_path,
                       const std::string& ks_csv, const std::string& direction,
                       const std::string& captions) {
    require(captions == "long" || captions == "short",
            "eval-retrieval: captions must be long or short, got '" + captions + "'");
    require(direction == "both" || direction == "image_to_text" || direction == "text_to_image",
            "eval-retrieval: direction must be both, image_to_text, or text_to_image, got '" +
                direction + "'");

    auto records = read_dataset_or_die(data_path);
    auto vocab = load_vocab_or_die(vocab_path);
    auto ckpt = load_checkpoint_or_die<float>(ckpt_path);
    const auto ks = parse_size_list(ks_csv, "eval-retrieval ks");

    std::vector<Matrix<float>> images;
    std::vector<TokenSequence> texts;
    images.reserve(records.size());
    texts.reserve(records.size());
    for (const auto& r : records) {
        images.push_back(detail::cast_image<float>(r.image));
        texts.push_back(tokenize(captions == "long" ? r.long_text : r.short_text, vocab,
                                 ckpt.model.config.context_len));
    }
    const auto img_embs = embed_image_batch(ckpt.model, images);
    const auto txt_embs = embed_text_batch(ckpt.model, texts);

    std::string body;
    if (direction == "both") {
        body = retrieval_pair_json(recall_at_k(img_embs, txt_embs, ks));
    } else {
        const auto& queries = direction == "image_to_text" ? img_embs : txt_embs;
        const auto& gallery = direction == "image_to_text" ? txt_embs : img_embs;
        body = retrieval_report_json(recall_against_gallery(queries, gallery, ks, direction));
    }

    ArtifactLedger ledger;
    ledger.write_text(out_path, body + "\n");

    ResolvedConfig rc;
    rc.add_str("io.data", data_path);
    rc.add_str("io.vocab", vocab_path);
    rc.add_str("io.checkpoint", ckpt_path);
    rc.add_str("io.out", out_path);
    rc.add("eval.ks", render_size_list(ks));
    rc.add_str("eval.direction", direction);
    rc.add_str("eval.captions", captions);
    ledger.write_text(out_path + ".config.json", rc.render());

    std::printf("eval-retrieval: %zu queries (%s captions) -> %s\n", records.size(),
                captions.c_str(), out_path.c_str());
    return ledger.verify();
}

int run_eval_classify(const std::string& data_path, const std::string& vocab_path,
                      const std::string& ckpt_path, const std::string& out_path,
                      std::size_t max_classes) {
    auto records = read_dataset_or_die(data_path);
    auto vocab = load_vocab_or_die(vocab_path);
    auto ckpt = load_checkpoint_or_die<float>(ckpt_path);

    const ClassTask task = derive_class_task(records, max_classes);
    std::vector<Matrix<float>> images;
    images.reserve(task.kept.size());
    for (auto idx : task.kept) images.push_back(detail::cast_image<float>(records[idx].image));

    const auto report = zero_shot_classify(ckpt.model, vocab, images, task.labels,
                                           task.class_names, default_prompt_templates());

    std::string body = "{";
    body += "\"accuracy\":" + format_g17(report.accuracy);
    body += ",\"n_images\":" + std::to_string(report.n_images);
    body += ",\"n_classes\":" + std::to_string(task.class_names.size());
    body += ",\"unk_words\":" + std::to_string(report.unk_words);
    body += ",\"class_names\":[";
    for (std::size_t i = 0; i < task.class_names.size(); ++i)
        body += (i ? "," : "") + ("\"" + json_escape(task.class_names[i]) + "\"");
    body += "]}";

    ArtifactLedger ledger;
    ledger.write_text(out_path, body + "\n");

    ResolvedConfig rc;
    rc.add_str("io.data", data_path);
    rc.add_str("io.vocab", vocab_path);
    rc.add_str("io.checkpoint", ckpt_path);
    rc.add_str("io.out", out_path);
    rc.add_int("eval.max_classes", max_classes);
    ledger.write_text(out_path + ".config.json", rc.render());

    std::printf("eval-classify: accuracy %.4f on %zu images, %zu classes -> %s\n", report.accuracy,
                report.n_images, task.class_names.size(), out_path.c_str());
    return ledger.verify();
}

int run_probe_length(const std::string& data_path, const std::string& vocab_path,
                     const std::string& ckpt_path, const std::string& out_path,
                     const std::string& json_path, const std::string& lengths_csv,
                     const std::string& tag) {
    auto records = read_dataset_or_die(data_path);
    auto vocab = load_vocab_or_die(vocab_path);
    auto ckpt = load_checkpoint_or_die<float>(ckpt_path);
    const auto lengths = parse_size_list(lengths_csv, "probe-length lengths");

    const auto curve = effective_length_probe(ckpt.model, records, vocab, lengths, tag);

    ArtifactLedger ledger;
    ledger.write_text(out_path, probe_curve_csv(curve));
    if (!json_path.empty()) ledger.write_text(json_path, probe_curve_json(curve) + "\n");

    ResolvedConfig rc;
    rc.add_str("io.data", data_path);
    rc.add_str("io.vocab", vocab_path);
    rc.add_str("io.checkpoint", ckpt_path);
    rc.add_str("io.out", out_path);
    rc.add_str("io.json", json_path);
    rc.add("probe.lengths", render_size_list(lengths));
    rc.add_str("probe.tag", tag);
    ledger.write_text(out_path + ".config.json", rc.render());

    std::printf("probe-length: %zu budgets -> %s\n", curve.lengths.size(), out_path.c_str());
    return ledger.verify();
}

int run_ablation_suite(ExperimentConfig& cfg, TrainSettings& base_ts, TrainSettings& ft_ts,
                       const ModelSettings& ms, const std::string& out_dir) {
    cfg.model = ms.model;
    cfg.baseline = base_ts.finish();
    cfg.finetune = ft_ts.finish();

    auto outcome = run_experiment<float>(cfg, all_recipe_names());

    ArtifactLedger ledger;
    fs::create_directories(out_dir);
    const std::string table_path = (fs::path(out_dir) / "ablation.json").string();
    ledger.write_text(table_path, ablation_table_json(outcome.table) + "\n");

    ResolvedConfig rc;
    rc.add_str("io.out", out_dir);
    rc.add_int("exp.data_seed", cfg.data_seed);
    rc.add_int("exp.train_scenes", cfg.train_scenes);
    rc.add_int("exp.eval_scenes", cfg.eval_scenes);
    rc.add_num("exp.kps_ratio", cfg.kps_ratio);
    rc.add_int("exp.kps_keep", cfg.kps_keep);
    rc.add_num("exp.linear_ratio", cfg.linear_ratio);
    rc.add_int("gen.n_attributes", cfg.gen.n_attributes);
    rc.add_int("gen.primary_count", cfg.gen.primary_count);
    rc.add_int("gen.shared_count", cfg.gen.shared_count);
    rc.add_int("gen.group_size", cfg.gen.group_size);
    rc.add_int("gen.grid", cfg.gen.grid);
    rc.add_int("gen.channels", cfg.gen.channels);
    rc.add_num("gen.kernel_sigma", cfg.gen.kernel_sigma);
    ms.resolved(rc, "model.");
    base_ts.resolved(rc, "base.", false);
    ft_ts.resolved(rc, "ft.", false);
    ledger.write_text((fs::path(out_dir) / "ablation-suite.config.json").string(), rc.render());

    std::printf("ablation-suite: reference %s long=%.3f short=%.3f\n",
                outcome.table.reference.name.c_str(), outcome.table.reference.long_r1,
                outcome.table.reference.short_r1);
    for (const auto& row : outcome.table.rows)
        std::printf("  %-16s long=%.3f short=%.3f mean=%.3f\n", row.name.c_str(), row.long_r1,
                    row.short_r1, row.mean_r1);
    return ledger.verify();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale dual-encoder laboratory"};
    app.require_subcommand(1);

    // gen-data ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic caption/image corpus");
    std::string gen_config, gen_out = ".";
    GenSettings gen_s;
    GenSettings gen_sh;  // shadow for flag-beats-file
    Overrides gen_ov;
    gen->add_option("--config", gen_config, "JSON config file");
    gen_ov.bind(gen->add_option("--out", gen_out, "output directory"), [] {});
    gen_ov.bind(gen->add_option("--seed", gen_sh.seed, "data subsystem seed"),
                [&] { gen_s.seed = gen_sh.seed; });
    gen_ov.bind(gen->add_option("--n", gen_sh.n, "number of scenes"), [&] { gen_s.n = gen_sh.n; });
    gen_ov.bind(gen->add_option("--attributes", gen_sh.gen.n_attributes, "attributes per scene"),
                [&] { gen_s.gen.n_attributes = gen_sh.gen.n_attributes; });
    gen_ov.bind(gen->add_option("--primary-count", gen_sh.gen.primary_count,
                                "attributes in the short caption"),
                [&] { gen_s.gen.primary_count = gen_sh.gen.primary_count; });
    gen_ov.bind(gen->add_option("--shared-count", gen_sh.gen.shared_count,
                                "attributes shared within a sibling group"),
                [&] { gen_s.gen.shared_count = gen_sh.gen.shared_count; });
    gen_ov.bind(gen->add_option("--group-size", gen_sh.gen.group_size, "scenes per sibling group"),
                [&] { gen_s.gen.group_size = gen_sh.gen.group_size; });
    gen_ov.bind(gen->add_option("--grid", gen_sh.gen.grid, "image grid side"),
                [&] { gen_s.gen.grid = gen_sh.gen.grid; });
    gen_ov.bind(gen->add_option("--channels", gen_sh.gen.channels, "image feature channels"),
                [&] { gen_s.gen.channels = gen_sh.gen.channels; });
    gen_ov.bind(
        gen->add_option("--kernel-sigma", gen_sh.gen.kernel_sigma, "attribute cell blur width"),
        [&] { gen_s.gen.kernel_sigma = gen_sh.gen.kernel_sigma; });

    // stretch ----------------------------------------------------------------
    auto* str_cmd = app.add_subcommand("stretch", "stretch a checkpoint's positional table");
    std::string str_config, str_in, str_out = "stretched.ckpt";
    std::string str_mode = "kps", str_mode_sh = "kps";
    StretchSpec str_spec, str_sh;
    Overrides str_ov;
    str_cmd->add_option("--config", str_config, "JSON config file");
    str_ov.bind(str_cmd->add_option("--checkpoint", str_in, "input checkpoint"), [] {});
    str_ov.bind(str_cmd->add_option("--out", str_out, "output checkpoint"), [] {});
    str_ov.bind(str_cmd->add_option("--mode", str_mode_sh, "linear or kps"),
                [&] { str_mode = str_mode_sh; });
    str_ov.bind(str_cmd->add_option("--ratio", str_sh.ratio, "stretch ratio >= 1"),
                [&] { str_spec.ratio = str_sh.ratio; });
    str_ov.bind(str_cmd->add_option("--keep", str_sh.keep, "kept prefix rows (kps only)"),
                [&] { str_spec.keep = str_sh.keep; });

    // train --------------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train or fine-tune a dual encoder");
    std::string tr_config, tr_data, tr_vocab, tr_ckpt, tr_out = "model.ckpt", tr_log;
    TrainSettings tr_ts, tr_sh;
    ModelSettings tr_ms, tr_ms_sh;
    Overrides tr_ov;
    tr->add_option("--config", tr_config, "JSON config file");
    tr->add_option("--data", tr_data, "training dataset (jsonl)");
    tr->add_option("--vocab", tr_vocab, "vocabulary file");
    tr->add_option("--checkpoint", tr_ckpt, "starting checkpoint (omit to initialize fresh)");
    tr->add_option("--out", tr_out, "output checkpoint");
    tr->add_option("--log", tr_log, "epoch log file (wall times live here)");
    tr_ov.bind(tr->add_option("--variant", tr_sh.variant_name,
                              "short_baseline|direct_ft|kps_pcm|undistinguished|mixed_length|"
                              "bounded"),
               [&] { tr_ts.variant_name = tr_sh.variant_name; });
    tr_ov.bind(tr->add_option("--batch-size", tr_sh.train.batch_size, "records per step"),
               [&] { tr_ts.train.batch_size = tr_sh.train.batch_size; });
    tr_ov.bind(tr->add_option("--epochs", tr_sh.train.epochs, "training epochs"),
               [&] { tr_ts.train.epochs = tr_sh.train.epochs; });
    tr_ov.bind(tr->add_option("--learning-rate", tr_sh.train.learning_rate, "peak adamw lr"),
               [&] { tr_ts.train.learning_rate = tr_sh.train.learning_rate; });
    tr_ov.bind(tr->add_option("--weight-decay", tr_sh.train.weight_decay, "decoupled decay"),
               [&] { tr_ts.train.weight_decay = tr_sh.train.weight_decay; });
    tr_ov.bind(tr->add_option("--warmup-iters", tr_sh.train.warmup_iters, "linear warmup steps"),
               [&] { tr_ts.train.warmup_iters = tr_sh.train.warmup_iters; });
    tr_ov.bind(tr->add_option("--seed-shuffle", tr_sh.train.seed, "shuffle subsystem seed"),
               [&] { tr_ts.train.seed = tr_sh.train.seed; });
    tr_ov.bind(tr->add_option("--seed-mixed-mask", tr_sh.mixed_seed_value,
                              "mixed-mask subsystem seed (defaults to the shuffle seed)"),
               [&] {
                   tr_ts.mixed_seed_value = tr_sh.mixed_seed_value;
                   tr_ts.mixed_seed_set = true;
               });
    tr_ov.bind(tr->add_option("--clip-norm", tr_sh.train.clip_norm, "global grad-norm clip"),
               [&] { tr_ts.train.clip_norm = tr_sh.train.clip_norm; });
    tr_ov.bind(tr->add_option("--mixed-rate", tr_sh.train.mixed_rate,
                              "short substitution fraction (mixed_length)"),
               [&] { tr_ts.train.mixed_rate = tr_sh.train.mixed_rate; });
    tr_ov.bind(tr->add_option("--schedule", tr_sh.schedule_name, "constant or cosine"),
               [&] { tr_ts.schedule_name = tr_sh.schedule_name; });
    tr_ov.bind(tr->add_option("--alpha", tr_sh.train.loss.alpha_loss, "coarse-term weight"),
               [&] { tr_ts.train.loss.alpha_loss = tr_sh.train.loss.alpha_loss; });
    tr_ov.bind(tr->add_option("--k-components", tr_sh.train.loss.k_components,
                              "kept principal directions"),
               [&] { tr_ts.train.loss.k_components = tr_sh.train.loss.k_components; });
    tr_ov.bind(tr->add_option("--beta-bound", tr_sh.train.loss.beta_bound,
                              "bounded-variant penalty weight"),
               [&] { tr_ts.train.loss.beta_bound = tr_sh.train.loss.beta_bound; });
    const std::size_t tr_geom_first = tr_ov.opts.size();
    tr_ov.bind(tr->add_option("--context", tr_ms_sh.model.context_len, "text context length"),
               [&] { tr_ms.model.context_len = tr_ms_sh.model.context_len; });
    tr_ov.bind(tr->add_option("--d-model", tr_ms_sh.model.d_model, "encoder width"),
               [&] { tr_ms.model.d_model = tr_ms_sh.model.d_model; });
    tr_ov.bind(tr->add_option("--layers", tr_ms_sh.model.n_layers, "transformer blocks"),
               [&] { tr_ms.model.n_layers = tr_ms_sh.model.n_layers; });
    tr_ov.bind(tr->add_option("--heads", tr_ms_sh.model.n_heads, "attention heads"),
               [&] { tr_ms.model.n_heads = tr_ms_sh.model.n_heads; });
    tr_ov.bind(tr->add_option("--d-embed", tr_ms_sh.model.d_embed, "shared embedding dim"),
               [&] { tr_ms.model.d_embed = tr_ms_sh.model.d_embed; });
    tr_ov.bind(tr->add_option("--image-grid", tr_ms_sh.model.image_grid, "image grid side"),
               [&] { tr_ms.model.image_grid = tr_ms_sh.model.image_grid; });
    tr_ov.bind(tr->add_option("--image-channels", tr_ms_sh.model.image_channels,
                              "image feature channels"),
               [&] { tr_ms.model.image_channels = tr_ms_sh.model.image_channels; });
    tr_ov.bind(tr->add_option("--seed-init", tr_ms_sh.model.init_seed, "init subsystem seed"),
               [&] { tr_ms.model.init_seed = tr_ms_sh.model.init_seed; });
    tr_ov.bind(tr->add_option("--temperature-init", tr_ms_sh.model.temperature_init,
                              "initial log temperature"),
               [&] { tr_ms.model.temperature_init = tr_ms_sh.model.temperature_init; });
    const std::size_t tr_geom_last = tr_ov.opts.size();

    // eval-retrieval -----------------------------------------------------------
    auto* er = app.add_subcommand("eval-retrieval", "recall@k retrieval report");
    std::string er_config, er_data, er_vocab, er_ckpt, er_out = "retrieval.json";
    std::string er_ks = "1,5,10", er_dir = "both", er_cap = "long";
    std::string er_ks_sh = er_ks, er_dir_sh = er_dir, er_cap_sh = er_cap;
    Overrides er_ov;
    er->add_option("--config", er_config, "JSON config file");
    er->add_option("--data", er_data, "evaluation dataset (jsonl)");
    er->add_option("--vocab", er_vocab, "vocabulary file");
    er->add_option("--checkpoint", er_ckpt, "model checkpoint");
    er->add_option("--out", er_out, "report path (json)");
    er_ov.bind(er->add_option("--ks", er_ks_sh, "ascending cutoffs, e.g. 1,5,10"),
               [&] { er_ks = er_ks_sh; });
    er_ov.bind(er->add_option("--direction", er_dir_sh, "both|image_to_text|text_to_image"),
               [&] { er_dir = er_dir_sh; });
    er_ov.bind(er->add_option("--captions", er_cap_sh, "long or short"),
               [&] { er_cap = er_cap_sh; });

    // eval-classify -------------------------------------------------------------
    auto* ec = app.add_subcommand("eval-classify", "zero-shot classification report");
    std::string ec_config, ec_data, ec_vocab, ec_ckpt, ec_out = "classify.json";
    std::size_t ec_classes = 8, ec_classes_sh = 8;
    Overrides ec_ov;
    ec->add_option("--config", ec_config, "JSON config file");
    ec->add_option("--data", ec_data, "evaluation dataset (jsonl)");
    ec->add_option("--vocab", ec_vocab, "vocabulary file");
    ec->add_option("--checkpoint", ec_ckpt, "model checkpoint");
    ec->add_option("--out", ec_out, "report path (json)");
    ec_ov.bind(ec->add_option("--max-classes", ec_classes_sh, "most frequent classes kept"),
               [&] { ec_classes = ec_classes_sh; });

    // probe-length ---------------------------------------------------------------
    auto* pl = app.add_subcommand("probe-length", "text-to-image recall as captions truncate");
    std::string pl_config, pl_data, pl_vocab, pl_ckpt, pl_out = "probe.csv", pl_json, pl_tag;
    std::string pl_lengths = "5,10,15,20,30,40,60";
    std::string pl_lengths_sh = pl_lengths, pl_tag_sh;
    Overrides pl_ov;
    pl->add_option("--config", pl_config, "JSON config file");
    pl->add_option("--data", pl_data, "evaluation dataset (jsonl)");
    pl->add_option("--vocab", pl_vocab, "vocabulary file");
    pl->add_option("--checkpoint", pl_ckpt, "model checkpoint");
    pl->add_option("--out", pl_out, "curve path (csv)");
    pl->add_option("--json", pl_json, "optional curve path (json)");
    pl_ov.bind(pl->add_option("--lengths", pl_lengths_sh, "word budgets, e.g. 5,10,20,40"),
               [&] { pl_lengths = pl_lengths_sh; });
    pl_ov.bind(pl->add_option("--tag", pl_tag_sh, "model tag recorded in the json"),
               [&] { pl_tag = pl_tag_sh; });

    // ablation-suite ---------------------------------------------------------------
    auto* ab = app.add_subcommand("ablation-suite",
                                  "short-caption base, stretch/fine-tune grid, alternatives");
    std::string ab_config, ab_out = ".";
    ExperimentConfig ab_cfg;
    ExperimentConfig ab_sh;
    ModelSettings ab_ms;
    ab_ms.model = ab_cfg.model;
    TrainSettings ab_base, ab_ft;
    ab_base.train = ab_cfg.baseline;
    ab_base.variant_name = "short_baseline";
    ab_base.schedule_name = lr_schedule_name(ab_cfg.baseline.schedule);
    ab_ft.train = ab_cfg.finetune;
    ab_ft.variant_name = "kps_pcm";
    ab_ft.schedule_name = lr_schedule_name(ab_cfg.finetune.schedule);
    Overrides ab_ov;
    ab->add_option("--config", ab_config, "JSON config file");
    ab->add_option("--out", ab_out, "output directory");
    ab_ov.bind(ab->add_option("--seed-data", ab_sh.data_seed, "data subsystem seed"),
               [&] { ab_cfg.data_seed = ab_sh.data_seed; });
    ab_ov.bind(ab->add_option("--scenes", ab_sh.train_scenes, "training scenes"),
               [&] { ab_cfg.train_scenes = ab_sh.train_scenes; });
    ab_ov.bind(ab->add_option("--eval-scenes", ab_sh.eval_scenes, "held-out scenes"),
               [&] { ab_cfg.eval_scenes = ab_sh.eval_scenes; });
    ab_ov.bind(ab->add_option("--kps-ratio", ab_sh.kps_ratio, "tail compression ratio"),
               [&] { ab_cfg.kps_ratio = ab_sh.kps_ratio; });
    ab_ov.bind(ab->add_option("--kps-keep", ab_sh.kps_keep, "kept prefix rows"),
               [&] { ab_cfg.kps_keep = ab_sh.kps_keep; });
    ab_ov.bind(ab->add_option("--linear-ratio", ab_sh.linear_ratio, "uniform stretch ratio"),
               [&] { ab_cfg.linear_ratio = ab_sh.linear_ratio; });

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            KeyedConfig kc;
            gen_s.register_keys(kc);
            kc.on("io.out", [&](const nlohmann::json& v) { gen_out = v.get<std::string>(); });
            if (!gen_config.empty()) kc.apply_file(gen_config);
            gen_ov.commit();
            require_path(gen_out, "--out");
            return run_gen_data(gen_s, gen_out);
        }
        if (str_cmd->parsed()) {
            KeyedConfig kc;
            kc.on("io.checkpoint", [&](const nlohmann::json& v) { str_in = v.get<std::string>(); });
            kc.on("io.out", [&](const nlohmann::json& v) { str_out = v.get<std::string>(); });
            kc.on("stretch.mode",
                  [&](const nlohmann::json& v) { str_mode = v.get<std::string>(); });
            kc.on("stretch.ratio",
                  [&](const nlohmann::json& v) { str_spec.ratio = v.get<double>(); });
            kc.on("stretch.keep",
                  [&](const nlohmann::json& v) { str_spec.keep = v.get<std::size_t>(); });
            if (!str_config.empty()) kc.apply_file(str_config);
            str_ov.commit();
            require_path(str_in, "--checkpoint");
            require_path(str_out, "--out");
            return run_stretch(str_in, str_out, str_mode, str_spec);
        }
        if (tr->parsed()) {
            KeyedConfig kc;
            tr_ts.register_keys(kc, "train.", true);
            tr_ms.register_keys(kc, "model.");
            kc.on("io.data", [&](const nlohmann::json& v) { tr_data = v.get<std::string>(); });
            kc.on("io.vocab", [&](const nlohmann::json& v) { tr_vocab = v.get<std::string>(); });
            kc.on("io.checkpoint", [&](const nlohmann::json& v) { tr_ckpt = v.get<std::string>(); });
            kc.on("io.out", [&](const nlohmann::json& v) { tr_out = v.get<std::string>(); });
            kc.on("io.log", [&](const nlohmann::json& v) { tr_log = v.get<std::string>(); });
            if (!tr_config.empty()) kc.apply_file(tr_config);
            tr_ov.commit();
            require_path(tr_data, "--data");
            require_path(tr_vocab, "--vocab");
            require_path(tr_out, "--out");
            const bool geom_flags = tr_ov.count(tr_geom_first, tr_geom_last) > 0;
            return run_train(tr_ts, tr_ms, geom_flags, tr_data, tr_vocab, tr_ckpt, tr_out, tr_log);
        }
        if (er->parsed()) {
            KeyedConfig kc;
            kc.on("io.data", [&](const nlohmann::json& v) { er_data = v.get<std::string>(); });
            kc.on("io.vocab", [&](const nlohmann::json& v) { er_vocab = v.get<std::string>(); });
            kc.on("io.checkpoint", [&](const nlohmann::json& v) { er_ckpt = v.get<std::string>(); });
            kc.on("io.out", [&](const nlohmann::json& v) { er_out = v.get<std::string>(); });
            kc.on("eval.ks", [&](const nlohmann::json& v) { er_ks = v.get<std::string>(); });
            kc.on("eval.direction", [&](const nlohmann::json& v) { er_dir = v.get<std::string>(); });
            kc.on("eval.captions", [&](const nlohmann::json& v) { er_cap = v.get<std::string>(); });
            if (!er_config.empty()) kc.apply_file(er_config);
            er_ov.commit();
            require_path(er_data, "--data");
            require_path(er_vocab, "--vocab");
            require_path(er_ckpt, "--checkpoint");
            require_path(er_out, "--out");
            return run_eval_retrieval(er_data, er_vocab, er_ckpt, er_out, er_ks, er_dir, er_cap);
        }
        if (ec->parsed()) {
            KeyedConfig kc;
            kc.on("io.data", [&](const nlohmann::json& v) { ec_data = v.get<std::string>(); });
            kc.on("io.vocab", [&](const nlohmann::json& v) { ec_vocab = v.get<std::string>(); });
            kc.on("io.checkpoint", [&](const nlohmann::json& v) { ec_ckpt = v.get<std::string>(); });
            kc.on("io.out", [&](const nlohmann::json& v) { ec_out = v.get<std::string>(); });
            kc.on("eval.max_classes",
                  [&](const nlohmann::json& v) { ec_classes = v.get<std::size_t>(); });
            if (!ec_config.empty()) kc.apply_file(ec_config);
            ec_ov.commit();
            require_path(ec_data, "--data");
            require_path(ec_vocab, "--vocab");
            require_path(ec_ckpt, "--checkpoint");
            require_path(ec_out, "--out");
            return run_eval_classify(ec_data, ec_vocab, ec_ckpt, ec_out, ec_classes);
        }
        if (pl->parsed()) {
            KeyedConfig kc;
            kc.on("io.data", [&](const nlohmann::json& v) { pl_data = v.get<std::string>(); });
            kc.on("io.vocab", [&](const nlohmann::json& v) { pl_vocab = v.get<std::string>(); });
            kc.on("io.checkpoint", [&](const nlohmann::json& v) { pl_ckpt = v.get<std::string>(); });
            kc.on("io.out", [&](const nlohmann::json& v) { pl_out = v.get<std::string>(); });
            kc.on("io.json", [&](const nlohmann::json& v) { pl_json = v.get<std::string>(); });
            kc.on("probe.lengths",
                  [&](const nlohmann::json& v) { pl_lengths = v.get<std::string>(); });
            kc.on("probe.tag", [&](const nlohmann::json& v) { pl_tag = v.get<std::string>(); });
            if (!pl_config.empty()) kc.apply_file(pl_config);
            pl_ov.commit();
            require_path(pl_data, "--data");
            require_path(pl_vocab, "--vocab");
            require_path(pl_ckpt, "--checkpoint");
            require_path(pl_out, "--out");
            return run_probe_length(pl_data, pl_vocab, pl_ckpt, pl_out, pl_json, pl_lengths,
                                    pl_tag);
        }
        if (ab->parsed()) {
            KeyedConfig kc;
            kc.on("io.out", [&](const nlohmann::json& v) { ab_out = v.get<std::string>(); });
            kc.on("exp.data_seed",
                  [&](const nlohmann::json& v) { ab_cfg.data_seed = v.get<std::uint64_t>(); });
            kc.on("exp.train_scenes",
                  [&](const nlohmann::json& v) { ab_cfg.train_scenes = v.get<std::size_t>(); });
            kc.on("exp.eval_scenes",
                  [&](const nlohmann::json& v) { ab_cfg.eval_scenes = v.get<std::size_t>(); });
            kc.on("exp.kps_ratio",
                  [&](const nlohmann::json& v) { ab_cfg.kps_ratio = v.get<double>(); });
            kc.on("exp.kps_keep",
                  [&](const nlohmann::json& v) { ab_cfg.kps_keep = v.get<std::size_t>(); });
            kc.on("exp.linear_ratio",
                  [&](const nlohmann::json& v) { ab_cfg.linear_ratio = v.get<double>(); });
            kc.on("gen.n_attributes",
                  [&](const nlohmann::json& v) { ab_cfg.gen.n_attributes = v.get<std::size_t>(); });
            kc.on("gen.primary_count", [&](const nlohmann::json& v) {
                ab_cfg.gen.primary_count = v.get<std::size_t>();
            });
            kc.on("gen.shared_count",
                  [&](const nlohmann::json& v) { ab_cfg.gen.shared_count = v.get<std::size_t>(); });
            kc.on("gen.group_size",
                  [&](const nlohmann::json& v) { ab_cfg.gen.group_size = v.get<std::size_t>(); });
            kc.on("gen.grid",
                  [&](const nlohmann::json& v) { ab_cfg.gen.grid = v.get<std::size_t>(); });
            kc.on("gen.channels",
                  [&](const nlohmann::json& v) { ab_cfg.gen.channels = v.get<std::size_t>(); });
            kc.on("gen.kernel_sigma",
                  [&](const nlohmann::json& v) { ab_cfg.gen.kernel_sigma = v.get<double>(); });
            ab_ms.register_keys(kc, "model.");
            ab_base.register_keys(kc, "base.", false);
            ab_ft.register_keys(kc, "ft.", false);
            if (!ab_config.empty()) kc.apply_file(ab_config);
            ab_ov.commit();
            require_path(ab_out, "--out");
            return run_ablation_suite(ab_cfg, ab_base, ab_ft, ab_ms, ab_out);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
