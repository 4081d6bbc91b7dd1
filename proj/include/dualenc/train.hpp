#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adamw.hpp"
#include "checkpoint.hpp"
#include "dataset_io.hpp"
#include "encoder.hpp"
#include "pcm.hpp"
#include "vocab.hpp"

namespace dualenc {

enum class TrainVariant {
    short_baseline,
    direct_ft,
    kps_pcm,
    undistinguished,
    mixed_length,
    bounded,
};

inline TrainVariant parse_train_variant(const std::string& s) {
    if (s == "short_baseline") return TrainVariant::short_baseline;
    if (s == "direct_ft") return TrainVariant::direct_ft;
    if (s == "kps_pcm") return TrainVariant::kps_pcm;
    if (s == "undistinguished") return TrainVariant::undistinguished;
    if (s == "mixed_length") return TrainVariant::mixed_length;
    if (s == "bounded") return TrainVariant::bounded;
    throw contract_error("unknown training variant: " + s);
}

inline const char* train_variant_name(TrainVariant v) {
    switch (v) {
        case TrainVariant::short_baseline: return "short_baseline";
        case TrainVariant::direct_ft: return "direct_ft";
        case TrainVariant::kps_pcm: return "kps_pcm";
        case TrainVariant::undistinguished: return "undistinguished";
        case TrainVariant::mixed_length: return "mixed_length";
        case TrainVariant::bounded: return "bounded";
    }
    throw contract_error("unknown training variant value");
}

enum class LrSchedule { constant, cosine };

inline LrSchedule parse_lr_schedule(const std::string& s) {
    if (s == "constant") return LrSchedule::constant;
    if (s == "cosine") return LrSchedule::cosine;
    throw contract_error("unknown lr schedule: " + s + " (expected constant or cosine)");
}

inline const char* lr_schedule_name(LrSchedule s) {
    return s == LrSchedule::constant ? "constant" : "cosine";
}

// Post-warmup decay multiplier. Cosine anneals from 1 at the end of warmup
// to 0 at the final planned step; the constant schedule stays at 1.
inline double lr_schedule_factor(LrSchedule schedule, std::uint64_t step,
                                 std::uint64_t total_steps, std::uint64_t warmup_iters) {
    if (schedule == LrSchedule::constant || step <= warmup_iters || total_steps <= warmup_iters)
        return 1.0;
    const double span = static_cast<double>(total_steps - warmup_iters);
    const double progress =
        std::min(1.0, static_cast<double>(step - warmup_iters) / span);
    return 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 6;
    double learning_rate = 1e-4;
    double weight_decay = 1e-2;
    std::size_t warmup_iters = 200;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    TrainVariant variant = TrainVariant::kps_pcm;
    LossConfig loss;
    double clip_norm = 1.0;    // global-norm gradient clip, <= 0 disables
    double mixed_rate = 0.1;   // short-caption substitution fraction (mixed_length)
    LrSchedule schedule = LrSchedule::constant;
    std::optional<std::uint64_t> mixed_seed;  // mask subsystem seed; defaults to seed

    std::uint64_t mixed_mask_seed() const { return mixed_seed ? *mixed_seed : seed; }

    OptimizerConfig optimizer() const {
        return OptimizerConfig{learning_rate, weight_decay, warmup_iters,
                               adam_beta1,    adam_beta2,   adam_eps};
    }

    void validate() const {
        require(batch_size >= 1, "train config: batch_size must be >= 1");
        require(epochs >= 1, "train config: epochs must be >= 1");
        optimizer().validate();
        loss.validate();
        require(mixed_rate >= 0.0 && mixed_rate <= 1.0,
                "train config: mixed_rate must be in [0,1]");
    }
};

// Means over the epoch's steps; components missing from the variant's
// objective stay zero.
struct EpochLog {
    std::size_t epoch = 0;
    std::size_t steps = 0;
    double total = 0.0;
    double fine = 0.0;
    double coarse = 0.0;
    double penalty = 0.0;
    double wall_seconds = 0.0;
};

struct StepLog {
    double lr = 0.0;           // effective learning rate after warmup scaling
    double logit_scale = 0.0;  // clamped exp(temperature) used for this step's logits
    double total = 0.0;
};

template <typename T>
struct TrainResult {
    Checkpoint<T> checkpoint;
    std::vector<EpochLog> epochs;
    std::vector<StepLog> steps;
    std::size_t long_tokenizations = 0;
    std::size_t short_tokenizations = 0;
    double max_logit_scale = 0.0;
};

namespace detail {

// Tokenizes without truncation so over-length captions are caught here, not
// silently clipped; the context check is the caller's error-before-step gate.
inline TokenSequence tokenize_full(const std::string& text, const Vocabulary& vocab,
                                   std::size_t* calls) {
    ++*calls;
    return tokenize(text, vocab, 1u << 16);
}

template <typename T>
Matrix<T> cast_image(const Matrix<float>& img) {
    Matrix<T> out(img.rows(), img.cols());
    for (std::size_t i = 0; i < img.size(); ++i)
        out.data()[i] = static_cast<T>(img.data()[i]);
    return out;
}

}  // namespace detail

// Runs the variant's objective over the dataset. The result's checkpoint
// carries the final weights, optimizer moments, and step counter; pe_mode
// is passed through for provenance. Deterministic for a fixed seed: epoch
// shuffles and the mixed-substitution mask come from dedicated seed streams.
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, DualEncoder<T> model,
                     const std::vector<DataRecord>& dataset, const Vocabulary& vocab,
                     const std::string& pe_mode = "none") {
    cfg.validate();
    model.config.validate();
    require(!dataset.empty(), "train: dataset is empty");
    require(model.config.vocab_size >= static_cast<std::size_t>(vocab.size()),
            "train: model vocab smaller than vocabulary");

    const std::size_t n = dataset.size();
    const TrainVariant variant = cfg.variant;
    const bool wants_long = variant != TrainVariant::short_baseline;
    const bool wants_short = variant != TrainVariant::direct_ft;

    TrainResult<T> result;

    // Everything that can fail is checked before the first optimizer step:
    // tokenization, context fit, and batch feasibility.
    std::vector<TokenSequence> long_seqs, short_seqs;
    auto check_fit = [&](const TokenSequence& seq, const char* kind, int id) {
        require(seq.length() <= model.config.context_len,
                std::string("train: ") + kind + " caption of record " + std::to_string(id) +
                    " has " + std::to_string(seq.length()) + " tokens, model context is " +
                    std::to_string(model.config.context_len));
    };
    if (wants_long) {
        long_seqs.reserve(n);
        for (const auto& r : dataset) {
            long_seqs.push_back(
                detail::tokenize_full(r.long_text, vocab, &result.long_tokenizations));
            check_fit(long_seqs.back(), "long", r.id);
        }
    }
    if (wants_short) {
        short_seqs.reserve(n);
        for (const auto& r : dataset) {
            short_seqs.push_back(
                detail::tokenize_full(r.short_text, vocab, &result.short_tokenizations));
            check_fit(short_seqs.back(), "short", r.id);
        }
    }
    if (variant == TrainVariant::kps_pcm) {
        const std::size_t tail = n % cfg.batch_size;
        require(n >= 2 && (tail == 0 || tail >= 2 || n < cfg.batch_size),
                "train: kps_pcm needs every batch to hold at least 2 records; adjust batch_size");
    }

    std::vector<Matrix<T>> images;
    images.reserve(n);
    for (const auto& r : dataset) images.push_back(detail::cast_image<T>(r.image));

    // Frozen reference embeddings for the bounded variant: a deep copy of
    // the model before any update defines the drift anchor.
    Matrix<T> frozen_short;
    if (variant == TrainVariant::bounded)
        frozen_short = embed_text_batch(model, short_seqs, cfg.batch_size);

    std::vector<std::string> param_names;
    model.for_each_param(
        [&](const std::string& name, const Matrix<T>&) { param_names.push_back(name); });
    std::vector<std::uint8_t> decay_mask(param_names.size(), 1);
    for (std::size_t i = 0; i < param_names.size(); ++i) {
        const std::string& name = param_names[i];
        const bool bias_like = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
        const bool gain_like = name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
        if (bias_like || gain_like || name == "temperature") decay_mask[i] = 0;
    }

    AdamState<T> state;
    {
        std::vector<const Matrix<T>*> ptrs;
        model.for_each_param(
            [&](const std::string&, const Matrix<T>& p) { ptrs.push_back(&p); });
        state = make_adam_state(ptrs);
    }

    Rng shuffle_rng = Rng(cfg.seed).stream("shuffle");
    Rng mixed_rng = Rng(cfg.mixed_mask_seed()).stream("mixedmask");
    const OptimizerConfig opt_cfg = cfg.optimizer();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::uint64_t step = 0;
    const std::uint64_t planned_steps =
        static_cast<std::uint64_t>(cfg.epochs) * ((n + cfg.batch_size - 1) / cfg.batch_size);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);

        // One substitution draw per (epoch, record), independent of batching.
        std::vector<std::uint8_t> use_short(n, 0);
        if (variant == TrainVariant::mixed_length)
            for (std::size_t i = 0; i < n; ++i)
                use_short[i] = mixed_rng.uniform() < cfg.mixed_rate ? 1 : 0;

        EpochLog log;
        log.epoch = epoch;

        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));

            Tape<T> tape;
            ModelNodes nodes = make_model_nodes(tape, model, true);
            const double t_before = static_cast<double>(model.temperature(0, 0));

            std::vector<Matrix<T>> batch_images;
            batch_images.reserve(batch.size());
            for (auto i : batch) batch_images.push_back(images[i]);
            const std::size_t img_node =
                encode_image_graph(tape, nodes, model.config, batch_images);

            auto encode_batch_text = [&](const std::vector<TokenSequence>& pool) {
                std::vector<TokenSequence> seqs;
                seqs.reserve(batch.size());
                for (auto i : batch) seqs.push_back(pool[i]);
                return encode_text_graph(tape, nodes, model.config, seqs);
            };

            LossNodes parts;
            switch (variant) {
                case TrainVariant::short_baseline: {
                    parts.fine = contrastive_graph(tape, img_node, encode_batch_text(short_seqs),
                                                   nodes.temperature, cfg.loss);
                    parts.total = parts.fine;
                    break;
                }
                case TrainVariant::direct_ft: {
                    parts.fine = contrastive_graph(tape, img_node, encode_batch_text(long_seqs),
                                                   nodes.temperature, cfg.loss);
                    parts.total = parts.fine;
                    break;
                }
                case TrainVariant::kps_pcm: {
                    const auto basis =
                        compute_pce_basis(tape.value(img_node), cfg.loss.k_components);
                    parts = dual_loss_parts(tape, img_node, encode_batch_text(long_seqs),
                                            encode_batch_text(short_seqs), nodes.temperature,
                                            cfg.loss, basis);
                    break;
                }
                case TrainVariant::undistinguished: {
                    parts = undistinguished_loss_parts(
                        tape, img_node, encode_batch_text(long_seqs),
                        encode_batch_text(short_seqs), nodes.temperature, cfg.loss);
                    break;
                }
                case TrainVariant::mixed_length: {
                    std::vector<TokenSequence> seqs;
                    seqs.reserve(batch.size());
                    for (auto i : batch)
                        seqs.push_back(use_short[i] ? short_seqs[i] : long_seqs[i]);
                    parts = mixed_length_loss_parts(
                        tape, img_node, encode_text_graph(tape, nodes, model.config, seqs),
                        nodes.temperature, cfg.loss);
                    break;
                }
                case TrainVariant::bounded: {
                    Matrix<T> ref(batch.size(), model.config.d_embed);
                    for (std::size_t r = 0; r < batch.size(); ++r)
                        for (std::size_t c = 0; c < ref.cols(); ++c)
                            ref(r, c) = frozen_short(batch[r], c);
                    parts = bounded_loss_parts(tape, img_node, encode_batch_text(long_seqs),
                                               encode_batch_text(short_seqs), nodes.temperature,
                                               ref, cfg.loss);
                    break;
                }
            }

            tape.backward(parts.total);

            std::vector<Matrix<T>> grads;
            grads.reserve(nodes.ordered.size());
            for (auto id : nodes.ordered)
                grads.push_back(tape.has_grad(id) ? tape.grad(id)
                                                  : Matrix<T>(tape.value(id).rows(),
                                                              tape.value(id).cols()));
            clip_global_norm(grads, cfg.clip_norm);

            ++step;
            const double decay =
                lr_schedule_factor(cfg.schedule, step, planned_steps, cfg.warmup_iters);
            OptimizerConfig step_cfg = opt_cfg;
            step_cfg.learning_rate *= decay;
            std::size_t t_idx = 0;
            model.for_each_param([&](const std::string&, Matrix<T>& p) {
                const std::size_t i = t_idx++;
                const bool frozen = !tape.has_grad(nodes.ordered[i]);
                if (!frozen)
                    adamw_update_tensor(p, grads[i], state.m[i], state.v[i], step_cfg, step,
                                        decay_mask[i] != 0);
            });
            state.steps = step;

            StepLog s;
            s.lr = cfg.learning_rate * decay * warmup_factor(step, cfg.warmup_iters);
            s.logit_scale = std::clamp(std::exp(t_before), 1.0, 100.0);
            s.total = static_cast<double>(tape.value(parts.total)(0, 0));
            result.max_logit_scale = std::max(result.max_logit_scale, s.logit_scale);
            result.steps.push_back(s);

            log.steps += 1;
            log.total += s.total;
            log.fine += static_cast<double>(tape.value(parts.fine)(0, 0));
            if (parts.coarse != LossNodes::npos)
                log.coarse += static_cast<double>(tape.value(parts.coarse)(0, 0));
            if (parts.penalty != LossNodes::npos)
                log.penalty += static_cast<double>(tape.value(parts.penalty)(0, 0));
        }

        log.total /= static_cast<double>(log.steps);
        log.fine /= static_cast<double>(log.steps);
        log.coarse /= static_cast<double>(log.steps);
        log.penalty /= static_cast<double>(log.steps);
        log.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start)
                .count();
        result.epochs.push_back(log);
    }

    result.checkpoint.model = std::move(model);
    result.checkpoint.pe_mode = pe_mode;
    result.checkpoint.step = step;
    result.checkpoint.opt = std::move(state);
    return result;
}

}  // namespace dualenc
