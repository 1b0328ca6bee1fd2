#pragma once

// Masked-LM pretraining and the sequential fine-tuning chain: one model
// threaded through the configured language order, each stage validated only
// on its own language's held-out split. Everything derives from the run
// seed; identical configs reproduce identical reports and checkpoints.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xchain/data.hpp"
#include "xchain/errors.hpp"
#include "xchain/eval.hpp"
#include "xchain/model.hpp"
#include "xchain/optimizer.hpp"
#include "xchain/rng.hpp"
#include "xchain/tokenizer.hpp"

namespace xchain {

struct TrainConfig {
    double learning_rate = 1e-5;
    std::size_t epochs_per_language = 2;
    std::size_t batch_size = 32;
    std::size_t max_len = 50;
    double val_fraction = 0.10;
    double mask_ratio = 0.15;
    std::uint64_t seed = 42;

    void validate() const {
        if (learning_rate <= 0.0) throw ConfigError("TrainConfig: learning_rate must be positive");
        if (epochs_per_language == 0)
            throw ConfigError("TrainConfig: epochs_per_language must be positive");
        if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
        if (max_len < 3) throw ConfigError("TrainConfig: max_len must be at least 3");
        if (val_fraction <= 0.0 || val_fraction >= 1.0)
            throw ConfigError("TrainConfig: val_fraction must be in (0, 1)");
        if (mask_ratio < 0.0 || mask_ratio > 1.0)
            throw ConfigError("TrainConfig: mask_ratio must be in [0, 1]");
    }
};

// Reconstructible substreams: the split (and training) randomness for stage
// i depends only on the seed and the stage index, so a validation split can
// be rebuilt outside the chain.
inline Rng chain_split_rng(std::uint64_t seed, std::size_t language_index) {
    return Rng(seed).derive(rng_stream::kSplit, language_index);
}
inline Rng chain_train_rng(std::uint64_t seed, std::size_t language_index) {
    return Rng(seed).derive(rng_stream::kTrain, language_index);
}

// ---------------------------------------------------------------------------
// MLM corruption: each maskable (non-special) position is selected
// independently with probability mask_ratio; selected positions become MASK
// with p_mask, a random non-special token with p_random, and stay unchanged
// otherwise. Targets record the originals.
// ---------------------------------------------------------------------------

struct MaskPolicy {
    double p_mask = 0.8;
    double p_random = 0.1;
};

struct MaskedPosition {
    std::size_t position;
    int original;
};

inline std::pair<TokenSequence, std::vector<MaskedPosition>> mask_tokens(
    const TokenSequence& seq, double mask_ratio, Rng& rng, std::size_t vocab_size,
    const MaskPolicy& policy = {}) {
    if (mask_ratio < 0.0 || mask_ratio > 1.0)
        throw ConfigError("mask_tokens: mask_ratio must be in [0, 1]");
    if (mask_ratio == 0.0) return {seq, {}};

    bool any_maskable = false;
    for (int id : seq.ids) any_maskable |= id >= Vocabulary::kNumSpecials;
    if (!any_maskable)
        throw InputError("mask_tokens: sequence has no maskable (non-special) positions");

    TokenSequence corrupted = seq;
    std::vector<MaskedPosition> targets;
    for (std::size_t i = 0; i < corrupted.ids.size(); ++i) {
        const int id = corrupted.ids[i];
        if (id < Vocabulary::kNumSpecials) continue;
        if (!rng.bernoulli(mask_ratio)) continue;
        targets.push_back({i, id});
        const double r = rng.uniform();
        if (r < policy.p_mask) {
            corrupted.ids[i] = Vocabulary::kMask;
        } else if (r < policy.p_mask + policy.p_random) {
            if (vocab_size > Vocabulary::kNumSpecials)
                corrupted.ids[i] =
                    Vocabulary::kNumSpecials +
                    static_cast<int>(rng.below(vocab_size - Vocabulary::kNumSpecials));
            else
                corrupted.ids[i] = Vocabulary::kMask;
        } // else: keep the original token
    }
    return {corrupted, targets};
}

// ---------------------------------------------------------------------------
// MLM pretraining over language-mixed batches. Returns per-step losses;
// params are updated in place.
// ---------------------------------------------------------------------------

inline std::vector<double> pretrain(ModelParams& params, const Vocabulary& vocab,
                                    const std::vector<std::string>& texts, const TrainConfig& config,
                                    std::size_t steps) {
    config.validate();
    if (texts.empty()) throw InputError("pretrain: empty corpus");
    if (vocab.size() != params.config.vocab_size)
        throw CompatibilityError("pretrain: vocabulary size " + std::to_string(vocab.size()) +
                                 " does not match model vocab_size " +
                                 std::to_string(params.config.vocab_size));
    std::vector<double> losses;
    if (steps == 0) return losses;

    const std::size_t max_len = std::min(config.max_len, params.config.max_positions);
    std::vector<TokenSequence> sequences;
    sequences.reserve(texts.size());
    for (const std::string& t : texts) {
        TokenSequence seq = encode(vocab, t, max_len);
        bool maskable = false;
        for (int id : seq.ids) maskable |= id >= Vocabulary::kNumSpecials;
        if (maskable) sequences.push_back(std::move(seq));
    }
    if (sequences.empty()) throw InputError("pretrain: no sequence has maskable content");

    Rng rng = Rng(config.seed).derive(rng_stream::kPretrain);
    std::vector<Tensor> tensors = params.tensors();
    AdamState adam = make_adam_state(tensors);
    Tape tape;

    std::vector<std::size_t> order(sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::size_t cursor = 0;

    for (std::size_t step = 0; step < steps; ++step) {
        std::vector<TokenSequence> batch;
        std::vector<std::size_t> rows;
        std::vector<std::size_t> targets;
        const std::size_t len = max_len;
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            const TokenSequence& src = sequences[order[cursor++]];
            auto [corrupted, masked] = mask_tokens(src, config.mask_ratio, rng, vocab.size());
            const std::size_t row_base = batch.size() * len;
            batch.push_back(std::move(corrupted));
            for (const MaskedPosition& mp : masked) {
                rows.push_back(row_base + mp.position);
                targets.push_back(static_cast<std::size_t>(mp.original));
            }
        }
        if (targets.empty()) {
            // vanishingly rare at nonzero ratios; skip the update, keep the step
            losses.push_back(losses.empty() ? 0.0 : losses.back());
            continue;
        }
        params.zero_grads();
        tape.clear();
        Tensor logits = forward_mlm(params, batch, RunMode::train, &rng, &tape);
        Tensor picked = gather_rows(logits, rows, &tape);
        Tensor loss = cross_entropy(picked, targets, &tape);
        tape.backward(loss);
        adam_step(tensors, adam, config.learning_rate);
        losses.push_back(loss.item());
    }
    return losses;
}

// ---------------------------------------------------------------------------
// Per-language fine-tuning: stratified 90-10 split, epochs_per_language
// passes of cross-entropy training on the 90%, metrics on the 10% in eval
// mode.
// ---------------------------------------------------------------------------

struct LanguageRecord {
    std::string language;
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    std::vector<double> epoch_losses;
    ConfusionMatrix val_confusion;
    Metrics val_metrics;
    std::vector<std::string> val_ids; // provenance for isolation checks; not serialized
};

inline LanguageRecord finetune_language(ModelParams& params, const Vocabulary& vocab,
                                        const Dataset& dataset, const TrainConfig& config,
                                        std::size_t language_index = 0) {
    config.validate();
    if (dataset.partition == "test")
        throw InputError("finetune_language: refusing to train on test-partition data for '" +
                         dataset.language + "'");
    if (vocab.size() != params.config.vocab_size)
        throw CompatibilityError("finetune_language: vocabulary size does not match the model");

    Rng split_rng = chain_split_rng(config.seed, language_index);
    auto [train_ds, val_ds] = split_stratified(dataset, config.val_fraction, split_rng);
    if (val_ds.examples.empty())
        throw InputError("finetune_language: validation split for '" + dataset.language +
                         "' is empty; dataset too small for val_fraction " +
                         std::to_string(config.val_fraction));

    const std::size_t max_len = std::min(config.max_len, params.config.max_positions);
    std::vector<TokenSequence> encoded;
    std::vector<std::size_t> labels;
    encoded.reserve(train_ds.size());
    for (const LabeledExample& ex : train_ds.examples) {
        encoded.push_back(encode(vocab, ex.text, max_len, ex.language));
        labels.push_back(static_cast<std::size_t>(ex.label));
    }

    Rng rng = chain_train_rng(config.seed, language_index);
    std::vector<Tensor> tensors = params.tensors();
    AdamState adam = make_adam_state(tensors);
    Tape tape;

    LanguageRecord record;
    record.language = dataset.language;
    record.n_train = train_ds.size();
    record.n_val = val_ds.size();
    for (const LabeledExample& ex : val_ds.examples) record.val_ids.push_back(ex.id);

    std::vector<std::size_t> order(encoded.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.epochs_per_language; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<TokenSequence> batch;
            std::vector<std::size_t> batch_labels;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(encoded[order[i]]);
                batch_labels.push_back(labels[order[i]]);
            }
            params.zero_grads();
            tape.clear();
            Tensor logits = forward_classify(params, batch, RunMode::train, &rng, &tape);
            Tensor loss = cross_entropy(logits, batch_labels, &tape);
            tape.backward(loss);
            adam_step(tensors, adam, config.learning_rate);
            loss_sum += loss.item() * static_cast<double>(batch.size());
        }
        record.epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));
    }

    // validation on this language's own split only, eval mode
    std::vector<std::string> val_texts;
    std::vector<int> val_golds;
    for (const LabeledExample& ex : val_ds.examples) {
        val_texts.push_back(ex.text);
        val_golds.push_back(ex.label);
    }
    std::vector<int> preds = predict(params, vocab, val_texts, {config.batch_size, max_len});
    record.val_confusion = confusion(preds, val_golds);
    record.val_metrics = compute_metrics(record.val_confusion);
    return record;
}

// ---------------------------------------------------------------------------
// The chain: fine-tune each language in the configured order, threading the
// parameters through.
// ---------------------------------------------------------------------------

struct ChainReport {
    std::vector<LanguageRecord> languages;
    std::string checkpoint_path; // filled by the caller that writes the file
    std::uint64_t seed = 0;
    TrainConfig train_config;
    ModelConfig model_config;
};

inline ChainReport finetune_chain(ModelParams& params, const Vocabulary& vocab,
                                  const std::vector<std::pair<std::string, Dataset>>& chain,
                                  const TrainConfig& config) {
    config.validate();
    if (chain.empty()) throw InputError("finetune_chain: no datasets given");
    ChainReport report;
    report.seed = config.seed;
    report.train_config = config;
    report.model_config = params.config;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        const auto& [language, dataset] = chain[i];
        if (dataset.language != language)
            throw InputError("finetune_chain: stage " + std::to_string(i) + " is labeled '" +
                             language + "' but its dataset says '" + dataset.language + "'");
        report.languages.push_back(finetune_language(params, vocab, dataset, config, i));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report serialization:
//   {languages: [{lang, n_train, n_val, epoch_losses, metrics}],
//    checkpoint, seed, config}
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json train_config_json(const TrainConfig& t, const ModelConfig& m) {
    nlohmann::ordered_json j;
    j["learning_rate"] = t.learning_rate;
    j["epochs_per_language"] = t.epochs_per_language;
    j["batch_size"] = t.batch_size;
    j["max_len"] = t.max_len;
    j["val_fraction"] = t.val_fraction;
    j["mask_ratio"] = t.mask_ratio;
    j["model"] = {{"vocab_size", m.vocab_size}, {"max_positions", m.max_positions},
                  {"d_model", m.d_model},       {"n_heads", m.n_heads},
                  {"n_layers", m.n_layers},     {"d_ff", m.d_ff},
                  {"dropout_rate", m.dropout_rate}};
    return j;
}

inline nlohmann::ordered_json chain_report_json(const ChainReport& report) {
    nlohmann::ordered_json j;
    j["languages"] = nlohmann::ordered_json::array();
    for (const LanguageRecord& rec : report.languages) {
        nlohmann::ordered_json lang;
        lang["lang"] = rec.language;
        lang["n_train"] = rec.n_train;
        lang["n_val"] = rec.n_val;
        lang["epoch_losses"] = rec.epoch_losses;
        lang["metrics"] = metrics_json(rec.val_metrics, rec.val_confusion);
        j["languages"].push_back(lang);
    }
    j["checkpoint"] = report.checkpoint_path;
    j["seed"] = report.seed;
    j["config"] = train_config_json(report.train_config, report.model_config);
    return j;
}

} // namespace xchain
