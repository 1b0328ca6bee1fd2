#pragma once

// Confusion-matrix metrics (positive class = OFF) and batched model
// evaluation. Zero-denominator precision/recall/F1 follow the shared-task
// convention and come out as 0.0.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "xchain/data.hpp"
#include "xchain/errors.hpp"
#include "xchain/model.hpp"
#include "xchain/tokenizer.hpp"

namespace xchain {

struct ConfusionMatrix {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;
    std::uint64_t total() const { return tp + fp + fn + tn; }
};

struct Metrics {
    double accuracy = 0.0;
    double precision_pos = 0.0, recall_pos = 0.0, f1_pos = 0.0;
    double precision_neg = 0.0, recall_neg = 0.0, f1_neg = 0.0;
    double macro_f1 = 0.0;
};

inline ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& golds) {
    if (predictions.size() != golds.size())
        throw InputError("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(golds.size()) + " golds");
    if (predictions.empty()) throw InputError("confusion: empty input");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if ((predictions[i] != 0 && predictions[i] != 1) || (golds[i] != 0 && golds[i] != 1))
            throw InputError("confusion: labels must be 0 or 1, got prediction " +
                             std::to_string(predictions[i]) + ", gold " + std::to_string(golds[i]) +
                             " at index " + std::to_string(i));
        if (predictions[i] == 1 && golds[i] == 1)
            ++cm.tp;
        else if (predictions[i] == 1 && golds[i] == 0)
            ++cm.fp;
        else if (predictions[i] == 0 && golds[i] == 1)
            ++cm.fn;
        else
            ++cm.tn;
    }
    return cm;
}

namespace detail {
inline double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
} // namespace detail

inline Metrics compute_metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw InputError("compute_metrics: empty confusion matrix");
    const double tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp);
    const double fn = static_cast<double>(cm.fn), tn = static_cast<double>(cm.tn);
    Metrics m;
    m.accuracy = (tp + tn) / static_cast<double>(cm.total());
    m.precision_pos = detail::safe_div(tp, tp + fp);
    m.recall_pos = detail::safe_div(tp, tp + fn);
    m.f1_pos = detail::safe_div(2.0 * m.precision_pos * m.recall_pos,
                                m.precision_pos + m.recall_pos);
    m.precision_neg = detail::safe_div(tn, tn + fn);
    m.recall_neg = detail::safe_div(tn, tn + fp);
    m.f1_neg = detail::safe_div(2.0 * m.precision_neg * m.recall_neg,
                                m.precision_neg + m.recall_neg);
    m.macro_f1 = (m.f1_pos + m.f1_neg) / 2.0;
    return m;
}

// ---------------------------------------------------------------------------
// Batched inference. Argmax over the two logits; ties break toward NOT.
// ---------------------------------------------------------------------------

struct EvalConfig {
    std::size_t batch_size = 32;
    std::size_t max_len = 50;
};

inline std::vector<int> predict(const ModelParams& params, const Vocabulary& vocab,
                                const std::vector<std::string>& texts, const EvalConfig& cfg = {}) {
    if (vocab.size() != params.config.vocab_size)
        throw CompatibilityError("predict: vocabulary size " + std::to_string(vocab.size()) +
                                 " does not match model vocab_size " +
                                 std::to_string(params.config.vocab_size));
    if (cfg.max_len > params.config.max_positions)
        throw CompatibilityError("predict: max_len " + std::to_string(cfg.max_len) +
                                 " exceeds model max_positions " +
                                 std::to_string(params.config.max_positions));
    if (cfg.batch_size == 0) throw ConfigError("predict: batch_size must be positive");
    std::vector<int> out;
    out.reserve(texts.size());
    for (std::size_t start = 0; start < texts.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(texts.size(), start + cfg.batch_size);
        std::vector<TokenSequence> batch;
        batch.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) batch.push_back(encode(vocab, texts[i], cfg.max_len));
        Tensor logits = forward_classify(params, batch, RunMode::eval);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const double off = logits.data()[i * 2 + 1];
            const double not_ = logits.data()[i * 2 + 0];
            out.push_back(off > not_ ? 1 : 0);
        }
    }
    return out;
}

inline Metrics evaluate(const ModelParams& params, const Vocabulary& vocab, const Dataset& dataset,
                        const EvalConfig& cfg = {}) {
    if (dataset.examples.empty()) throw InputError("evaluate: empty dataset");
    std::vector<std::string> texts;
    std::vector<int> golds;
    texts.reserve(dataset.size());
    for (const LabeledExample& ex : dataset.examples) {
        texts.push_back(ex.text);
        golds.push_back(ex.label);
    }
    return compute_metrics(confusion(predict(params, vocab, texts, cfg), golds));
}

// ---------------------------------------------------------------------------
// JSON report. Values are rounded to 3 decimals for presentation.
// ---------------------------------------------------------------------------

inline double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

inline nlohmann::ordered_json metrics_json(const Metrics& m, const ConfusionMatrix& cm) {
    nlohmann::ordered_json j;
    j["n"] = cm.total();
    j["confusion"] = {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}};
    j["accuracy"] = round3(m.accuracy);
    j["pos"] = {{"p", round3(m.precision_pos)}, {"r", round3(m.recall_pos)}, {"f1", round3(m.f1_pos)}};
    j["neg"] = {{"p", round3(m.precision_neg)}, {"r", round3(m.recall_neg)}, {"f1", round3(m.f1_neg)}};
    j["macro_f1"] = round3(m.macro_f1);
    return j;
}

inline nlohmann::ordered_json metrics_report(const std::string& language, const std::string& partition,
                                             const Metrics& m, const ConfusionMatrix& cm) {
    nlohmann::ordered_json j;
    j["language"] = language;
    j["partition"] = partition;
    nlohmann::ordered_json body = metrics_json(m, cm);
    for (auto& [key, value] : body.items()) j[key] = value;
    return j;
}

} // namespace xchain
