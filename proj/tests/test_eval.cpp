#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "xchain/eval.hpp"
#include "xchain/rng.hpp"

using namespace xchain;
using Catch::Approx;

TEST_CASE("confusion: hand cases", "[eval]") {
    ConfusionMatrix cm = confusion({1, 0}, {1, 0});
    CHECK(cm.tp == 1);
    CHECK(cm.tn == 1);
    CHECK(cm.fp == 0);
    CHECK(cm.fn == 0);

    cm = confusion({0, 0, 0}, {1, 1, 0});
    CHECK(cm.fn == 2);
    CHECK(cm.tn == 1);
    CHECK(cm.tp == 0);

    CHECK_THROWS_AS(confusion({1}, {1, 0}), InputError);
    CHECK_THROWS_AS(confusion({}, {}), InputError);
    CHECK_THROWS_AS(confusion({2}, {0}), InputError);
}

TEST_CASE("confusion matches an independent per-example tally on 1000 random pairs", "[eval]") {
    Rng rng(41);
    std::vector<int> preds(1000), golds(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        preds[i] = rng.bernoulli(0.4) ? 1 : 0;
        golds[i] = rng.bernoulli(0.3) ? 1 : 0;
    }
    ConfusionMatrix cm = confusion(preds, golds);

    // brute-force recount
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        tp += (preds[i] == 1 && golds[i] == 1) ? 1 : 0;
        fp += (preds[i] == 1 && golds[i] == 0) ? 1 : 0;
        fn += (preds[i] == 0 && golds[i] == 1) ? 1 : 0;
        tn += (preds[i] == 0 && golds[i] == 0) ? 1 : 0;
    }
    CHECK(cm.tp == tp);
    CHECK(cm.fp == fp);
    CHECK(cm.fn == fn);
    CHECK(cm.tn == tn);
    CHECK(cm.total() == 1000);
}

TEST_CASE("metrics: hand arithmetic", "[eval]") {
    Metrics perfect = compute_metrics(confusion({1, 0, 1}, {1, 0, 1}));
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.f1_pos == 1.0);
    CHECK(perfect.f1_neg == 1.0);
    CHECK(perfect.macro_f1 == 1.0);

    Metrics m = compute_metrics({2, 1, 1, 6});
    CHECK(m.precision_pos == Approx(2.0 / 3.0));
    CHECK(m.recall_pos == Approx(2.0 / 3.0));
    CHECK(m.f1_pos == Approx(2.0 / 3.0));
    CHECK(m.accuracy == Approx(0.8));
    CHECK(m.precision_neg == Approx(6.0 / 7.0));
    CHECK(m.macro_f1 == Approx((2.0 / 3.0 + 6.0 / 7.0) / 2.0));

    // all-negative predictions on mixed golds: zero-division convention
    Metrics zero = compute_metrics(confusion({0, 0, 0}, {1, 1, 0}));
    CHECK(zero.f1_pos == 0.0);
    CHECK(zero.precision_pos == 0.0);
    CHECK(zero.recall_pos == 0.0);

    CHECK_THROWS_AS(compute_metrics({0, 0, 0, 0}), InputError);
}

TEST_CASE("metrics: label-swap duality and accuracy identity", "[eval]") {
    Rng rng(55);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 5 + rng.below(100);
        std::vector<int> preds(n), golds(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds[i] = rng.bernoulli(0.5) ? 1 : 0;
            golds[i] = rng.bernoulli(0.5) ? 1 : 0;
        }
        ConfusionMatrix cm = confusion(preds, golds);
        Metrics m = compute_metrics(cm);

        CHECK(m.accuracy ==
              Approx(static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total())));

        std::vector<int> preds_sw(n), golds_sw(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds_sw[i] = 1 - preds[i];
            golds_sw[i] = 1 - golds[i];
        }
        Metrics sw = compute_metrics(confusion(preds_sw, golds_sw));
        CHECK(sw.precision_pos == Approx(m.precision_neg).margin(1e-12));
        CHECK(sw.recall_pos == Approx(m.recall_neg).margin(1e-12));
        CHECK(sw.f1_pos == Approx(m.f1_neg).margin(1e-12));
        CHECK(sw.accuracy == Approx(m.accuracy).margin(1e-12));
        CHECK(sw.macro_f1 == Approx(m.macro_f1).margin(1e-12));

        // permutation invariance
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);
        std::vector<int> preds_p(n), golds_p(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds_p[i] = preds[order[i]];
            golds_p[i] = golds[order[i]];
        }
        Metrics mp = compute_metrics(confusion(preds_p, golds_p));
        CHECK(mp.macro_f1 == Approx(m.macro_f1).margin(1e-12));
    }
}

TEST_CASE("evaluate: consistency with confusion+metrics and idempotence", "[eval]") {
    Vocabulary vocab = train_bpe({"aa bb cc dd", "ab cd", "dd cc bb aa"}, 40);
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.max_positions = 16;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.d_ff = 32;
    cfg.dropout_rate = 0.0;
    ModelParams params = init_model(cfg, 23);

    Dataset ds{"syn", "train", {}};
    const std::vector<std::string> texts = {"aa bb", "cc dd", "ab", "dd cc", "aa", "cd cd"};
    for (std::size_t i = 0; i < texts.size(); ++i)
        ds.examples.push_back({"e" + std::to_string(i), texts[i], static_cast<int>(i % 2), "syn"});

    EvalConfig ecfg{2, 16};
    Metrics m1 = evaluate(params, vocab, ds, ecfg);
    Metrics m2 = evaluate(params, vocab, ds, ecfg);
    CHECK(m1.accuracy == m2.accuracy);
    CHECK(m1.macro_f1 == m2.macro_f1);

    std::vector<int> preds = predict(params, vocab, texts, ecfg);
    std::vector<int> golds;
    for (const auto& ex : ds.examples) golds.push_back(ex.label);
    Metrics composed = compute_metrics(confusion(preds, golds));
    CHECK(m1.accuracy == composed.accuracy);
    CHECK(m1.f1_pos == composed.f1_pos);
    CHECK(m1.macro_f1 == composed.macro_f1);

    // single correctly-classified example
    Dataset one{"syn", "train", {{"x", texts[0], preds[0], "syn"}}};
    Metrics single = evaluate(params, vocab, one, ecfg);
    CHECK(single.accuracy == 1.0);

    // model/vocabulary mismatch
    Vocabulary other = train_bpe({"zz yy xx ww vv uu tt ss rr qq pp"}, 60);
    CHECK_THROWS_AS(evaluate(params, other, ds, ecfg), CompatibilityError);
}

TEST_CASE("metrics JSON report carries the pinned schema", "[eval]") {
    ConfusionMatrix cm{2, 1, 1, 6};
    Metrics m = compute_metrics(cm);
    auto j = metrics_report("synA", "test", m, cm);
    CHECK(j["language"] == "synA");
    CHECK(j["partition"] == "test");
    CHECK(j["n"] == 10);
    CHECK(j["confusion"]["tp"] == 2);
    CHECK(j["confusion"]["tn"] == 6);
    CHECK(j["accuracy"] == Approx(0.8));
    CHECK(j["pos"]["f1"] == Approx(0.667));
    CHECK(j["macro_f1"] == Approx(0.762));
}
