#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "support.hpp"
#include "xchain/model.hpp"

using namespace xchain;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

ModelConfig tiny_config(std::size_t vocab_size) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    c.max_positions = 12;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_layers = 1;
    c.d_ff = 32;
    c.dropout_rate = 0.0;
    return c;
}

TokenSequence make_seq(std::vector<int> ids, std::size_t pad_to) {
    TokenSequence seq;
    seq.ids = std::move(ids);
    seq.attention_mask.assign(seq.ids.size(), 1);
    while (seq.ids.size() < pad_to) {
        seq.ids.push_back(Vocabulary::kPad);
        seq.attention_mask.push_back(0);
    }
    return seq;
}

} // namespace

TEST_CASE("init_model: deterministic per seed, layer-norm gains exactly 1", "[model]") {
    ModelConfig cfg = tiny_config(40);
    ModelParams a = init_model(cfg, 7);
    ModelParams b = init_model(cfg, 7);
    auto na = a.named_tensors(), nb = b.named_tensors();
    REQUIRE(na.size() == nb.size());
    for (std::size_t i = 0; i < na.size(); ++i)
        for (std::size_t j = 0; j < na[i].second.size(); ++j)
            REQUIRE(na[i].second.data()[j] == nb[i].second.data()[j]);

    for (std::size_t j = 0; j < cfg.d_model; ++j) {
        CHECK(a.layers[0].ln1_gamma.data()[j] == 1.0);
        CHECK(a.final_ln_gamma.data()[j] == 1.0);
        CHECK(a.final_ln_beta.data()[j] == 0.0);
    }

    ModelParams c = init_model(cfg, 8);
    bool any_diff = false;
    for (std::size_t j = 0; j < a.tok_emb.size(); ++j)
        any_diff |= (a.tok_emb.data()[j] != c.tok_emb.data()[j]);
    CHECK(any_diff);
}

TEST_CASE("parameter count matches the closed-form formula", "[model]") {
    ModelConfig cfg;
    cfg.vocab_size = 1000;
    cfg.max_positions = 50;
    cfg.d_model = 64;
    cfg.n_heads = 4;
    cfg.n_layers = 2;
    cfg.d_ff = 128;
    ModelParams p = init_model(cfg, 1);

    // independent tally: embeddings + per-layer blocks + final LN + heads
    const std::size_t v = 1000, pos = 50, d = 64, layers = 2, ff = 128, classes = 2;
    const std::size_t per_layer = 2 * d            // ln1
                                  + 4 * (d * d + d) // q, k, v, o with biases
                                  + 2 * d           // ln2
                                  + (d * ff + ff) + (ff * d + d);
    const std::size_t expected = v * d + pos * d + layers * per_layer + 2 * d // final ln
                                 + (d * v + v)                                // mlm head
                                 + (d * classes + classes);                   // cls head
    CHECK(p.parameter_count() == expected);
    CHECK(expected == 199402);
}

TEST_CASE("config validation", "[model]") {
    ModelConfig bad = tiny_config(40);
    bad.n_heads = 3; // 16 % 3 != 0
    CHECK_THROWS_AS(init_model(bad, 1), ConfigError);
    bad = tiny_config(40);
    bad.n_classes = 3;
    CHECK_THROWS_AS(init_model(bad, 1), ConfigError);
    bad = tiny_config(40);
    bad.max_positions = 2;
    CHECK_THROWS_AS(init_model(bad, 1), ConfigError);
}

TEST_CASE("forward_classify: shape, padding invariance, eval determinism", "[model]") {
    ModelParams params = init_model(tiny_config(40), 3);
    std::vector<TokenSequence> batch = {
        make_seq({Vocabulary::kBos, 7, 9, 11, Vocabulary::kEos}, 8),
        make_seq({Vocabulary::kBos, 20, Vocabulary::kEos}, 8),
        make_seq({Vocabulary::kBos, 5, 6, 7, 8, 9, 10, Vocabulary::kEos}, 8),
    };
    Tensor logits = forward_classify(params, batch);
    REQUIRE(logits.shape() == Shape({3, 2}));

    // extra PAD never changes the logits
    std::vector<TokenSequence> wider = {
        make_seq({Vocabulary::kBos, 7, 9, 11, Vocabulary::kEos}, 12),
        make_seq({Vocabulary::kBos, 20, Vocabulary::kEos}, 12),
        make_seq({Vocabulary::kBos, 5, 6, 7, 8, 9, 10, Vocabulary::kEos}, 12),
    };
    Tensor logits2 = forward_classify(params, wider);
    for (std::size_t i = 0; i < logits.size(); ++i)
        CHECK(logits2.data()[i] == Approx(logits.data()[i]).margin(1e-9));

    // eval mode has no stochasticity
    Tensor logits3 = forward_classify(params, batch);
    for (std::size_t i = 0; i < logits.size(); ++i) CHECK(logits3.data()[i] == logits.data()[i]);
}

TEST_CASE("forward rejects bad batches", "[model]") {
    ModelParams params = init_model(tiny_config(40), 3);
    std::vector<TokenSequence> too_long = {make_seq({Vocabulary::kBos, 7, Vocabulary::kEos}, 13)};
    CHECK_THROWS_AS(forward_classify(params, too_long), InputError);

    std::vector<TokenSequence> ragged = {make_seq({Vocabulary::kBos, 7, Vocabulary::kEos}, 8),
                                         make_seq({Vocabulary::kBos, 7, Vocabulary::kEos}, 6)};
    CHECK_THROWS_AS(forward_classify(params, ragged), InputError);

    std::vector<TokenSequence> alien = {make_seq({Vocabulary::kBos, 99, Vocabulary::kEos}, 8)};
    CHECK_THROWS_AS(forward_classify(params, alien), CompatibilityError);

    CHECK_THROWS_AS(forward_classify(params, {}), InputError);
}

TEST_CASE("attention rows over non-PAD keys sum to 1", "[model]") {
    ModelParams params = init_model(tiny_config(40), 5);
    std::vector<TokenSequence> batch = {
        make_seq({Vocabulary::kBos, 7, 9, Vocabulary::kEos}, 10),
        make_seq({Vocabulary::kBos, 12, 13, 14, 15, Vocabulary::kEos}, 10),
    };
    ForwardProbe probe;
    forward_mlm(params, batch, RunMode::eval, nullptr, nullptr, &probe);
    REQUIRE(probe.attention.size() ==
            params.config.n_layers * batch.size() * params.config.n_heads);

    std::size_t idx = 0;
    for (std::size_t layer = 0; layer < params.config.n_layers; ++layer)
        for (std::size_t e = 0; e < batch.size(); ++e)
            for (std::size_t h = 0; h < params.config.n_heads; ++h, ++idx) {
                const Tensor& probs = probe.attention[idx];
                const std::size_t len = batch[e].ids.size();
                REQUIRE(probs.shape() == Shape({len, len}));
                for (std::size_t i = 0; i < len; ++i) {
                    double in_mask = 0.0, out_mask = 0.0;
                    for (std::size_t j = 0; j < len; ++j) {
                        if (batch[e].attention_mask[j])
                            in_mask += probs.data()[i * len + j];
                        else
                            out_mask += probs.data()[i * len + j];
                    }
                    CHECK(in_mask == Approx(1.0).margin(1e-9));
                    CHECK(out_mask == 0.0);
                }
            }
}

TEST_CASE("untrained MLM loss is near ln(vocab_size)", "[model]") {
    const std::size_t v = 200;
    ModelParams params = init_model(tiny_config(v), 11);
    Rng rng(4);
    std::vector<TokenSequence> batch;
    for (int e = 0; e < 8; ++e) {
        std::vector<int> ids = {Vocabulary::kBos};
        for (int i = 0; i < 9; ++i) ids.push_back(5 + static_cast<int>(rng.below(v - 5)));
        ids.push_back(Vocabulary::kEos);
        batch.push_back(make_seq(std::move(ids), 12));
    }
    Tensor logits = forward_mlm(params, batch);
    REQUIRE(logits.shape() == Shape({8 * 12, v}));

    std::vector<std::size_t> rows;
    std::vector<std::size_t> targets;
    for (std::size_t e = 0; e < 8; ++e)
        for (std::size_t i = 1; i < 10; ++i) {
            rows.push_back(e * 12 + i);
            targets.push_back(static_cast<std::size_t>(batch[e].ids[i]));
        }
    Tensor picked = gather_rows(logits, rows);
    const double loss = cross_entropy(picked, targets).item();
    CHECK(loss == Approx(std::log(static_cast<double>(v))).epsilon(0.10));
}

TEST_CASE("full toy classifier gradients match finite differences", "[model][gradcheck]") {
    ModelConfig cfg = tiny_config(30);
    cfg.n_layers = 1;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    ModelParams params = init_model(cfg, 13);
    std::vector<TokenSequence> batch = {
        make_seq({Vocabulary::kBos, 7, 9, 11, Vocabulary::kEos}, 6),
        make_seq({Vocabulary::kBos, 20, 21, Vocabulary::kEos}, 6),
    };
    const std::vector<std::size_t> targets = {0, 1};

    auto loss_value = [&]() {
        return cross_entropy(forward_classify(params, batch), targets).item();
    };
    Tape tape;
    Tensor loss = cross_entropy(forward_classify(params, batch, RunMode::eval, nullptr, &tape),
                                targets, &tape);
    tape.backward(loss);

    auto res = testsupport::finite_diff_check(params.named_tensors(), loss_value);
    CAPTURE(res.worst, res.checked, res.nonzero_analytic);
    CHECK(res.max_rel_err < 1e-4);
    CHECK(res.nonzero_analytic > res.checked / 10);
}

TEST_CASE("checkpoint roundtrip is byte-identical and logits match", "[model][checkpoint]") {
    Vocabulary vocab = train_bpe({"aa ab ba bb aab abb", "aaa bbb ab"}, 24);
    ModelConfig cfg = tiny_config(vocab.size());
    ModelParams params = init_model(cfg, 17);

    const auto dir = std::filesystem::temp_directory_path() / "xchain_model_test";
    std::filesystem::create_directories(dir);
    const std::string p1 = (dir / "a.ckpt").string();
    const std::string p2 = (dir / "b.ckpt").string();

    save_checkpoint({params, vocab, {"synA", "synB"}}, p1);
    Checkpoint loaded = load_checkpoint(p1);
    CHECK(loaded.chain_history == std::vector<std::string>({"synA", "synB"}));
    CHECK(loaded.vocab.serialize() == vocab.serialize());
    CHECK(loaded.params.config.d_model == cfg.d_model);

    save_checkpoint(loaded, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // float32 storage: logits agree within relative 1e-6
    std::vector<TokenSequence> batch = {encode(vocab, "aa ab", 10), encode(vocab, "bbb", 10)};
    Tensor before = forward_classify(params, batch);
    Tensor after = forward_classify(loaded.params, batch);
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(after.data()[i] == Approx(before.data()[i]).epsilon(1e-6));

    std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint corruption is reported with offsets", "[model][checkpoint]") {
    Vocabulary vocab = train_bpe({"aa bb"}, 12);
    ModelConfig cfg = tiny_config(vocab.size());
    ModelParams params = init_model(cfg, 1);

    const auto dir = std::filesystem::temp_directory_path() / "xchain_model_corrupt";
    std::filesystem::create_directories(dir);
    const std::string good = (dir / "good.ckpt").string();
    save_checkpoint({params, vocab, {}}, good);

    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    const std::string bad_magic = (dir / "bad_magic.ckpt").string();
    {
        std::string corrupted = bytes;
        corrupted[0] = 'Z';
        std::ofstream out(bad_magic, std::ios::binary);
        out << corrupted;
    }
    CHECK_THROWS_MATCHES(load_checkpoint(bad_magic), FormatError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("magic") &&
                                                         ContainsSubstring("offset 0")));

    const std::string truncated = (dir / "truncated.ckpt").string();
    {
        std::ofstream out(truncated, std::ios::binary);
        out << bytes.substr(0, bytes.size() / 2);
    }
    CHECK_THROWS_MATCHES(load_checkpoint(truncated), FormatError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("offset")));

    const std::string bad_version = (dir / "bad_version.ckpt").string();
    {
        std::string corrupted = bytes;
        corrupted[4] = 9;
        std::ofstream out(bad_version, std::ios::binary);
        out << corrupted;
    }
    CHECK_THROWS_MATCHES(load_checkpoint(bad_version), FormatError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("version")));

    std::filesystem::remove_all(dir);
}
