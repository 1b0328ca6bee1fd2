// xchain: train and evaluate a shared-vocabulary transformer sequentially
// across per-language offensive-language datasets.
//
// Commands: tokenizer, synth, stats, pretrain, chain, eval, zeroshot.
// Exit codes: 0 success, 2 input/config error, 3 runtime/numeric error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xchain/config.hpp"
#include "xchain/data.hpp"
#include "xchain/errors.hpp"
#include "xchain/eval.hpp"
#include "xchain/log.hpp"
#include "xchain/model.hpp"
#include "xchain/tokenizer.hpp"
#include "xchain/training.hpp"

namespace fs = std::filesystem;
using namespace xchain;

namespace {

void ensure_output(const std::string& path, bool force) {
    if (path.empty()) return;
    if (fs::exists(path) && !force)
        throw InputError("output '" + path + "' already exists; pass --force to overwrite");
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw InputError("failed writing '" + path + "'");
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw ConfigError(what + " is not configured");
    if (!fs::exists(path)) throw InputError(what + " '" + path + "' does not exist");
}

// Texts from either TSV variant; labels, when present, are ignored.
std::vector<std::string> read_texts(const std::string& path) {
    std::vector<std::string> texts;
    if (olid_tsv_is_labeled(path)) {
        Dataset ds = load_olid_tsv(path, "any", "train");
        for (auto& ex : ds.examples) texts.push_back(std::move(ex.text));
    } else {
        for (auto& row : load_olid_tsv_inference(path)) texts.push_back(std::move(row.text));
    }
    return texts;
}

std::vector<std::pair<std::string, std::string>> parse_lang_path_args(
    const std::vector<std::string>& args) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const std::string& arg : args) {
        const std::size_t eq = arg.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected lang=path, got '" + arg + "'");
        out.emplace_back(arg.substr(0, eq), arg.substr(eq + 1));
    }
    return out;
}

// ---------------------------------------------------------------------------
// tokenizer: train a shared BPE vocabulary over one or more corpora
// ---------------------------------------------------------------------------

int cmd_tokenizer(const std::vector<std::string>& corpus_paths, std::size_t vocab_size,
                  const std::string& out_path, bool force) {
    if (corpus_paths.empty()) throw InputError("tokenizer: no corpus files given");
    for (const std::string& p : corpus_paths) require_file(p, "corpus file");
    ensure_output(out_path, force);

    std::vector<std::string> corpus;
    for (const std::string& p : corpus_paths) {
        std::vector<std::string> texts = read_texts(p);
        corpus.insert(corpus.end(), std::make_move_iterator(texts.begin()),
                      std::make_move_iterator(texts.end()));
    }
    log::info({{"event", "tokenizer_train"},
               {"files", std::to_string(corpus_paths.size())},
               {"texts", std::to_string(corpus.size())},
               {"target_vocab", std::to_string(vocab_size)}});
    Vocabulary vocab = train_bpe(corpus, vocab_size);
    vocab.save(out_path);
    log::info({{"event", "tokenizer_done"},
               {"vocab_size", std::to_string(vocab.size())},
               {"merges", std::to_string(vocab.merges().size())},
               {"out", out_path}});
    return 0;
}

// ---------------------------------------------------------------------------
// synth: generate OLID-format TSVs for controlled transfer experiments
// ---------------------------------------------------------------------------

int cmd_synth(std::size_t languages, std::size_t examples, double transfer_strength,
              std::uint64_t seed, const std::string& out_dir, double test_fraction, bool force) {
    if (test_fraction < 0.0 || test_fraction >= 1.0)
        throw ConfigError("synth: --test-fraction must be in [0, 1)");
    fs::create_directories(out_dir);

    std::vector<Dataset> datasets = gen_synthetic(languages, examples, transfer_strength, seed);
    for (const Dataset& ds : datasets) {
        const std::size_t n_test =
            static_cast<std::size_t>(std::floor(static_cast<double>(ds.size()) * test_fraction));
        const std::size_t n_train = ds.size() - n_test;

        Dataset train{ds.language, "train", {ds.examples.begin(),
                                             ds.examples.begin() + static_cast<std::ptrdiff_t>(n_train)}};
        const std::string train_path = (fs::path(out_dir) / (ds.language + "_train.tsv")).string();
        ensure_output(train_path, force);
        write_olid_tsv(train, train_path);

        if (n_test > 0) {
            Dataset test{ds.language, "test", {ds.examples.begin() + static_cast<std::ptrdiff_t>(n_train),
                                               ds.examples.end()}};
            const std::string test_path = (fs::path(out_dir) / (ds.language + "_test.tsv")).string();
            ensure_output(test_path, force);
            write_olid_tsv(test, test_path);
        }
        log::info({{"event", "synth_language"},
                   {"language", ds.language},
                   {"train", std::to_string(n_train)},
                   {"test", std::to_string(n_test)}});
    }
    return 0;
}

// ---------------------------------------------------------------------------
// stats: Table-1-style corpus statistics
// ---------------------------------------------------------------------------

nlohmann::ordered_json stats_json(const DatasetStats& st) {
    nlohmann::ordered_json j;
    j["languages"] = nlohmann::ordered_json::array();
    for (const LanguageStats& row : st.rows) {
        j["languages"].push_back({{"language", row.language},
                                  {"positive", row.positives},
                                  {"negative", row.negatives},
                                  {"total", row.total()},
                                  {"offensive_ratio", format_ratio_percent(st.offensive_ratio_percent(row))},
                                  {"share", format_share_percent(st.share_percent(row))}});
    }
    j["total"] = {{"positive", st.total_positives},
                  {"negative", st.total_negatives},
                  {"total", st.total()},
                  {"offensive_ratio", format_ratio_percent(st.global_offensive_ratio_percent())}};
    return j;
}

int cmd_stats(const std::vector<std::string>& lang_paths, const std::string& counts_path,
              const std::string& report_path, bool force) {
    DatasetStats st;
    if (!counts_path.empty()) {
        if (!lang_paths.empty())
            throw ConfigError("stats: pass either lang=path arguments or --counts, not both");
        require_file(counts_path, "counts file");
        st = stats_from_counts(load_counts_tsv(counts_path));
    } else {
        if (lang_paths.empty()) throw InputError("stats: no input files given");
        std::vector<Dataset> datasets;
        for (const auto& [lang, path] : parse_lang_path_args(lang_paths)) {
            require_file(path, "data file");
            datasets.push_back(load_olid_tsv(path, lang, "train"));
        }
        st = stats(datasets);
    }
    if (st.rows.empty()) throw InputError("stats: no rows to report");

    ensure_output(report_path, force);
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %9s %9s %9s %8s %8s", "Language/Label", "Positive",
                  "Negative", "Total", "Off%", "Share%");
    std::cout << line << "\n";
    for (const LanguageStats& row : st.rows) {
        std::snprintf(line, sizeof line, "%-16s %9llu %9llu %9llu %8s %8s", row.language.c_str(),
                      static_cast<unsigned long long>(row.positives),
                      static_cast<unsigned long long>(row.negatives),
                      static_cast<unsigned long long>(row.total()),
                      format_ratio_percent(st.offensive_ratio_percent(row)).c_str(),
                      format_share_percent(st.share_percent(row)).c_str());
        std::cout << line << "\n";
    }
    std::snprintf(line, sizeof line, "%-16s %9llu %9llu %9llu %8s %8s", "Total",
                  static_cast<unsigned long long>(st.total_positives),
                  static_cast<unsigned long long>(st.total_negatives),
                  static_cast<unsigned long long>(st.total()),
                  format_ratio_percent(st.global_offensive_ratio_percent()).c_str(), "100.00");
    std::cout << line << "\n";

    if (!report_path.empty()) write_text_file(report_path, stats_json(st).dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// pretrain: masked-LM pretraining over mixed-language corpora
// ---------------------------------------------------------------------------

int cmd_pretrain(const RunConfig& cfg, std::size_t steps, bool force) {
    require_file(cfg.vocab_path, "[data] vocab");
    if (cfg.checkpoint_out.empty()) throw ConfigError("[data] checkpoint_out is not configured");
    if (cfg.pretrain_paths.empty()) throw ConfigError("[data] pretrain corpora are not configured");
    for (const std::string& p : cfg.pretrain_paths) require_file(p, "pretrain corpus");
    ensure_output(cfg.checkpoint_out, force);
    ensure_output(cfg.report_path, force);

    Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
    ModelConfig model_cfg = cfg.model;
    model_cfg.vocab_size = vocab.size();
    ModelParams params = init_model(model_cfg, cfg.train.seed);

    std::vector<std::string> corpus;
    for (const std::string& p : cfg.pretrain_paths) {
        std::vector<std::string> texts = read_texts(p);
        corpus.insert(corpus.end(), std::make_move_iterator(texts.begin()),
                      std::make_move_iterator(texts.end()));
    }
    log::info({{"event", "pretrain_start"},
               {"texts", std::to_string(corpus.size())},
               {"steps", std::to_string(steps)},
               {"seed", std::to_string(cfg.train.seed)}});

    std::vector<double> losses = pretrain(params, vocab, corpus, cfg.train, steps);
    for (std::size_t i = 0; i < losses.size(); ++i)
        if ((i + 1) % 25 == 0 || i + 1 == losses.size())
            log::info({{"event", "pretrain_step"},
                       {"step", std::to_string(i + 1)},
                       {"loss", std::to_string(losses[i])}});

    save_checkpoint({params, vocab, {}}, cfg.checkpoint_out);
    log::info({{"event", "pretrain_done"}, {"checkpoint", cfg.checkpoint_out}});

    if (!cfg.report_path.empty()) {
        nlohmann::ordered_json j;
        j["steps"] = losses.size();
        j["losses"] = losses;
        j["checkpoint"] = cfg.checkpoint_out;
        j["seed"] = cfg.train.seed;
        j["config"] = train_config_json(cfg.train, model_cfg);
        write_text_file(cfg.report_path, j.dump(2) + "\n");
    }
    return 0;
}

// ---------------------------------------------------------------------------
// chain: sequential fine-tuning over the configured language order
// ---------------------------------------------------------------------------

int cmd_chain(const RunConfig& cfg, bool force) {
    if (cfg.chain.empty()) throw ConfigError("[data] chain is not configured");
    if (cfg.checkpoint_out.empty()) throw ConfigError("[data] checkpoint_out is not configured");
    // every referenced path is checked before any training starts
    for (const auto& [lang, path] : cfg.chain) require_file(path, "chain data for " + lang);
    if (!cfg.checkpoint_in.empty()) require_file(cfg.checkpoint_in, "checkpoint_in");
    ensure_output(cfg.checkpoint_out, force);
    ensure_output(cfg.report_path, force);

    ModelParams params;
    Vocabulary vocab;
    std::vector<std::string> history;
    if (!cfg.checkpoint_in.empty()) {
        Checkpoint ckpt = load_checkpoint(cfg.checkpoint_in);
        params = std::move(ckpt.params);
        vocab = std::move(ckpt.vocab);
        history = std::move(ckpt.chain_history);
    } else {
        require_file(cfg.vocab_path, "[data] vocab");
        vocab = Vocabulary::load(cfg.vocab_path);
        ModelConfig model_cfg = cfg.model;
        model_cfg.vocab_size = vocab.size();
        params = init_model(model_cfg, cfg.train.seed);
    }

    std::vector<std::pair<std::string, Dataset>> chain;
    for (const auto& [lang, path] : cfg.chain)
        chain.emplace_back(lang, load_olid_tsv(path, lang, "train"));

    log::info({{"event", "chain_start"},
               {"languages", std::to_string(chain.size())},
               {"seed", std::to_string(cfg.train.seed)}});
    ChainReport report = finetune_chain(params, vocab, chain, cfg.train);
    report.checkpoint_path = cfg.checkpoint_out;

    for (const LanguageRecord& rec : report.languages) {
        log::info({{"event", "chain_language_done"},
                   {"language", rec.language},
                   {"n_train", std::to_string(rec.n_train)},
                   {"n_val", std::to_string(rec.n_val)},
                   {"val_macro_f1", std::to_string(rec.val_metrics.macro_f1)}});
        history.push_back(rec.language);
    }

    save_checkpoint({params, vocab, history}, cfg.checkpoint_out);
    if (!cfg.report_path.empty())
        write_text_file(cfg.report_path, chain_report_json(report).dump(2) + "\n");
    log::info({{"event", "chain_done"}, {"checkpoint", cfg.checkpoint_out}});
    return 0;
}

// ---------------------------------------------------------------------------
// eval / zeroshot: metrics on labeled data, predictions on unlabeled data
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& language, const std::string& partition, std::size_t batch_size,
             const std::string& report_path, bool zero_shot, bool force) {
    require_file(checkpoint_path, "checkpoint");
    require_file(data_path, "data file");
    ensure_output(report_path, force);

    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    if (zero_shot) {
        for (const std::string& seen : ckpt.chain_history)
            if (seen == language)
                throw InputError("zeroshot: language '" + language +
                                 "' appears in the checkpoint's chain history; this would not be "
                                 "zero-shot");
    }

    const EvalConfig ecfg{batch_size, std::min<std::size_t>(50, ckpt.params.config.max_positions)};
    if (olid_tsv_is_labeled(data_path)) {
        Dataset ds = load_olid_tsv(data_path, language, partition);
        if (ds.examples.empty()) throw InputError("eval: '" + data_path + "' has no rows");
        std::vector<std::string> texts;
        std::vector<int> golds;
        for (const LabeledExample& ex : ds.examples) {
            texts.push_back(ex.text);
            golds.push_back(ex.label);
        }
        std::vector<int> preds = predict(ckpt.params, ckpt.vocab, texts, ecfg);
        ConfusionMatrix cm = confusion(preds, golds);
        Metrics m = compute_metrics(cm);
        nlohmann::ordered_json j = metrics_report(language, partition, m, cm);
        std::cout << j.dump(2) << "\n";
        if (!report_path.empty()) write_text_file(report_path, j.dump(2) + "\n");
        log::info({{"event", zero_shot ? "zeroshot_done" : "eval_done"},
                   {"language", language},
                   {"n", std::to_string(cm.total())},
                   {"macro_f1", std::to_string(m.macro_f1)}});
    } else {
        std::vector<UnlabeledExample> rows = load_olid_tsv_inference(data_path);
        if (rows.empty()) throw InputError("eval: '" + data_path + "' has no rows");
        std::vector<std::string> texts;
        for (const UnlabeledExample& r : rows) texts.push_back(r.text);
        std::vector<int> preds = predict(ckpt.params, ckpt.vocab, texts, ecfg);
        std::string tsv = "id\tsubtask_a\n";
        for (std::size_t i = 0; i < rows.size(); ++i)
            tsv += rows[i].id + "\t" + (preds[i] == 1 ? "OFF" : "NOT") + "\n";
        std::cout << tsv;
        if (!report_path.empty()) write_text_file(report_path, tsv);
        log::info({{"event", "predict_done"},
                   {"language", language},
                   {"n", std::to_string(rows.size())}});
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-lingual offensive language detection at desk scale"};
    app.require_subcommand(1);

    // tokenizer
    auto* tok = app.add_subcommand("tokenizer", "train a shared BPE vocabulary from TSV corpora");
    std::vector<std::string> tok_corpora;
    std::size_t tok_vocab_size = 1000;
    std::string tok_out;
    bool tok_force = false;
    tok->add_option("corpora", tok_corpora, "input TSV files")->required();
    tok->add_option("--vocab-size", tok_vocab_size, "target vocabulary size");
    tok->add_option("--out", tok_out, "output vocabulary file")->required();
    tok->add_flag("--force", tok_force, "overwrite existing outputs");

    // synth
    auto* synth = app.add_subcommand("synth", "generate synthetic multilingual OLID-format data");
    std::size_t synth_languages = 3, synth_examples = 2000;
    double synth_ts = 1.0, synth_test_fraction = 0.2;
    std::uint64_t synth_seed = 42;
    std::string synth_out;
    bool synth_force = false;
    synth->add_option("--languages", synth_languages, "number of synthetic languages");
    synth->add_option("--examples", synth_examples, "examples per language");
    synth->add_option("--transfer-strength", synth_ts, "shared marker-root probability in [0,1]");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--test-fraction", synth_test_fraction, "held-out fraction per language");
    synth->add_flag("--force", synth_force, "overwrite existing outputs");

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "corpus statistics in the published table layout");
    std::vector<std::string> stats_inputs;
    std::string stats_counts, stats_report;
    bool stats_force = false;
    stats_cmd->add_option("data", stats_inputs, "lang=path TSV inputs");
    stats_cmd->add_option("--counts", stats_counts, "counts TSV (language/positive/negative)");
    stats_cmd->add_option("--report", stats_report, "write a JSON report here");
    stats_cmd->add_flag("--force", stats_force, "overwrite existing outputs");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "masked-LM pretraining over mixed-language corpora");
    std::string pre_config;
    std::size_t pre_steps = 0;
    bool pre_steps_set = false, pre_force = false;
    std::string pre_out, pre_report;
    std::uint64_t pre_seed = 0;
    bool pre_seed_set = false;
    pre->add_option("--config", pre_config, "run configuration file")->required();
    pre->add_option("--steps", pre_steps, "number of optimizer steps")
        ->each([&](const std::string&) { pre_steps_set = true; });
    pre->add_option("--seed", pre_seed, "override [train] seed")
        ->each([&](const std::string&) { pre_seed_set = true; });
    pre->add_option("--out", pre_out, "override [data] checkpoint_out");
    pre->add_option("--report", pre_report, "override [data] report");
    pre->add_flag("--force", pre_force, "overwrite existing outputs");

    // chain
    auto* chain_cmd = app.add_subcommand("chain", "sequential fine-tuning over the configured languages");
    std::string chain_config, chain_in, chain_out, chain_report_path;
    std::uint64_t chain_seed = 0;
    bool chain_seed_set = false, chain_force = false;
    chain_cmd->add_option("--config", chain_config, "run configuration file")->required();
    chain_cmd->add_option("--checkpoint-in", chain_in, "override [data] checkpoint_in");
    chain_cmd->add_option("--out", chain_out, "override [data] checkpoint_out");
    chain_cmd->add_option("--report", chain_report_path, "override [data] report");
    chain_cmd->add_option("--seed", chain_seed, "override [train] seed")
        ->each([&](const std::string&) { chain_seed_set = true; });
    chain_cmd->add_flag("--force", chain_force, "overwrite existing outputs");

    // eval / zeroshot
    auto add_eval_options = [](CLI::App* cmd, std::string& ckpt, std::string& data,
                               std::string& language, std::string& partition, std::size_t& batch,
                               std::string& report, bool& force) {
        cmd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
        cmd->add_option("--data", data, "TSV file to evaluate")->required();
        cmd->add_option("--language", language, "language tag of the data")->required();
        cmd->add_option("--partition", partition, "partition tag for the report");
        cmd->add_option("--batch-size", batch, "inference batch size");
        cmd->add_option("--report", report, "write the report here");
        cmd->add_flag("--force", force, "overwrite existing outputs");
    };
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on labeled data");
    std::string eval_ckpt, eval_data, eval_lang, eval_partition = "test", eval_report;
    std::size_t eval_batch = 32;
    bool eval_force = false;
    add_eval_options(eval_cmd, eval_ckpt, eval_data, eval_lang, eval_partition, eval_batch,
                     eval_report, eval_force);

    auto* zs_cmd = app.add_subcommand("zeroshot",
                                      "evaluate on a language absent from the chain history");
    std::string zs_ckpt, zs_data, zs_lang, zs_partition = "test", zs_report;
    std::size_t zs_batch = 32;
    bool zs_force = false;
    add_eval_options(zs_cmd, zs_ckpt, zs_data, zs_lang, zs_partition, zs_batch, zs_report, zs_force);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(tok))
            return cmd_tokenizer(tok_corpora, tok_vocab_size, tok_out, tok_force);
        if (app.got_subcommand(synth))
            return cmd_synth(synth_languages, synth_examples, synth_ts, synth_seed, synth_out,
                             synth_test_fraction, synth_force);
        if (app.got_subcommand(stats_cmd))
            return cmd_stats(stats_inputs, stats_counts, stats_report, stats_force);
        if (app.got_subcommand(pre)) {
            RunConfig cfg = load_run_config(pre_config);
            if (pre_seed_set) cfg.train.seed = pre_seed;
            if (!pre_out.empty()) cfg.checkpoint_out = pre_out;
            if (!pre_report.empty()) cfg.report_path = pre_report;
            return cmd_pretrain(cfg, pre_steps_set ? pre_steps : cfg.pretrain_steps, pre_force);
        }
        if (app.got_subcommand(chain_cmd)) {
            RunConfig cfg = load_run_config(chain_config);
            if (chain_seed_set) cfg.train.seed = chain_seed;
            if (!chain_in.empty()) cfg.checkpoint_in = chain_in;
            if (!chain_out.empty()) cfg.checkpoint_out = chain_out;
            if (!chain_report_path.empty()) cfg.report_path = chain_report_path;
            return cmd_chain(cfg, chain_force);
        }
        if (app.got_subcommand(eval_cmd))
            return cmd_eval(eval_ckpt, eval_data, eval_lang, eval_partition, eval_batch, eval_report,
                            false, eval_force);
        if (app.got_subcommand(zs_cmd))
            return cmd_eval(zs_ckpt, zs_data, zs_lang, zs_partition, zs_batch, zs_report, true,
                            zs_force);
    } catch (const InputError& e) {
        log::error({{"event", "error"}, {"kind", "input"}, {"message", e.what()}});
        return 2;
    } catch (const ConfigError& e) {
        log::error({{"event", "error"}, {"kind", "config"}, {"message", e.what()}});
        return 2;
    } catch (const FormatError& e) {
        log::error({{"event", "error"}, {"kind", "format"}, {"message", e.what()}});
        return 2;
    } catch (const LabelError& e) {
        log::error({{"event", "error"}, {"kind", "label"}, {"message", e.what()}});
        return 2;
    } catch (const IntegrityError& e) {
        log::error({{"event", "error"}, {"kind", "integrity"}, {"message", e.what()}});
        return 2;
    } catch (const CompatibilityError& e) {
        log::error({{"event", "error"}, {"kind", "compatibility"}, {"message", e.what()}});
        return 2;
    } catch (const Error& e) {
        log::error({{"event", "error"}, {"kind", "runtime"}, {"message", e.what()}});
        return 3;
    } catch (const std::exception& e) {
        log::error({{"event", "error"}, {"kind", "unexpected"}, {"message", e.what()}});
        return 3;
    }
    return 0;
}
