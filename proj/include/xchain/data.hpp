#pragma once

// OLID-format ingestion, corpus statistics, stratified splitting and a
// synthetic multilingual generator for controlled transfer experiments.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xchain/errors.hpp"
#include "xchain/rng.hpp"

namespace xchain {

struct LabeledExample {
    std::string id;
    std::string text;
    int label = 0; // NOT = 0, OFF = 1
    std::string language;
};

struct Dataset {
    std::string language;
    std::string partition; // "train" or "test"
    std::vector<LabeledExample> examples;

    std::size_t size() const { return examples.size(); }
};

struct UnlabeledExample {
    std::string id;
    std::string text;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

inline std::string read_line_normalized(std::istream& in, bool& ok) {
    std::string line;
    ok = static_cast<bool>(std::getline(in, line));
    if (ok && !line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

inline void strip_bom(std::string& line) {
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
}

} // namespace detail

// ---------------------------------------------------------------------------
// TSV loading. Labeled files carry the header `id<TAB>tweet<TAB>subtask_a`;
// a two-column `id<TAB>tweet` variant is accepted for inference only.
// Malformed rows are rejected with their line number, never skipped.
// ---------------------------------------------------------------------------

inline bool olid_tsv_is_labeled(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("data: cannot open '" + path + "'");
    bool ok = false;
    std::string header = detail::read_line_normalized(in, ok);
    if (!ok) throw FormatError("data: '" + path + "': line 1: empty file, expected a header");
    detail::strip_bom(header);
    if (header == "id\ttweet\tsubtask_a") return true;
    if (header == "id\ttweet") return false;
    throw FormatError("data: '" + path + "': line 1: unrecognized header '" + header + "'");
}

inline Dataset load_olid_tsv(const std::string& path, const std::string& language,
                             const std::string& partition) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("data: cannot open '" + path + "'");

    Dataset ds;
    ds.language = language;
    ds.partition = partition;

    bool ok = false;
    std::size_t lineno = 1;
    std::string header = detail::read_line_normalized(in, ok);
    if (!ok) throw FormatError("data: '" + path + "': line 1: empty file, expected a header");
    detail::strip_bom(header);
    if (header != "id\ttweet\tsubtask_a")
        throw FormatError("data: '" + path + "': line 1: expected header 'id\\ttweet\\tsubtask_a', got '" +
                          header + "'");

    std::unordered_set<std::string> seen_ids;
    while (true) {
        std::string line = detail::read_line_normalized(in, ok);
        if (!ok) break;
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> fields = detail::split_tabs(line);
        if (fields.size() != 3)
            throw FormatError("data: '" + path + "': line " + std::to_string(lineno) +
                              ": expected 3 tab-separated columns, got " +
                              std::to_string(fields.size()));
        LabeledExample ex;
        ex.id = fields[0];
        ex.text = fields[1];
        ex.language = language;
        if (detail::trim(ex.text).empty())
            throw FormatError("data: '" + path + "': line " + std::to_string(lineno) +
                              ": empty tweet text");
        if (fields[2] == "OFF")
            ex.label = 1;
        else if (fields[2] == "NOT")
            ex.label = 0;
        else
            throw LabelError("data: '" + path + "': line " + std::to_string(lineno) +
                             ": unknown label '" + fields[2] + "' (labels are case-sensitive OFF/NOT)");
        if (!seen_ids.insert(ex.id).second)
            throw IntegrityError("data: '" + path + "': line " + std::to_string(lineno) +
                                 ": duplicate id '" + ex.id + "'");
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

inline std::vector<UnlabeledExample> load_olid_tsv_inference(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("data: cannot open '" + path + "'");
    bool ok = false;
    std::size_t lineno = 1;
    std::string header = detail::read_line_normalized(in, ok);
    if (!ok) throw FormatError("data: '" + path + "': line 1: empty file, expected a header");
    detail::strip_bom(header);
    if (header != "id\ttweet")
        throw FormatError("data: '" + path + "': line 1: expected header 'id\\ttweet', got '" + header +
                          "'");
    std::vector<UnlabeledExample> out;
    std::unordered_set<std::string> seen_ids;
    while (true) {
        std::string line = detail::read_line_normalized(in, ok);
        if (!ok) break;
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> fields = detail::split_tabs(line);
        if (fields.size() != 2)
            throw FormatError("data: '" + path + "': line " + std::to_string(lineno) +
                              ": expected 2 tab-separated columns, got " +
                              std::to_string(fields.size()));
        if (detail::trim(fields[1]).empty())
            throw FormatError("data: '" + path + "': line " + std::to_string(lineno) +
                              ": empty tweet text");
        if (!seen_ids.insert(fields[0]).second)
            throw IntegrityError("data: '" + path + "': line " + std::to_string(lineno) +
                                 ": duplicate id '" + fields[0] + "'");
        out.push_back({fields[0], fields[1]});
    }
    return out;
}

inline void write_olid_tsv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("data: cannot open '" + path + "' for writing");
    out << "id\ttweet\tsubtask_a\n";
    for (const LabeledExample& ex : ds.examples)
        out << ex.id << '\t' << ex.text << '\t' << (ex.label == 1 ? "OFF" : "NOT") << '\n';
    if (!out) throw InputError("data: failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Corpus statistics. Counting is exact integer arithmetic; presentation
// rounds offensive ratios half-up to 2 decimals and truncates per-language
// shares to 2 decimals.
// ---------------------------------------------------------------------------

struct LanguageStats {
    std::string language;
    std::uint64_t positives = 0;
    std::uint64_t negatives = 0;
    std::uint64_t total() const { return positives + negatives; }
};

struct DatasetStats {
    std::vector<LanguageStats> rows; // first-appearance language order
    std::uint64_t total_positives = 0;
    std::uint64_t total_negatives = 0;
    std::uint64_t total() const { return total_positives + total_negatives; }

    double offensive_ratio_percent(const LanguageStats& row) const {
        return row.total() == 0 ? 0.0
                                : 100.0 * static_cast<double>(row.positives) /
                                      static_cast<double>(row.total());
    }
    double share_percent(const LanguageStats& row) const {
        return total() == 0 ? 0.0
                            : 100.0 * static_cast<double>(row.total()) / static_cast<double>(total());
    }
    double global_offensive_ratio_percent() const {
        return total() == 0 ? 0.0
                            : 100.0 * static_cast<double>(total_positives) /
                                  static_cast<double>(total());
    }
};

inline std::string format_percent_2dp(double pct, bool truncate = false) {
    const long long hundredths = truncate ? static_cast<long long>(std::floor(pct * 100.0))
                                          : static_cast<long long>(std::floor(pct * 100.0 + 0.5));
    std::string frac = std::to_string(hundredths % 100);
    if (frac.size() < 2) frac = "0" + frac;
    return std::to_string(hundredths / 100) + "." + frac;
}

inline std::string format_ratio_percent(double pct) { return format_percent_2dp(pct, false); }
inline std::string format_share_percent(double pct) { return format_percent_2dp(pct, true); }

inline DatasetStats stats(const std::vector<Dataset>& datasets) {
    DatasetStats out;
    std::map<std::string, std::size_t> row_index;
    for (const Dataset& ds : datasets) {
        auto [it, inserted] = row_index.emplace(ds.language, out.rows.size());
        if (inserted) out.rows.push_back({ds.language, 0, 0});
        LanguageStats& row = out.rows[it->second];
        for (const LabeledExample& ex : ds.examples) {
            if (ex.label == 1) {
                row.positives += 1;
                out.total_positives += 1;
            } else {
                row.negatives += 1;
                out.total_negatives += 1;
            }
        }
    }
    return out;
}

inline DatasetStats stats_from_counts(
    const std::vector<std::tuple<std::string, std::uint64_t, std::uint64_t>>& counts) {
    DatasetStats out;
    for (const auto& [language, positives, negatives] : counts) {
        out.rows.push_back({language, positives, negatives});
        out.total_positives += positives;
        out.total_negatives += negatives;
    }
    return out;
}

// Counts file: header `language<TAB>positive<TAB>negative`, one language per
// row. Lets statistics over published count tables run without any text.
inline std::vector<std::tuple<std::string, std::uint64_t, std::uint64_t>> load_counts_tsv(
    const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("data: cannot open '" + path + "'");
    bool ok = false;
    std::size_t lineno = 1;
    std::string header = detail::read_line_normalized(in, ok);
    if (!ok) throw FormatError("data: '" + path + "': line 1: empty file, expected a header");
    detail::strip_bom(header);
    if (header != "language\tpositive\tnegative")
        throw FormatError("data: '" + path +
                          "': line 1: expected header 'language\\tpositive\\tnegative', got '" +
                          header + "'");
    std::vector<std::tuple<std::string, std::uint64_t, std::uint64_t>> counts;
    while (true) {
        std::string line = detail::read_line_normalized(in, ok);
        if (!ok) break;
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> fields = detail::split_tabs(line);
        if (fields.size() != 3)
            throw FormatError("data: '" + path + "': line " + std::to_string(lineno) +
                              ": expected 3 tab-separated columns, got " +
                              std::to_string(fields.size()));
        try {
            counts.emplace_back(fields[0], std::stoull(fields[1]), std::stoull(fields[2]));
        } catch (const std::exception&) {
            throw FormatError("data: '" + path + "': line " + std::to_string(lineno) +
                              ": counts must be non-negative integers");
        }
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Stratified split: per-class floor(count * fraction) goes to validation,
// remainders stay in training. Outputs preserve the input example order.
// ---------------------------------------------------------------------------

inline std::pair<Dataset, Dataset> split_stratified(const Dataset& dataset, double val_fraction,
                                                    Rng& rng) {
    if (val_fraction <= 0.0 || val_fraction >= 1.0)
        throw ConfigError("split_stratified: val_fraction must be in (0, 1), got " +
                          std::to_string(val_fraction));
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < dataset.examples.size(); ++i)
        by_class[dataset.examples[i].label == 1 ? 1 : 0].push_back(i);
    if (by_class[0].empty() || by_class[1].empty())
        throw InputError("split_stratified: dataset for '" + dataset.language +
                         "' must contain both classes (got " + std::to_string(by_class[0].size()) +
                         " NOT, " + std::to_string(by_class[1].size()) + " OFF)");

    std::vector<bool> in_val(dataset.examples.size(), false);
    for (auto& cls : by_class) {
        const std::size_t n_val =
            static_cast<std::size_t>(std::floor(static_cast<double>(cls.size()) * val_fraction));
        rng.shuffle(cls);
        for (std::size_t i = 0; i < n_val; ++i) in_val[cls[i]] = true;
    }

    Dataset train{dataset.language, dataset.partition, {}};
    Dataset val{dataset.language, dataset.partition, {}};
    for (std::size_t i = 0; i < dataset.examples.size(); ++i)
        (in_val[i] ? val : train).examples.push_back(dataset.examples[i]);
    return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Synthetic multilingual corpora. Every language gets a disjoint lowercase
// alphabet for its ordinary words; offensive examples additionally contain
// marker words, prefix + root, whose root comes from a shared uppercase pool
// with probability transfer_strength and from the language's private
// alphabet otherwise. A shared BPE vocabulary then aligns exactly the shared
// roots, which is the transfer channel under test. Roughly 25% of examples
// per language are offensive.
// ---------------------------------------------------------------------------

struct SyntheticData {
    std::vector<Dataset> datasets;                      // one per language, partition "train"
    std::vector<std::vector<std::string>> marker_words; // distinct realized markers per language
};

namespace detail {

inline std::string codepoint_utf8(char32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

// 9 private letters per language, drawn from disjoint slices of several
// scripts so the surface alphabets never collide.
inline std::vector<std::string> private_alphabet(std::size_t language_index) {
    static const std::pair<char32_t, std::size_t> ranges[] = {
        {U'a', 24},    // a..x (y, z reserved: never used, avoids confusion with roots)
        {0x03B1, 24},  // Greek alpha..
        {0x0430, 30},  // Cyrillic
        {0x0561, 27},  // Armenian
        {0x10D0, 30},  // Georgian
    };
    std::vector<std::string> pool;
    for (const auto& [start, count] : ranges)
        for (std::size_t i = 0; i < count; ++i) pool.push_back(codepoint_utf8(start + i));
    constexpr std::size_t kLettersPerLanguage = 9;
    const std::size_t max_languages = pool.size() / kLettersPerLanguage;
    if (language_index >= max_languages)
        throw ConfigError("gen_synthetic: at most " + std::to_string(max_languages) +
                          " languages are supported");
    const std::size_t base = language_index * kLettersPerLanguage;
    return {pool.begin() + static_cast<std::ptrdiff_t>(base),
            pool.begin() + static_cast<std::ptrdiff_t>(base + kLettersPerLanguage)};
}

inline std::string synth_language_tag(std::size_t i) {
    std::string tag = "syn";
    tag.push_back(static_cast<char>('A' + (i % 26)));
    if (i >= 26) tag += std::to_string(i / 26);
    return tag;
}

} // namespace detail

inline SyntheticData gen_synthetic_full(std::size_t n_languages, std::size_t per_language,
                                        double transfer_strength, std::uint64_t seed) {
    if (n_languages < 1) throw ConfigError("gen_synthetic: need at least 1 language");
    if (per_language < 20)
        throw ConfigError("gen_synthetic: need at least 20 examples per language, got " +
                          std::to_string(per_language));
    if (transfer_strength < 0.0 || transfer_strength > 1.0)
        throw ConfigError("gen_synthetic: transfer_strength must be in [0, 1], got " +
                          std::to_string(transfer_strength));

    Rng base(seed);

    // Shared marker roots: 4 uppercase letters each, identical across
    // languages. Generated once from the seed alone.
    constexpr std::size_t kNumRoots = 6;
    constexpr std::size_t kRootLen = 4;
    std::vector<std::string> shared_roots;
    {
        Rng rr = base.derive(rng_stream::kSynth, 0);
        std::set<std::string> used;
        while (shared_roots.size() < kNumRoots) {
            std::string root;
            for (std::size_t i = 0; i < kRootLen; ++i)
                root.push_back(static_cast<char>('A' + rr.below(26)));
            if (used.insert(root).second) shared_roots.push_back(root);
        }
    }

    SyntheticData out;
    for (std::size_t lang = 0; lang < n_languages; ++lang) {
        const std::vector<std::string> letters = detail::private_alphabet(lang);
        const std::string tag = detail::synth_language_tag(lang);
        Rng rng = base.derive(rng_stream::kSynth, lang + 1);

        // consonant/vowel split only shapes the words; nothing reads it back
        const auto consonant = [&](Rng& r) { return letters[r.below(6)]; };
        const auto vowel = [&](Rng& r) { return letters[6 + r.below(3)]; };
        const auto make_word = [&](Rng& r) {
            std::string w;
            const std::size_t syllables = 2 + r.below(2);
            for (std::size_t s = 0; s < syllables; ++s) w += consonant(r) + vowel(r);
            return w;
        };

        std::vector<std::string> background;
        {
            std::set<std::string> used;
            while (background.size() < 40) {
                std::string w = make_word(rng);
                if (used.insert(w).second) background.push_back(w);
            }
        }

        std::vector<std::string> private_roots;
        {
            std::set<std::string> used;
            while (private_roots.size() < kNumRoots) {
                std::string root;
                for (std::size_t i = 0; i < kRootLen; ++i) root += letters[rng.below(9)];
                if (used.insert(root).second) private_roots.push_back(root);
            }
        }

        // marker = 1-letter private prefix + root
        const auto make_marker = [&](Rng& r) {
            const std::string prefix = letters[r.below(4)];
            const bool shared = r.bernoulli(transfer_strength);
            const std::string& root =
                shared ? shared_roots[r.below(kNumRoots)] : private_roots[r.below(kNumRoots)];
            return prefix + root;
        };

        const std::size_t n_off =
            static_cast<std::size_t>(std::floor(0.25 * static_cast<double>(per_language) + 0.5));
        std::vector<int> labels(per_language, 0);
        for (std::size_t i = 0; i < n_off; ++i) labels[i] = 1;
        rng.shuffle(labels);

        // Both classes share one length distribution; markers replace
        // background words instead of extending the sentence, so length
        // cannot leak the label across languages.
        Dataset ds{tag, "train", {}};
        std::set<std::string> markers_seen;
        for (std::size_t i = 0; i < per_language; ++i) {
            const std::size_t n_words = 5 + rng.below(6);
            const std::size_t n_markers = labels[i] == 1 ? 1 + rng.below(2) : 0;
            std::vector<std::string> words;
            for (std::size_t w = 0; w < n_words - n_markers; ++w)
                words.push_back(background[rng.below(background.size())]);
            for (std::size_t m = 0; m < n_markers; ++m) {
                const std::string marker = make_marker(rng);
                markers_seen.insert(marker);
                words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)),
                             marker);
            }
            std::string text;
            for (std::size_t w = 0; w < words.size(); ++w) {
                if (w) text += ' ';
                text += words[w];
            }
            ds.examples.push_back({tag + "-" + std::to_string(i), std::move(text), labels[i], tag});
        }
        out.datasets.push_back(std::move(ds));
        out.marker_words.emplace_back(markers_seen.begin(), markers_seen.end());
    }
    return out;
}

inline std::vector<Dataset> gen_synthetic(std::size_t n_languages, std::size_t per_language,
                                          double transfer_strength, std::uint64_t seed) {
    return gen_synthetic_full(n_languages, per_language, transfer_strength, seed).datasets;
}

} // namespace xchain
