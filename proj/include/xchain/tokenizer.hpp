#pragma once

// Byte-pair-encoding subword vocabulary shared across languages.
//
// Words are whitespace-split, broken into codepoint symbols with the last
// symbol carrying the "</w>" end-of-word suffix, then pairs are merged
// greedily by frequency. Merge rules replay in training order at encode
// time, so the vocabulary file fully determines segmentation.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xchain/errors.hpp"

namespace xchain {

inline constexpr const char* kEndOfWord = "</w>";
inline constexpr const char* kUnkGlyph = "\xEF\xBF\xBD"; // U+FFFD

namespace detail {

// Splits UTF-8 into one string per codepoint. Invalid continuation bytes are
// kept as single-byte symbols rather than rejected; downstream they simply
// fail vocabulary lookup and become UNK.
inline std::vector<std::string> utf8_codepoints(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (c >= 0xF0)
            len = 4;
        else if (c >= 0xE0)
            len = 3;
        else if (c >= 0xC0)
            len = 2;
        if (i + len > text.size()) len = 1;
        out.push_back(text.substr(i, len));
        i += len;
    }
    return out;
}

inline std::vector<std::string> whitespace_split(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v') {
            if (!cur.empty()) {
                words.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

// Word -> initial symbol sequence: codepoints, last one suffixed with </w>.
inline std::vector<std::string> word_symbols(const std::string& word) {
    std::vector<std::string> syms = utf8_codepoints(word);
    if (!syms.empty()) syms.back() += kEndOfWord;
    return syms;
}

} // namespace detail

struct MergeRule {
    std::string left;
    std::string right;
    std::string result;
};

struct TokenSequence {
    std::vector<int> ids;                    // padded to max_len
    std::vector<std::uint8_t> attention_mask; // 1 exactly on non-PAD positions
    std::string language;
};

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kMask = 4;
    static constexpr int kNumSpecials = 5;

    static const std::vector<std::string>& special_tokens() {
        static const std::vector<std::string> names = {"<pad>", "<unk>", "<s>", "</s>", "<mask>"};
        return names;
    }

    Vocabulary() {
        for (const std::string& s : special_tokens()) add_token(s);
    }

    std::size_t size() const { return id_to_token_.size(); }

    int id_of(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? -1 : it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= static_cast<int>(size()))
            throw IndexError("Vocabulary::token: id " + std::to_string(id) + " out of range, size " +
                             std::to_string(size()));
        return id_to_token_[static_cast<std::size_t>(id)];
    }

    const std::vector<MergeRule>& merges() const { return merges_; }
    const std::vector<std::string>& tokens() const { return id_to_token_; }

    bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

    int add_token(const std::string& token) {
        auto it = token_to_id_.find(token);
        if (it != token_to_id_.end()) return it->second;
        const int id = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(token);
        token_to_id_.emplace(token, id);
        return id;
    }

    void add_merge(MergeRule rule) {
        add_token(rule.result);
        merges_.push_back(std::move(rule));
    }

    // ------------------------------------------------------------------
    // Serialization. Format:
    //   BPEVOCAB v1 <size>
    //   <one token per line, in id order>
    //   #MERGES
    //   left<TAB>right<TAB>result
    // ------------------------------------------------------------------

    std::string serialize() const {
        std::string out = "BPEVOCAB v1 " + std::to_string(size()) + "\n";
        for (const std::string& t : id_to_token_) out += t + "\n";
        out += "#MERGES\n";
        for (const MergeRule& m : merges_) out += m.left + "\t" + m.right + "\t" + m.result + "\n";
        return out;
    }

    static Vocabulary parse(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 1;
        if (!std::getline(in, line))
            throw FormatError("vocabulary: line 1: empty input, expected 'BPEVOCAB v1 <size>'");
        std::istringstream header(line);
        std::string magic, version;
        std::size_t count = 0;
        if (!(header >> magic >> version >> count) || magic != "BPEVOCAB" || version != "v1")
            throw FormatError("vocabulary: line 1: bad header '" + line +
                              "', expected 'BPEVOCAB v1 <size>'");
        if (count < kNumSpecials)
            throw FormatError("vocabulary: line 1: size " + std::to_string(count) +
                              " is smaller than the " + std::to_string(kNumSpecials) +
                              " special tokens");
        Vocabulary vocab;
        vocab.id_to_token_.clear();
        vocab.token_to_id_.clear();
        for (std::size_t i = 0; i < count; ++i) {
            ++lineno;
            if (!std::getline(in, line))
                throw FormatError("vocabulary: line " + std::to_string(lineno) +
                                  ": unexpected end of file, expected token " + std::to_string(i));
            if (line.empty())
                throw FormatError("vocabulary: line " + std::to_string(lineno) + ": empty token");
            if (i < static_cast<std::size_t>(kNumSpecials) && line != special_tokens()[i])
                throw FormatError("vocabulary: line " + std::to_string(lineno) + ": expected special '" +
                                  special_tokens()[i] + "', got '" + line + "'");
            if (vocab.token_to_id_.count(line))
                throw FormatError("vocabulary: line " + std::to_string(lineno) + ": duplicate token '" +
                                  line + "'");
            vocab.add_token(line);
        }
        ++lineno;
        if (!std::getline(in, line) || line != "#MERGES")
            throw FormatError("vocabulary: line " + std::to_string(lineno) +
                              ": expected '#MERGES' sentinel");
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            const std::size_t t1 = line.find('\t');
            const std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
            if (t1 == std::string::npos || t2 == std::string::npos)
                throw FormatError("vocabulary: line " + std::to_string(lineno) +
                                  ": merge rule needs 3 tab-separated fields");
            MergeRule rule{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)};
            if (vocab.id_of(rule.result) < 0)
                throw FormatError("vocabulary: line " + std::to_string(lineno) + ": merge result '" +
                                  rule.result + "' is not in the vocabulary");
            vocab.merges_.push_back(std::move(rule));
        }
        return vocab;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw InputError("vocabulary: cannot open '" + path + "' for writing");
        const std::string text = serialize();
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw InputError("vocabulary: failed writing '" + path + "'");
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw InputError("vocabulary: cannot open '" + path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<MergeRule> merges_;
};

// ---------------------------------------------------------------------------
// Training: greedy most-frequent-pair merges until the target size is
// reached or no pair occurs at least twice. Ties break lexicographically on
// (left, right) so retraining is reproducible anywhere.
// ---------------------------------------------------------------------------

inline Vocabulary train_bpe(const std::vector<std::string>& corpus, std::size_t target_vocab_size) {
    if (corpus.empty()) throw InputError("train_bpe: empty corpus");

    // word frequency table, first-seen order
    std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
    {
        std::unordered_map<std::string, std::size_t> index;
        for (const std::string& text : corpus) {
            for (std::string& w : detail::whitespace_split(text)) {
                auto [it, inserted] = index.emplace(w, words.size());
                if (inserted)
                    words.push_back({detail::word_symbols(w), 1});
                else
                    words[it->second].second += 1;
            }
        }
    }
    if (words.empty()) throw InputError("train_bpe: corpus contains no words");

    // base alphabet, sorted for dense deterministic ids
    Vocabulary vocab;
    {
        std::map<std::string, bool> alphabet;
        for (const auto& [syms, cnt] : words)
            for (const std::string& s : syms) alphabet[s] = true;
        const std::size_t minimum = Vocabulary::kNumSpecials + alphabet.size();
        if (target_vocab_size < minimum)
            throw InputError("train_bpe: target_vocab_size " + std::to_string(target_vocab_size) +
                             " is below the minimum " + std::to_string(minimum) + " (" +
                             std::to_string(alphabet.size()) + " alphabet symbols + " +
                             std::to_string(Vocabulary::kNumSpecials) + " specials)");
        for (const auto& [sym, _] : alphabet) vocab.add_token(sym);
    }

    while (vocab.size() < target_vocab_size) {
        // count every adjacent position, overlaps included
        std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
        for (const auto& [syms, cnt] : words)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i)
                pair_counts[{syms[i], syms[i + 1]}] += cnt;

        const std::pair<std::string, std::string>* best = nullptr;
        std::size_t best_count = 1; // require >= 2
        for (const auto& [pair, count] : pair_counts) {
            if (count > best_count) { // std::map iterates in pair order, so
                best = &pair;         // the first maximum is the smallest pair
                best_count = count;
            }
        }
        if (!best) break;

        MergeRule rule{best->first, best->second, best->first + best->second};
        for (auto& [syms, cnt] : words) {
            for (std::size_t i = 0; i + 1 < syms.size();) {
                if (syms[i] == rule.left && syms[i + 1] == rule.right) {
                    syms[i] = rule.result;
                    syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(i) + 1);
                } else {
                    ++i;
                }
            }
        }
        vocab.add_merge(std::move(rule));
    }
    return vocab;
}

// ---------------------------------------------------------------------------
// Encoding: replay the merge rules in training order per word, then wrap
// with BOS/EOS, truncate keeping both, and pad to max_len.
// ---------------------------------------------------------------------------

inline std::vector<int> encode_word(const Vocabulary& vocab, const std::string& word) {
    std::vector<std::string> syms = detail::word_symbols(word);
    for (const MergeRule& rule : vocab.merges()) {
        for (std::size_t i = 0; i + 1 < syms.size();) {
            if (syms[i] == rule.left && syms[i + 1] == rule.right) {
                syms[i] = rule.result;
                syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(i) + 1);
            } else {
                ++i;
            }
        }
    }
    std::vector<int> ids;
    ids.reserve(syms.size());
    for (const std::string& s : syms) {
        const int id = vocab.id_of(s);
        ids.push_back(id < 0 ? Vocabulary::kUnk : id);
    }
    return ids;
}

inline TokenSequence encode(const Vocabulary& vocab, const std::string& text, std::size_t max_len,
                            std::string language = "") {
    if (max_len < 3)
        throw InputError("encode: max_len must be at least 3 (BOS + content + EOS), got " +
                         std::to_string(max_len));
    std::vector<int> content;
    for (const std::string& w : detail::whitespace_split(text)) {
        const std::vector<int> ids = encode_word(vocab, w);
        content.insert(content.end(), ids.begin(), ids.end());
    }
    if (content.size() > max_len - 2) content.resize(max_len - 2);

    TokenSequence seq;
    seq.language = std::move(language);
    seq.ids.reserve(max_len);
    seq.ids.push_back(Vocabulary::kBos);
    seq.ids.insert(seq.ids.end(), content.begin(), content.end());
    seq.ids.push_back(Vocabulary::kEos);
    seq.attention_mask.assign(seq.ids.size(), 1);
    while (seq.ids.size() < max_len) {
        seq.ids.push_back(Vocabulary::kPad);
        seq.attention_mask.push_back(0);
    }
    return seq;
}

// Concatenates token strings, drops silent specials, renders UNK as U+FFFD
// and turns end-of-word suffixes back into spaces.
inline std::string decode(const Vocabulary& vocab, const std::vector<int>& ids) {
    std::string joined;
    for (int id : ids) {
        if (id < 0 || id >= static_cast<int>(vocab.size()))
            throw IndexError("decode: id " + std::to_string(id) + " out of range, vocabulary size " +
                             std::to_string(vocab.size()));
        if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
        if (id == Vocabulary::kUnk) {
            joined += kUnkGlyph;
            continue;
        }
        joined += vocab.token(id);
    }
    // "</w>" only ever appears as a token suffix
    std::string out;
    out.reserve(joined.size());
    const std::string eow = kEndOfWord;
    std::size_t i = 0;
    while (i < joined.size()) {
        if (joined.compare(i, eow.size(), eow) == 0) {
            out += ' ';
            i += eow.size();
        } else {
            out += joined[i];
            ++i;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

} // namespace xchain
