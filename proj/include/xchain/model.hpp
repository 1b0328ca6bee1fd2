#pragma once

// Miniature XLM-R-style encoder: learned token + position embeddings,
// pre-layer-norm transformer blocks with GELU feed-forward, a masked-LM head
// and a binary classification head pooled at the BOS position. Checkpoints
// are binary, little-endian, with the vocabulary embedded so one file
// restores the whole inference stack.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "xchain/errors.hpp"
#include "xchain/rng.hpp"
#include "xchain/tensor.hpp"
#include "xchain/tokenizer.hpp"

namespace xchain {

struct ModelConfig {
    std::size_t vocab_size = 1000;
    std::size_t max_positions = 50;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t d_ff = 128;
    double dropout_rate = 0.1;
    std::size_t n_classes = 2;

    void validate() const {
        if (vocab_size < Vocabulary::kNumSpecials)
            throw ConfigError("ModelConfig: vocab_size must cover the " +
                              std::to_string(Vocabulary::kNumSpecials) + " special tokens");
        if (max_positions < 3) throw ConfigError("ModelConfig: max_positions must be at least 3");
        if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0)
            throw ConfigError("ModelConfig: dimensions must be positive");
        if (d_model % n_heads != 0)
            throw ConfigError("ModelConfig: d_model " + std::to_string(d_model) +
                              " is not divisible by n_heads " + std::to_string(n_heads));
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("ModelConfig: dropout_rate must be in [0, 1)");
        if (n_classes != 2) throw ConfigError("ModelConfig: n_classes must be 2");
    }

    std::size_t head_dim() const { return d_model / n_heads; }
};

struct LayerParams {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gamma, ln2_beta;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

struct ModelParams {
    ModelConfig config;
    Tensor tok_emb; // vocab_size x d_model
    Tensor pos_emb; // max_positions x d_model
    std::vector<LayerParams> layers;
    Tensor final_ln_gamma, final_ln_beta;
    Tensor mlm_w, mlm_b; // d_model x vocab_size, vocab_size
    Tensor cls_w, cls_b; // d_model x n_classes, n_classes

    // Fixed enumeration order; checkpoints, the optimizer and gradient
    // checks all rely on it.
    std::vector<std::pair<std::string, Tensor>> named_tensors() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("tok_emb", tok_emb);
        out.emplace_back("pos_emb", pos_emb);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layers." + std::to_string(i) + ".";
            const LayerParams& l = layers[i];
            out.emplace_back(p + "ln1.gamma", l.ln1_gamma);
            out.emplace_back(p + "ln1.beta", l.ln1_beta);
            out.emplace_back(p + "attn.wq", l.wq);
            out.emplace_back(p + "attn.bq", l.bq);
            out.emplace_back(p + "attn.wk", l.wk);
            out.emplace_back(p + "attn.bk", l.bk);
            out.emplace_back(p + "attn.wv", l.wv);
            out.emplace_back(p + "attn.bv", l.bv);
            out.emplace_back(p + "attn.wo", l.wo);
            out.emplace_back(p + "attn.bo", l.bo);
            out.emplace_back(p + "ln2.gamma", l.ln2_gamma);
            out.emplace_back(p + "ln2.beta", l.ln2_beta);
            out.emplace_back(p + "ff.w1", l.ff_w1);
            out.emplace_back(p + "ff.b1", l.ff_b1);
            out.emplace_back(p + "ff.w2", l.ff_w2);
            out.emplace_back(p + "ff.b2", l.ff_b2);
        }
        out.emplace_back("final_ln.gamma", final_ln_gamma);
        out.emplace_back("final_ln.beta", final_ln_beta);
        out.emplace_back("mlm.w", mlm_w);
        out.emplace_back("mlm.b", mlm_b);
        out.emplace_back("cls.w", cls_w);
        out.emplace_back("cls.b", cls_b);
        return out;
    }

    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_tensors()) out.push_back(t);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto& [name, t] : named_tensors()) n += t.size();
        return n;
    }

    void zero_grads() {
        for (auto& [name, t] : named_tensors()) {
            Tensor h = t;
            h.zero_grad();
        }
    }
};

// Weights ~ Normal(0, 0.02), biases 0, layer-norm gain 1. Deterministic per
// seed: tensors are filled in named_tensors order from one derived stream.
inline ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams p;
    p.config = config;
    const std::size_t d = config.d_model, v = config.vocab_size, ff = config.d_ff;

    p.tok_emb = Tensor::zeros({v, d});
    p.pos_emb = Tensor::zeros({config.max_positions, d});
    p.layers.resize(config.n_layers);
    for (LayerParams& l : p.layers) {
        l.ln1_gamma = Tensor::full({d}, 1.0);
        l.ln1_beta = Tensor::zeros({d});
        l.wq = Tensor::zeros({d, d});
        l.bq = Tensor::zeros({d});
        l.wk = Tensor::zeros({d, d});
        l.bk = Tensor::zeros({d});
        l.wv = Tensor::zeros({d, d});
        l.bv = Tensor::zeros({d});
        l.wo = Tensor::zeros({d, d});
        l.bo = Tensor::zeros({d});
        l.ln2_gamma = Tensor::full({d}, 1.0);
        l.ln2_beta = Tensor::zeros({d});
        l.ff_w1 = Tensor::zeros({d, ff});
        l.ff_b1 = Tensor::zeros({ff});
        l.ff_w2 = Tensor::zeros({ff, d});
        l.ff_b2 = Tensor::zeros({d});
    }
    p.final_ln_gamma = Tensor::full({d}, 1.0);
    p.final_ln_beta = Tensor::zeros({d});
    p.mlm_w = Tensor::zeros({d, v});
    p.mlm_b = Tensor::zeros({v});
    p.cls_w = Tensor::zeros({d, config.n_classes});
    p.cls_b = Tensor::zeros({config.n_classes});

    Rng rng = Rng(seed).derive(rng_stream::kInit);
    for (auto& [name, t] : p.named_tensors()) {
        const bool is_weight = t.rank() == 2;
        if (!is_weight) continue; // biases stay 0, layer-norm vectors stay at init
        Tensor h = t;
        for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] = rng.gauss(0.0, 0.02);
    }
    return p;
}

enum class RunMode { train, eval };

// Captures attention probabilities for inspection: one (L x L) tensor per
// (layer, example, head), in that nesting order.
struct ForwardProbe {
    std::vector<Tensor> attention;
};

namespace detail {

inline void validate_batch(const ModelParams& params, const std::vector<TokenSequence>& batch) {
    if (batch.empty()) throw InputError("forward: empty batch");
    const std::size_t len = batch[0].ids.size();
    if (len == 0) throw InputError("forward: empty sequence");
    if (len > params.config.max_positions)
        throw InputError("forward: sequence length " + std::to_string(len) +
                         " exceeds max_positions " + std::to_string(params.config.max_positions));
    for (const TokenSequence& seq : batch) {
        if (seq.ids.size() != len)
            throw InputError("forward: all sequences in a batch must share one padded length");
        if (seq.attention_mask.size() != len)
            throw InputError("forward: attention mask length does not match ids");
        for (int id : seq.ids)
            if (id < 0 || id >= static_cast<int>(params.config.vocab_size))
                throw CompatibilityError("forward: token id " + std::to_string(id) +
                                         " outside model vocabulary of size " +
                                         std::to_string(params.config.vocab_size));
    }
}

// Shared encoder trunk; returns final hidden states, (B*L) x d_model.
inline Tensor encode_batch(const ModelParams& params, const std::vector<TokenSequence>& batch,
                           RunMode mode, Rng* rng, Tape* tape, ForwardProbe* probe) {
    validate_batch(params, batch);
    const ModelConfig& cfg = params.config;
    const std::size_t b = batch.size();
    const std::size_t len = batch[0].ids.size();
    const double drop = mode == RunMode::train ? cfg.dropout_rate : 0.0;
    if (drop > 0.0 && rng == nullptr)
        throw UsageError("forward: training mode with dropout needs an Rng");

    auto maybe_dropout = [&](const Tensor& t) {
        return drop > 0.0 ? dropout(t, drop, *rng, tape) : t;
    };

    std::vector<std::size_t> tok_ids, pos_ids;
    tok_ids.reserve(b * len);
    pos_ids.reserve(b * len);
    for (const TokenSequence& seq : batch)
        for (std::size_t i = 0; i < len; ++i) {
            tok_ids.push_back(static_cast<std::size_t>(seq.ids[i]));
            pos_ids.push_back(i);
        }

    Tensor h = add(gather_rows(params.tok_emb, tok_ids, tape),
                   gather_rows(params.pos_emb, pos_ids, tape), tape);
    h = maybe_dropout(h);

    // additive key masks: 0 on real tokens, -1e30 on PAD
    std::vector<std::vector<double>> key_bias(b, std::vector<double>(len, 0.0));
    for (std::size_t e = 0; e < b; ++e)
        for (std::size_t i = 0; i < len; ++i)
            if (!batch[e].attention_mask[i]) key_bias[e][i] = -1e30;

    const std::size_t hd = cfg.head_dim();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    for (const LayerParams& layer : params.layers) {
        Tensor normed = layer_norm(h, layer.ln1_gamma, layer.ln1_beta, 1e-5, tape);
        Tensor q = add_row_bias(matmul(normed, layer.wq, tape), layer.bq, tape);
        Tensor k = add_row_bias(matmul(normed, layer.wk, tape), layer.bk, tape);
        Tensor v = add_row_bias(matmul(normed, layer.wv, tape), layer.bv, tape);

        std::vector<Tensor> ctx_rows;
        ctx_rows.reserve(b);
        for (std::size_t e = 0; e < b; ++e) {
            std::vector<std::size_t> rows(len);
            for (std::size_t i = 0; i < len; ++i) rows[i] = e * len + i;
            Tensor qe = gather_rows(q, rows, tape);
            Tensor ke = gather_rows(k, rows, tape);
            Tensor ve = gather_rows(v, rows, tape);
            std::vector<Tensor> heads;
            heads.reserve(cfg.n_heads);
            for (std::size_t hh = 0; hh < cfg.n_heads; ++hh) {
                const std::size_t c0 = hh * hd, c1 = (hh + 1) * hd;
                Tensor qh = slice_cols(qe, c0, c1, tape);
                Tensor kh = slice_cols(ke, c0, c1, tape);
                Tensor vh = slice_cols(ve, c0, c1, tape);
                Tensor scores = scale(matmul(qh, transpose(kh, tape), tape), inv_sqrt_hd, tape);
                scores = add_row_const(scores, key_bias[e], tape);
                Tensor probs = softmax(scores, 1, tape);
                if (probe) probe->attention.push_back(probs);
                heads.push_back(matmul(probs, vh, tape));
            }
            ctx_rows.push_back(concat_cols(heads, tape));
        }
        Tensor ctx = b == 1 ? ctx_rows[0] : concat_rows(ctx_rows, tape);
        Tensor attn_out = add_row_bias(matmul(ctx, layer.wo, tape), layer.bo, tape);
        h = add(h, maybe_dropout(attn_out), tape);

        Tensor normed2 = layer_norm(h, layer.ln2_gamma, layer.ln2_beta, 1e-5, tape);
        Tensor ff = add_row_bias(matmul(normed2, layer.ff_w1, tape), layer.ff_b1, tape);
        ff = gelu(ff, tape);
        ff = add_row_bias(matmul(ff, layer.ff_w2, tape), layer.ff_b2, tape);
        h = add(h, maybe_dropout(ff), tape);
    }
    return layer_norm(h, params.final_ln_gamma, params.final_ln_beta, 1e-5, tape);
}

} // namespace detail

// Classification logits, B x n_classes, pooled at the BOS position.
inline Tensor forward_classify(const ModelParams& params, const std::vector<TokenSequence>& batch,
                               RunMode mode = RunMode::eval, Rng* rng = nullptr,
                               Tape* tape = nullptr, ForwardProbe* probe = nullptr) {
    Tensor h = detail::encode_batch(params, batch, mode, rng, tape, probe);
    const std::size_t len = batch[0].ids.size();
    std::vector<std::size_t> bos_rows(batch.size());
    for (std::size_t e = 0; e < batch.size(); ++e) bos_rows[e] = e * len;
    Tensor pooled = gather_rows(h, bos_rows, tape);
    return add_row_bias(matmul(pooled, params.cls_w, tape), params.cls_b, tape);
}

// Per-position vocabulary logits, (B*L) x vocab_size; row e*L+i belongs to
// position i of example e. Loss is computed only at caller-chosen rows.
inline Tensor forward_mlm(const ModelParams& params, const std::vector<TokenSequence>& batch,
                          RunMode mode = RunMode::eval, Rng* rng = nullptr, Tape* tape = nullptr,
                          ForwardProbe* probe = nullptr) {
    Tensor h = detail::encode_batch(params, batch, mode, rng, tape, probe);
    return add_row_bias(matmul(h, params.mlm_w, tape), params.mlm_b, tape);
}

// ---------------------------------------------------------------------------
// Checkpoints. Binary little-endian:
//   magic "XCHN", u32 version = 1,
//   u64 config length + config text (key=value lines),
//   u64 vocabulary length + vocabulary file bytes,
//   u32 tensor count,
//   per tensor: u16 name length, name, u8 rank, u64 dims..., float32 data.
// ---------------------------------------------------------------------------

struct Checkpoint {
    ModelParams params;
    Vocabulary vocab;
    std::vector<std::string> chain_history; // languages fine-tuned so far, in order
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const std::string& s) { buf_ += s; }
    const std::string& str() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string buf) : buf_(std::move(buf)) {}

    std::size_t offset() const { return pos_; }
    bool exhausted() const { return pos_ == buf_.size(); }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }
    std::uint16_t u16() { return static_cast<std::uint16_t>(read_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(read_le(4)); }
    std::uint64_t u64() { return read_le(8); }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size())
            throw FormatError("checkpoint: unexpected end of file at offset " + std::to_string(pos_) +
                              " (need " + std::to_string(n) + " more bytes of " +
                              std::to_string(buf_.size()) + ")");
    }
    std::uint64_t read_le(std::size_t n) {
        need(n);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += n;
        return v;
    }

    std::string buf_;
    std::size_t pos_ = 0;
};

inline std::string config_text(const ModelConfig& c, const std::vector<std::string>& chain) {
    std::string out;
    out += "vocab_size=" + std::to_string(c.vocab_size) + "\n";
    out += "max_positions=" + std::to_string(c.max_positions) + "\n";
    out += "d_model=" + std::to_string(c.d_model) + "\n";
    out += "n_heads=" + std::to_string(c.n_heads) + "\n";
    out += "n_layers=" + std::to_string(c.n_layers) + "\n";
    out += "d_ff=" + std::to_string(c.d_ff) + "\n";
    out += "dropout_rate=" + format_double(c.dropout_rate) + "\n";
    out += "n_classes=" + std::to_string(c.n_classes) + "\n";
    std::string history;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        if (i) history += ",";
        history += chain[i];
    }
    out += "chain_history=" + history + "\n";
    return out;
}

inline std::pair<ModelConfig, std::vector<std::string>> parse_config_text(const std::string& text) {
    ModelConfig c;
    std::vector<std::string> chain;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("checkpoint: config line '" + line + "' is not key=value");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "vocab_size")
                c.vocab_size = std::stoull(value);
            else if (key == "max_positions")
                c.max_positions = std::stoull(value);
            else if (key == "d_model")
                c.d_model = std::stoull(value);
            else if (key == "n_heads")
                c.n_heads = std::stoull(value);
            else if (key == "n_layers")
                c.n_layers = std::stoull(value);
            else if (key == "d_ff")
                c.d_ff = std::stoull(value);
            else if (key == "dropout_rate")
                c.dropout_rate = std::stod(value);
            else if (key == "n_classes")
                c.n_classes = std::stoull(value);
            else if (key == "chain_history") {
                std::size_t start = 0;
                while (start <= value.size() && !value.empty()) {
                    const std::size_t comma = value.find(',', start);
                    if (comma == std::string::npos) {
                        chain.push_back(value.substr(start));
                        break;
                    }
                    chain.push_back(value.substr(start, comma - start));
                    start = comma + 1;
                }
            } else {
                throw FormatError("checkpoint: unknown config key '" + key + "'");
            }
        } catch (const FormatError&) {
            throw;
        } catch (const std::exception&) {
            throw FormatError("checkpoint: bad value for config key '" + key + "'");
        }
    }
    return {c, chain};
}

} // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const ModelParams& params = ckpt.params;
    if (ckpt.vocab.size() != params.config.vocab_size)
        throw CompatibilityError("checkpoint: vocabulary size " + std::to_string(ckpt.vocab.size()) +
                                 " does not match config vocab_size " +
                                 std::to_string(params.config.vocab_size));
    detail::ByteWriter w;
    w.bytes("XCHN");
    w.u32(1);
    const std::string cfg = detail::config_text(params.config, ckpt.chain_history);
    w.u64(cfg.size());
    w.bytes(cfg);
    const std::string vocab = ckpt.vocab.serialize();
    w.u64(vocab.size());
    w.bytes(vocab);
    const auto named = params.named_tensors();
    w.u32(static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u64(d);
        for (std::size_t i = 0; i < t.size(); ++i) w.f32(static_cast<float>(t.data()[i]));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("checkpoint: cannot open '" + path + "' for writing");
    out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
    if (!out) throw InputError("checkpoint: failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("checkpoint: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    detail::ByteReader r(buf.str());

    if (r.bytes(4) != "XCHN") throw FormatError("checkpoint: bad magic at offset 0, expected 'XCHN'");
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version) +
                          " at offset 4");

    const std::uint64_t cfg_len = r.u64();
    const std::string cfg_text = r.bytes(cfg_len);
    auto [config, chain] = detail::parse_config_text(cfg_text);
    config.validate();

    const std::uint64_t vocab_len = r.u64();
    const std::string vocab_text = r.bytes(vocab_len);
    Vocabulary vocab = Vocabulary::parse(vocab_text);
    if (vocab.size() != config.vocab_size)
        throw FormatError("checkpoint: embedded vocabulary has " + std::to_string(vocab.size()) +
                          " tokens but config says " + std::to_string(config.vocab_size));

    // Build the parameter skeleton from config, then fill tensors by name in
    // the exact stored order.
    Checkpoint ckpt;
    ckpt.params = init_model(config, 0);
    ckpt.vocab = std::move(vocab);
    ckpt.chain_history = std::move(chain);

    auto named = ckpt.params.named_tensors();
    const std::uint32_t count = r.u32();
    if (count != named.size())
        throw FormatError("checkpoint: tensor count " + std::to_string(count) + " does not match " +
                          std::to_string(named.size()) + " expected from config");
    for (auto& [name, t] : named) {
        const std::size_t name_off = r.offset();
        const std::uint16_t name_len = r.u16();
        const std::string stored = r.bytes(name_len);
        if (stored != name)
            throw FormatError("checkpoint: tensor '" + stored + "' at offset " +
                              std::to_string(name_off) + ", expected '" + name + "'");
        const std::uint8_t rank = r.u8();
        if (rank != t.rank())
            throw FormatError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank) +
                              ", expected " + std::to_string(t.rank()));
        for (std::size_t d = 0; d < t.rank(); ++d) {
            const std::uint64_t dim = r.u64();
            if (dim != t.shape()[d])
                throw FormatError("checkpoint: tensor '" + name + "' dimension " + std::to_string(d) +
                                  " is " + std::to_string(dim) + ", expected " +
                                  std::to_string(t.shape()[d]));
        }
        Tensor h = t;
        for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] = static_cast<double>(r.f32());
    }
    if (!r.exhausted())
        throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));
    return ckpt;
}

} // namespace xchain
