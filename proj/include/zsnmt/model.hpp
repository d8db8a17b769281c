// Tagged multilingual Transformer encoder-decoder. The target language
// conditions the model in up to three ways: a <2xx> tag token prepended to
// the source, per-language layer-norm parameters at every norm site
// (language-aware layer normalization), and a per-language d×d bridge
// applied to the encoder output before cross-attention (language-aware
// transformation). Post-norm residual layout throughout.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "zsnmt/tensor.hpp"
#include "zsnmt/util.hpp"
#include "zsnmt/vocab.hpp"

namespace zsnmt {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 512;
    std::size_t ffn_dim = 2048;
    std::size_t heads = 8;
    std::size_t layers = 6;  // encoder and decoder depth
    std::vector<std::string> languages;  // the target-language set, sorted
    bool use_laln = false;
    bool use_lalt = false;
    bool use_matt = false;  // placeholder only; enabling it is an error
    double dropout = 0.0;       // residual/embedding dropout
    double attn_dropout = 0.0;  // dropout on attention weights
    double base_std = 0.0;      // init std for layer 1; 0 means 1/sqrt(d_model)
    std::uint64_t seed = 1;

    double effective_base_std() const {
        return base_std > 0.0 ? base_std : 1.0 / std::sqrt(static_cast<double>(d_model));
    }

    void validate() const {
        if (use_matt)
            throw ConfigError("merged attention (use_matt) is not supported; "
                              "the decoder uses standard self+cross attention");
        if (languages.empty()) throw ConfigError("model needs at least one language");
        if (!std::is_sorted(languages.begin(), languages.end()) ||
            std::adjacent_find(languages.begin(), languages.end()) != languages.end())
            throw ConfigError("model languages must be sorted and unique");
        if (d_model == 0 || heads == 0 || d_model % heads != 0)
            throw ConfigError("d_model (" + std::to_string(d_model) +
                              ") must be a positive multiple of heads (" +
                              std::to_string(heads) + ")");
        if (layers < 1) throw ConfigError("layers must be >= 1");
        if (ffn_dim == 0) throw ConfigError("ffn_dim must be positive");
        if (dropout < 0.0 || dropout >= 1.0 || attn_dropout < 0.0 || attn_dropout >= 1.0)
            throw ConfigError("dropout rates must lie in [0,1)");
        const std::size_t needed = static_cast<std::size_t>(kNumReserved) + languages.size();
        if (vocab_size < needed)
            throw ConfigError("vocab_size " + std::to_string(vocab_size) +
                              " cannot hold " + std::to_string(needed) +
                              " reserved + tag tokens");
        if (base_std < 0.0) throw ConfigError("base_std must be >= 0");
    }

    // Norm sites: 2 per encoder layer, 3 per decoder layer.
    std::size_t norm_sites() const { return layers * 2 + layers * 3; }
};

// Exact parameter contributions of the language-aware extensions.
inline std::size_t laln_param_count(const ModelConfig& cfg) {
    return cfg.use_laln ? 2 * cfg.d_model * cfg.languages.size() * cfg.norm_sites() : 0;
}

inline std::size_t lalt_param_count(const ModelConfig& cfg) {
    return cfg.use_lalt ? cfg.languages.size() * cfg.d_model * cfg.d_model : 0;
}

// Net growth relative to the shared-parameter baseline. Per-language norm
// tensors replace one shared gain/bias per site, so the delta is one
// language's worth less than the component total; the bridges are purely
// additive.
inline std::size_t laln_param_delta(const ModelConfig& cfg) {
    return cfg.use_laln ? laln_param_count(cfg) - 2 * cfg.d_model * cfg.norm_sites() : 0;
}

inline std::size_t lalt_param_delta(const ModelConfig& cfg) { return lalt_param_count(cfg); }

// Closed-form per-component parameter counts, mirroring the tensors the
// model actually builds. Lets tooling report sizes of configurations far
// too large to instantiate.
inline std::map<std::string, std::size_t> analytic_param_counts(const ModelConfig& cfg) {
    const std::size_t d = cfg.d_model, f = cfg.ffn_dim, v = cfg.vocab_size, n = cfg.layers;
    const std::size_t attn = 4 * d * d + 4 * d;          // wq/wk/wv/wo + biases
    const std::size_t ffn = d * f + f + f * d + d;       // w1/b1/w2/b2
    const std::size_t shared_norm = 2 * d;               // g/b at one site
    std::map<std::string, std::size_t> out;
    out["embedding"] = v * d;
    out["output"] = d * v;
    out["encoder"] = n * (attn + ffn) + (cfg.use_laln ? 0 : n * 2 * shared_norm);
    out["decoder"] = n * (2 * attn + ffn) + (cfg.use_laln ? 0 : n * 3 * shared_norm);
    out["laln"] = laln_param_count(cfg);
    out["lalt"] = lalt_param_count(cfg);
    std::size_t total = 0;
    for (const auto& [name, c] : out) total += c;
    out["total"] = total;
    return out;
}

template <typename T>
class TransformerModel {
  public:
    struct Decoded {
        Tensor<T> states;  // [|y| × d]
        Tensor<T> logits;  // [|y| × vocab]
    };

    explicit TransformerModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        build_params();
    }

    const ModelConfig& config() const { return cfg_; }

    std::map<std::string, Tensor<T>>& params() { return params_; }
    const std::map<std::string, Tensor<T>>& params() const { return params_; }

    Tensor<T>& param(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw IndexError("no model parameter named '" + name + "'");
        return it->second;
    }
    const Tensor<T>& param(const std::string& name) const {
        return const_cast<TransformerModel*>(this)->param(name);
    }

    int lang_index(const std::string& lang) const {
        auto it = std::lower_bound(cfg_.languages.begin(), cfg_.languages.end(), lang);
        if (it == cfg_.languages.end() || *it != lang)
            throw LanguageError("language '" + lang + "' not in the model's language set");
        return static_cast<int>(it - cfg_.languages.begin());
    }

    // Tag ids follow the pinned vocabulary layout: reserved ids first, then
    // one tag per language in sorted order. Valid for any vocabulary built
    // with the same language set.
    int tag_id(const std::string& lang) const { return kNumReserved + lang_index(lang); }

    // H = encoder over [tag(t), x]; one output row per input token,
    // tag included. With LALN every norm site uses the target language's
    // gain and bias.
    Tensor<T> encode(const std::vector<int>& x, const std::string& t,
                     Rng* rng = nullptr) const {
        if (x.empty()) throw SequenceError("encode: empty source sequence");
        std::vector<int> ids;
        ids.reserve(x.size() + 1);
        ids.push_back(tag_id(t));
        ids.insert(ids.end(), x.begin(), x.end());
        check_token_ids(ids);

        Tensor<T> h = embed(ids, rng);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            const std::string p = "enc." + std::to_string(l);
            Tensor<T> a = attention(h, h, p + ".attn", /*causal=*/false, rng);
            h = norm(residual(h, a, rng), p + ".norm1", t);
            Tensor<T> f = ffn(h, p + ".ffn", rng);
            h = norm(residual(h, f, rng), p + ".norm2", t);
        }
        return h;
    }

    // H·W_t when the language-aware bridge is enabled, H unchanged otherwise.
    Tensor<T> bridge(const Tensor<T>& enc_h, const std::string& t) const {
        if (!cfg_.use_lalt) {
            lang_index(t);  // still validate the language
            return enc_h;
        }
        return matmul(enc_h, param("bridge." + cfg_.languages[lang_index(t)]));
    }

    // Runs the decoder over input sequence y (already BOS-shifted for
    // teacher forcing) attending to the (bridged) encoder output. Returns
    // the final states S and per-position next-token logits.
    Decoded decode(const std::vector<int>& y, const Tensor<T>& enc_h, const std::string& t,
                   Rng* rng = nullptr) const {
        if (y.empty()) throw SequenceError("decode: empty decoder input");
        check_token_ids(y);
        if (enc_h.rank() != 2 || enc_h.dim(1) != cfg_.d_model)
            throw DimensionError("decode: encoder output must be [n x d_model], got " +
                                 shape_str(enc_h.shape()));
        Tensor<T> mem = bridge(enc_h, t);

        Tensor<T> s = embed(y, rng);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            const std::string p = "dec." + std::to_string(l);
            Tensor<T> a = attention(s, s, p + ".self", /*causal=*/true, rng);
            s = norm(residual(s, a, rng), p + ".norm1", t);
            Tensor<T> c = attention(s, mem, p + ".cross", /*causal=*/false, rng);
            s = norm(residual(s, c, rng), p + ".norm2", t);
            Tensor<T> f = ffn(s, p + ".ffn", rng);
            s = norm(residual(s, f, rng), p + ".norm3", t);
        }
        return {s, matmul(s, param("out.proj"))};
    }

    // Log-probabilities of the next token after the given prefix; builds no
    // graph. The entry point for greedy and beam decoding.
    std::vector<T> next_logprobs(const Tensor<T>& enc_h, const std::vector<int>& prefix,
                                 const std::string& t) const {
        NoGradGuard ng;
        Decoded d = decode(prefix, enc_h, t);
        const std::size_t v = cfg_.vocab_size;
        const auto& lv = d.logits.values();
        const T* row = &lv[(prefix.size() - 1) * v];
        T mx = row[0];
        for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
        T lse = T(0);
        for (std::size_t c = 0; c < v; ++c) lse += std::exp(row[c] - mx);
        lse = mx + std::log(lse);
        std::vector<T> out(v);
        for (std::size_t c = 0; c < v; ++c) out[c] = row[c] - lse;
        return out;
    }

    std::size_t param_count() const {
        std::size_t total = 0;
        for (const auto& [name, p] : params_) total += p.numel();
        return total;
    }

    // Totals per component; laln/lalt isolate the language-aware additions.
    std::map<std::string, std::size_t> param_count_by_component() const {
        std::map<std::string, std::size_t> out{{"embedding", 0}, {"encoder", 0},
                                               {"decoder", 0},   {"output", 0},
                                               {"laln", 0},      {"lalt", 0}};
        for (const auto& [name, p] : params_) out[component_of(name)] += p.numel();
        return out;
    }

    std::string component_of(const std::string& name) const {
        if (name.rfind("embed.", 0) == 0) return "embedding";
        if (name.rfind("out.", 0) == 0) return "output";
        if (name.rfind("bridge.", 0) == 0) return "lalt";
        if (cfg_.use_laln && name.find(".norm") != std::string::npos) return "laln";
        if (name.rfind("enc.", 0) == 0) return "encoder";
        if (name.rfind("dec.", 0) == 0) return "decoder";
        throw IndexError("parameter '" + name + "' belongs to no component");
    }

    void zero_grads() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

  private:
    // ---- parameter construction ----

    // Every tensor draws from an RNG seeded by (model seed, tensor name), so
    // two models sharing a name share that tensor's initial values exactly,
    // regardless of which other tensors exist around it.
    void add_normal(const std::string& name, Shape shape, std::size_t layer_1based) {
        Tensor<T> t = Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true);
        Rng rng(derive_seed(cfg_.seed, name));
        const double std = cfg_.effective_base_std() / std::sqrt(static_cast<double>(layer_1based));
        fill_normal(t, 0.0, std, rng);
        params_.emplace(name, std::move(t));
    }

    void add_const(const std::string& name, Shape shape, T value) {
        params_.emplace(name, Tensor<T>::filled(std::move(shape), value, true));
    }

    void add_identity(const std::string& name, std::size_t n) {
        Tensor<T> t = Tensor<T>::zeros({n, n}, true);
        fill_identity(t);
        params_.emplace(name, std::move(t));
    }

    void add_norm_site(const std::string& prefix) {
        const std::size_t d = cfg_.d_model;
        if (cfg_.use_laln) {
            for (const auto& lang : cfg_.languages) {
                add_const(prefix + ".g." + lang, {d}, T(1));
                add_const(prefix + ".b." + lang, {d}, T(0));
            }
        } else {
            add_const(prefix + ".g", {d}, T(1));
            add_const(prefix + ".b", {d}, T(0));
        }
    }

    void add_attention(const std::string& prefix, std::size_t layer) {
        const std::size_t d = cfg_.d_model;
        for (const char* w : {"wq", "wk", "wv", "wo"})
            add_normal(prefix + "." + w, {d, d}, layer);
        for (const char* b : {"bq", "bk", "bv", "bo"}) add_const(prefix + "." + b, {d}, T(0));
    }

    void build_params() {
        const std::size_t d = cfg_.d_model;
        add_normal("embed.tok", {cfg_.vocab_size, d}, 1);
        add_normal("out.proj", {d, cfg_.vocab_size}, 1);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            const std::string e = "enc." + std::to_string(l);
            add_attention(e + ".attn", l + 1);
            add_normal(e + ".ffn.w1", {d, cfg_.ffn_dim}, l + 1);
            add_const(e + ".ffn.b1", {cfg_.ffn_dim}, T(0));
            add_normal(e + ".ffn.w2", {cfg_.ffn_dim, d}, l + 1);
            add_const(e + ".ffn.b2", {d}, T(0));
            add_norm_site(e + ".norm1");
            add_norm_site(e + ".norm2");

            const std::string dd = "dec." + std::to_string(l);
            add_attention(dd + ".self", l + 1);
            add_attention(dd + ".cross", l + 1);
            add_normal(dd + ".ffn.w1", {d, cfg_.ffn_dim}, l + 1);
            add_const(dd + ".ffn.b1", {cfg_.ffn_dim}, T(0));
            add_normal(dd + ".ffn.w2", {cfg_.ffn_dim, d}, l + 1);
            add_const(dd + ".ffn.b2", {d}, T(0));
            add_norm_site(dd + ".norm1");
            add_norm_site(dd + ".norm2");
            add_norm_site(dd + ".norm3");
        }
        if (cfg_.use_lalt)
            for (const auto& lang : cfg_.languages) add_identity("bridge." + lang, d);
        pe_ = positional_rows<T>(kMaxPositions, d);
    }

    // ---- forward building blocks ----

    void check_token_ids(const std::vector<int>& ids) const {
        for (int id : ids)
            if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
                throw IndexError("token id " + std::to_string(id) + " outside vocab of size " +
                                 std::to_string(cfg_.vocab_size));
        if (ids.size() > kMaxPositions)
            throw SequenceError("sequence length " + std::to_string(ids.size()) +
                                " exceeds the position table (" +
                                std::to_string(kMaxPositions) + ")");
    }

    Tensor<T> embed(const std::vector<int>& ids, Rng* rng) const {
        Tensor<T> e = embedding_rows(param("embed.tok"), ids);
        e = scale(e, static_cast<T>(std::sqrt(static_cast<double>(cfg_.d_model))));
        e = add(e, rows(pe_, 0, ids.size()));
        return maybe_dropout(e, cfg_.dropout, rng);
    }

    Tensor<T> maybe_dropout(const Tensor<T>& x, double rate, Rng* rng) const {
        if (rng == nullptr || rate <= 0.0) return x;
        return dropout(x, static_cast<T>(rate), *rng);
    }

    Tensor<T> residual(const Tensor<T>& x, const Tensor<T>& sub, Rng* rng) const {
        return add(x, maybe_dropout(sub, cfg_.dropout, rng));
    }

    Tensor<T> norm(const Tensor<T>& x, const std::string& site, const std::string& lang) const {
        const std::string suffix = cfg_.use_laln ? "." + cfg_.languages[lang_index(lang)] : "";
        return layer_norm(x, param(site + ".g" + suffix), param(site + ".b" + suffix));
    }

    Tensor<T> attention(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                        const std::string& prefix, bool causal, Rng* rng) const {
        const std::size_t d = cfg_.d_model;
        const std::size_t dh = d / cfg_.heads;
        Tensor<T> q = add_row(matmul(q_in, param(prefix + ".wq")), param(prefix + ".bq"));
        Tensor<T> k = add_row(matmul(kv_in, param(prefix + ".wk")), param(prefix + ".bk"));
        Tensor<T> v = add_row(matmul(kv_in, param(prefix + ".wv")), param(prefix + ".bv"));
        std::vector<Tensor<T>> heads;
        heads.reserve(cfg_.heads);
        const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        for (std::size_t h = 0; h < cfg_.heads; ++h) {
            Tensor<T> qh = cols(q, h * dh, (h + 1) * dh);
            Tensor<T> kh = cols(k, h * dh, (h + 1) * dh);
            Tensor<T> vh = cols(v, h * dh, (h + 1) * dh);
            Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
            Tensor<T> p = softmax_rows(scores, causal);
            p = maybe_dropout(p, cfg_.attn_dropout, rng);
            heads.push_back(matmul(p, vh));
        }
        Tensor<T> ctx = cfg_.heads == 1 ? heads[0] : concat_cols(heads);
        return add_row(matmul(ctx, param(prefix + ".wo")), param(prefix + ".bo"));
    }

    Tensor<T> ffn(const Tensor<T>& x, const std::string& prefix, Rng* rng) const {
        Tensor<T> h = relu(add_row(matmul(x, param(prefix + ".w1")), param(prefix + ".b1")));
        h = maybe_dropout(h, cfg_.dropout, rng);
        return add_row(matmul(h, param(prefix + ".w2")), param(prefix + ".b2"));
    }

    static constexpr std::size_t kMaxPositions = 512;

    ModelConfig cfg_;
    std::map<std::string, Tensor<T>> params_;
    Tensor<T> pe_;
};

}  // namespace zsnmt
