// Inference-time decoding: greedy, length-normalized beam search, batched
// greedy (the backtranslation kernel), and two-hop pivot translation.
// The search kernels are written against a step function
//   prefix (BOS-led token ids) -> log-probabilities over the vocabulary
// so tests can drive them with hand-rigged distributions.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "zsnmt/model.hpp"
#include "zsnmt/tensor.hpp"
#include "zsnmt/util.hpp"
#include "zsnmt/vocab.hpp"

namespace zsnmt {

struct BeamConfig {
    std::size_t beam_size = 4;
    double length_penalty = 0.6;  // alpha in ((5+n)/6)^alpha
    std::size_t max_len = 64;     // cap on emitted tokens
    std::size_t min_len = 0;      // EOS masked before this many tokens

    void validate() const {
        if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
        if (length_penalty < 0.0) throw ConfigError("length penalty must be >= 0");
        if (max_len < 1) throw ConfigError("max_len must be >= 1");
    }
};

inline double length_penalty_factor(std::size_t n, double alpha) {
    return std::pow((5.0 + static_cast<double>(n)) / 6.0, alpha);
}

using StepFn = std::function<std::vector<double>(const std::vector<int>&)>;

// Greedy argmax decoding; ties resolve to the lowest token id. Returns the
// emitted tokens without BOS/EOS. EOS is masked until min_len tokens exist.
inline std::vector<int> greedy_decode_fn(const StepFn& step, std::size_t max_len,
                                         std::size_t min_len = 0) {
    std::vector<int> prefix = {kBosId};
    std::vector<int> out;
    while (out.size() < max_len) {
        std::vector<double> lp = step(prefix);
        if (lp.empty()) throw DimensionError("decode step returned empty distribution");
        // Scan in id order with strict improvement => lowest id wins ties.
        std::size_t best = 0;
        bool have = false;
        for (std::size_t c = 0; c < lp.size(); ++c) {
            if (out.size() < min_len && c == static_cast<std::size_t>(kEosId)) continue;
            if (!have || lp[c] > lp[best]) {
                best = c;
                have = true;
            }
        }
        if (static_cast<int>(best) == kEosId) break;
        out.push_back(static_cast<int>(best));
        prefix.push_back(static_cast<int>(best));
    }
    return out;
}

namespace detail {

struct Hypothesis {
    std::vector<int> tokens;  // emitted tokens, no BOS/EOS
    double logprob = 0.0;

    double normalized(double alpha) const {
        return logprob / length_penalty_factor(tokens.size(), alpha);
    }
};

// Deterministic ordering: higher value first, ties toward the
// lexicographically smaller (lower-id) token sequence.
inline bool better(double va, const std::vector<int>& ta, double vb, const std::vector<int>& tb) {
    if (va != vb) return va > vb;
    return ta < tb;
}

}  // namespace detail

// Length-normalized beam search. Each round expands every live hypothesis
// over the full vocabulary and ranks candidates by accumulated logprob
// (ties toward the lower-id token sequence). EOS candidates ranked within
// the top beam_size retire to the finished pool; the top beam_size non-EOS
// candidates become the next live set. The search stops once beam_size
// hypotheses have finished or the cap is reached; live hypotheses at the
// cap fill any remaining finished slots as-is. Finished hypotheses compete
// on logprob / lp(n). With beam_size = 1 this reduces exactly to greedy
// decoding: EOS finishes only when it is the argmax, which also ends the
// search.
inline std::vector<int> beam_search_fn(const StepFn& step, const BeamConfig& cfg) {
    cfg.validate();
    using detail::Hypothesis;
    struct Cand {
        std::vector<int> key;  // parent tokens + candidate token (EOS included)
        double raw = 0.0;
        bool eos = false;
    };
    std::vector<Hypothesis> live = {Hypothesis{}};
    std::vector<Hypothesis> finished;

    for (std::size_t len = 0; len < cfg.max_len && !live.empty(); ++len) {
        if (finished.size() >= cfg.beam_size) break;
        std::vector<Cand> cands;
        for (const auto& hyp : live) {
            std::vector<int> prefix;
            prefix.reserve(hyp.tokens.size() + 1);
            prefix.push_back(kBosId);
            prefix.insert(prefix.end(), hyp.tokens.begin(), hyp.tokens.end());
            std::vector<double> lp = step(prefix);
            if (lp.empty()) throw DimensionError("decode step returned empty distribution");
            for (std::size_t c = 0; c < lp.size(); ++c) {
                if (len < cfg.min_len && c == static_cast<std::size_t>(kEosId)) continue;
                double raw = hyp.logprob + lp[c];
                // Tokens with no probability mass never enter the beam.
                if (std::isinf(raw) && raw < 0.0) continue;
                Cand cd;
                cd.key = hyp.tokens;
                cd.key.push_back(static_cast<int>(c));
                cd.raw = raw;
                cd.eos = static_cast<int>(c) == kEosId;
                cands.push_back(std::move(cd));
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            return detail::better(a.raw, a.key, b.raw, b.key);
        });
        std::vector<Hypothesis> next;
        for (std::size_t r = 0; r < cands.size(); ++r) {
            Cand& cd = cands[r];
            if (cd.eos) {
                if (r < cfg.beam_size) {
                    Hypothesis h;
                    h.tokens = std::move(cd.key);
                    h.tokens.pop_back();
                    h.logprob = cd.raw;
                    finished.push_back(std::move(h));
                }
            } else if (next.size() < cfg.beam_size) {
                Hypothesis h;
                h.tokens = std::move(cd.key);
                h.logprob = cd.raw;
                next.push_back(std::move(h));
            }
            if (next.size() >= cfg.beam_size && r + 1 >= cfg.beam_size) break;
        }
        live = std::move(next);
    }
    // Live hypotheses at the cap fill remaining slots, best raw score first.
    for (auto& hyp : live) {
        if (finished.size() >= cfg.beam_size) break;
        finished.push_back(std::move(hyp));
    }
    if (finished.empty()) return {};

    const Hypothesis* best = &finished[0];
    for (const auto& hyp : finished)
        if (&hyp != best &&
            detail::better(hyp.normalized(cfg.length_penalty), hyp.tokens,
                           best->normalized(cfg.length_penalty), best->tokens))
            best = &hyp;
    return best->tokens;
}

// ---- model adapters ----

template <typename T>
StepFn model_step_fn(const TransformerModel<T>& model, const Tensor<T>& enc_h,
                     const std::string& tgt_lang) {
    return [&model, enc_h, tgt_lang](const std::vector<int>& prefix) {
        std::vector<T> lp = model.next_logprobs(enc_h, prefix, tgt_lang);
        return std::vector<double>(lp.begin(), lp.end());
    };
}

template <typename T>
std::vector<int> greedy_translate(const TransformerModel<T>& model, const std::vector<int>& src,
                                  const std::string& tgt_lang, std::size_t max_len = 64,
                                  std::size_t min_len = 0) {
    NoGradGuard ng;
    Tensor<T> h = model.encode(src, tgt_lang);
    return greedy_decode_fn(model_step_fn(model, h, tgt_lang), max_len, min_len);
}

template <typename T>
std::vector<int> beam_translate(const TransformerModel<T>& model, const std::vector<int>& src,
                                const std::string& tgt_lang, const BeamConfig& cfg) {
    NoGradGuard ng;
    Tensor<T> h = model.encode(src, tgt_lang);
    return beam_search_fn(model_step_fn(model, h, tgt_lang), cfg);
}

// Greedy decoding of a whole batch in lockstep rounds: every live sequence
// advances one token per round until it emits EOS or hits its cap, exactly
// matching per-sentence greedy token for token. `caps`, when given, holds a
// per-sentence length cap (still bounded by max_len).
template <typename T>
std::vector<std::vector<int>> greedy_translate_batch(
    const TransformerModel<T>& model,
    const std::vector<std::pair<std::vector<int>, std::string>>& inputs,  // (src, tgt_lang)
    std::size_t max_len = 64, std::size_t min_len = 0,
    const std::vector<std::size_t>* caps = nullptr) {
    NoGradGuard ng;
    const std::size_t n = inputs.size();
    if (caps && caps->size() != n)
        throw DimensionError("greedy_translate_batch: caps size mismatch");
    std::vector<Tensor<T>> enc(n);
    for (std::size_t k = 0; k < n; ++k)
        enc[k] = model.encode(inputs[k].first, inputs[k].second);

    std::vector<std::vector<int>> out(n);
    std::vector<std::vector<int>> prefix(n, std::vector<int>{kBosId});
    std::vector<bool> live(n, true);
    for (std::size_t round = 0; round < max_len; ++round) {
        bool any = false;
        for (std::size_t k = 0; k < n; ++k) {
            if (live[k] && caps && out[k].size() >= std::min((*caps)[k], max_len))
                live[k] = false;
            if (!live[k]) continue;
            any = true;
            std::vector<T> lp = model.next_logprobs(enc[k], prefix[k], inputs[k].second);
            std::size_t best = 0;
            bool have = false;
            for (std::size_t c = 0; c < lp.size(); ++c) {
                if (out[k].size() < min_len && c == static_cast<std::size_t>(kEosId)) continue;
                if (!have || lp[c] > lp[best]) {
                    best = c;
                    have = true;
                }
            }
            if (static_cast<int>(best) == kEosId) {
                live[k] = false;
            } else {
                out[k].push_back(static_cast<int>(best));
                prefix[k].push_back(static_cast<int>(best));
            }
        }
        if (!any) break;
    }
    return out;
}

// Two-hop pivot translation src -> pivot -> tgt with beam search on both
// hops. Pivoting from or into the pivot language itself is ill-formed.
template <typename T>
std::vector<int> pivot_translate(const TransformerModel<T>& src_to_pivot,
                                 const TransformerModel<T>& pivot_to_tgt,
                                 const std::vector<int>& src, const std::string& src_lang,
                                 const std::string& tgt_lang, const std::string& pivot_lang,
                                 const BeamConfig& cfg) {
    if (src_lang == pivot_lang || tgt_lang == pivot_lang)
        throw UsageError("pivot translation requires src and tgt distinct from the pivot "
                         "language '" + pivot_lang + "'");
    if (src.empty()) return {};
    std::vector<int> mid = beam_translate(src_to_pivot, src, pivot_lang, cfg);
    if (mid.empty()) return {};
    return beam_translate(pivot_to_tgt, mid, tgt_lang, cfg);
}

template <typename T>
std::vector<int> pivot_translate(const TransformerModel<T>& model, const std::vector<int>& src,
                                 const std::string& src_lang, const std::string& tgt_lang,
                                 const std::string& pivot_lang, const BeamConfig& cfg) {
    return pivot_translate(model, model, src, src_lang, tgt_lang, pivot_lang, cfg);
}

}  // namespace zsnmt
