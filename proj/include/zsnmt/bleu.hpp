// Corpus-level BLEU (n-grams 1-4, exponential smoothing for zero counts,
// brevity penalty) over single references, plus the two tokenizers used by
// the evaluation suite: plain whitespace for synthetic token streams and a
// 13a-like punctuation splitter for real text.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "zsnmt/util.hpp"

namespace zsnmt {

inline std::vector<std::string> tokenize_ws(const std::string& s) { return split_ws(s); }

// Pads ASCII punctuation with spaces, then splits on whitespace. Non-ASCII
// bytes pass through untouched; exact parity with any reference tokenizer
// is not attempted.
inline std::vector<std::string> tokenize_13a(const std::string& s) {
    std::string padded;
    padded.reserve(s.size() * 2);
    for (unsigned char c : s) {
        if (c < 0x80 && std::ispunct(c)) {
            padded += ' ';
            padded += static_cast<char>(c);
            padded += ' ';
        } else {
            padded += static_cast<char>(c);
        }
    }
    return split_ws(padded);
}

constexpr std::size_t kBleuOrder = 4;

// Corpus-pooled sufficient statistics: clipped n-gram matches and totals
// per order, plus corpus lengths for the brevity penalty.
struct BleuStats {
    std::array<std::uint64_t, kBleuOrder> matches{};
    std::array<std::uint64_t, kBleuOrder> totals{};
    std::uint64_t hyp_len = 0;
    std::uint64_t ref_len = 0;

    BleuStats& operator+=(const BleuStats& o) {
        for (std::size_t n = 0; n < kBleuOrder; ++n) {
            matches[n] += o.matches[n];
            totals[n] += o.totals[n];
        }
        hyp_len += o.hyp_len;
        ref_len += o.ref_len;
        return *this;
    }
};

namespace detail {

// n-grams as joined strings; \x1f cannot occur inside whitespace-split tokens.
inline std::map<std::string, std::uint64_t> ngram_counts(const std::vector<std::string>& toks,
                                                         std::size_t n) {
    std::map<std::string, std::uint64_t> counts;
    if (toks.size() < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key = toks[i];
        for (std::size_t j = 1; j < n; ++j) {
            key += '\x1f';
            key += toks[i + j];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace detail

inline BleuStats bleu_sentence_stats(const std::vector<std::string>& hyp,
                                     const std::vector<std::string>& ref) {
    BleuStats st;
    st.hyp_len = hyp.size();
    st.ref_len = ref.size();
    for (std::size_t n = 1; n <= kBleuOrder; ++n) {
        if (hyp.size() < n) break;
        st.totals[n - 1] = hyp.size() - n + 1;
        const auto hyp_counts = detail::ngram_counts(hyp, n);
        const auto ref_counts = detail::ngram_counts(ref, n);
        std::uint64_t clipped = 0;
        for (const auto& [gram, c] : hyp_counts) {
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) clipped += std::min(c, it->second);
        }
        st.matches[n - 1] = clipped;
    }
    return st;
}

// BLEU in [0,100] from pooled statistics. Orders with no hypothesis n-grams
// are dropped from the geometric mean (effective order); orders with n-grams
// but zero matches are exponentially smoothed: the smoothing denominator
// doubles for each such order and the precision becomes 1/(smooth * total).
inline double bleu_from_stats(const BleuStats& st) {
    if (st.hyp_len == 0) return 0.0;
    double log_sum = 0.0;
    std::size_t orders = 0;
    double smooth = 1.0;
    for (std::size_t n = 0; n < kBleuOrder; ++n) {
        if (st.totals[n] == 0) continue;
        double p;
        if (st.matches[n] == 0) {
            smooth *= 2.0;
            p = 1.0 / (smooth * static_cast<double>(st.totals[n]));
        } else {
            p = static_cast<double>(st.matches[n]) / static_cast<double>(st.totals[n]);
        }
        log_sum += std::log(p);
        ++orders;
    }
    if (orders == 0) return 0.0;
    double bp = 1.0;
    if (st.hyp_len < st.ref_len)
        bp = std::exp(1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.hyp_len));
    return 100.0 * bp * std::exp(log_sum / static_cast<double>(orders));
}

inline BleuStats bleu_corpus_stats(const std::vector<std::vector<std::string>>& hyps,
                                   const std::vector<std::vector<std::string>>& refs) {
    if (hyps.size() != refs.size())
        throw EvalError("bleu: hypothesis/reference count mismatch (" +
                        std::to_string(hyps.size()) + " vs " + std::to_string(refs.size()) + ")");
    if (hyps.empty()) throw EvalError("bleu: empty corpus");
    BleuStats st;
    for (std::size_t i = 0; i < hyps.size(); ++i) st += bleu_sentence_stats(hyps[i], refs[i]);
    return st;
}

inline double bleu_corpus_tokens(const std::vector<std::vector<std::string>>& hyps,
                                 const std::vector<std::vector<std::string>>& refs) {
    return bleu_from_stats(bleu_corpus_stats(hyps, refs));
}

inline double bleu_corpus(const std::vector<std::string>& hyps,
                          const std::vector<std::string>& refs, bool use_13a = false) {
    if (hyps.size() != refs.size())
        throw EvalError("bleu: hypothesis/reference count mismatch (" +
                        std::to_string(hyps.size()) + " vs " + std::to_string(refs.size()) + ")");
    std::vector<std::vector<std::string>> h(hyps.size()), r(refs.size());
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        h[i] = use_13a ? tokenize_13a(hyps[i]) : tokenize_ws(hyps[i]);
        r[i] = use_13a ? tokenize_13a(refs[i]) : tokenize_ws(refs[i]);
    }
    return bleu_corpus_tokens(h, r);
}

}  // namespace zsnmt
