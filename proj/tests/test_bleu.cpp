#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "zsnmt/bleu.hpp"
#include "zsnmt/util.hpp"

namespace {

using Toks = std::vector<std::string>;

// Independent brute-force reference: for every hypothesis n-gram occurrence,
// greedily consume one unused identical reference occurrence (equivalent to
// clipped counts, computed a different way), then combine precisions with an
// explicit product and n-th root.
double oracle_bleu(const std::vector<Toks>& hyps, const std::vector<Toks>& refs) {
    std::size_t hyp_len = 0, ref_len = 0;
    std::size_t matches[4] = {0, 0, 0, 0};
    std::size_t totals[4] = {0, 0, 0, 0};
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const Toks& h = hyps[i];
        const Toks& r = refs[i];
        hyp_len += h.size();
        ref_len += r.size();
        for (std::size_t n = 1; n <= 4; ++n) {
            if (h.size() < n) continue;
            std::vector<bool> used(r.size(), false);
            for (std::size_t a = 0; a + n <= h.size(); ++a) {
                ++totals[n - 1];
                for (std::size_t b = 0; r.size() >= n && b + n <= r.size(); ++b) {
                    if (used[b]) continue;
                    bool same = true;
                    for (std::size_t k = 0; k < n; ++k)
                        if (h[a + k] != r[b + k]) {
                            same = false;
                            break;
                        }
                    if (same) {
                        used[b] = true;
                        ++matches[n - 1];
                        break;
                    }
                }
            }
        }
    }
    if (hyp_len == 0) return 0.0;
    double product = 1.0;
    int orders = 0;
    double smooth = 1.0;
    for (std::size_t n = 0; n < 4; ++n) {
        if (totals[n] == 0) continue;
        ++orders;
        if (matches[n] == 0) {
            smooth *= 2.0;
            product *= 1.0 / (smooth * static_cast<double>(totals[n]));
        } else {
            product *= static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
        }
    }
    if (orders == 0) return 0.0;
    double bp = hyp_len < ref_len
                    ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                    : 1.0;
    return 100.0 * bp * std::pow(product, 1.0 / orders);
}

Toks random_sentence(zsnmt::Rng& rng, std::size_t max_len, bool allow_empty = false) {
    static const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f"};
    std::size_t lo = allow_empty ? 0 : 1;
    std::size_t len = lo + rng.uniform_index(max_len - lo + 1);
    Toks out;
    for (std::size_t i = 0; i < len; ++i) out.push_back(vocab[rng.uniform_index(vocab.size())]);
    return out;
}

}  // namespace

TEST(Bleu, IdentityScoresOneHundred) {
    std::vector<std::string> corpus = {"a b c", "d e f a", "a", "b c b c b c"};
    EXPECT_DOUBLE_EQ(zsnmt::bleu_corpus(corpus, corpus), 100.0);
    EXPECT_DOUBLE_EQ(zsnmt::bleu_corpus({"x"}, {"x"}), 100.0);
}

TEST(Bleu, BrevityPenaltyWorkedExample) {
    // All modified precisions are 1; only the brevity penalty bites.
    const double bleu = zsnmt::bleu_corpus({"a b c d"}, {"a b c d e"});
    EXPECT_NEAR(bleu, 100.0 * std::exp(1.0 - 5.0 / 4.0), 1e-4);
    EXPECT_NEAR(bleu, 77.8800783, 1e-4);
    // Longer hypotheses pay no brevity penalty.
    const double longer = zsnmt::bleu_corpus({"a b c d e"}, {"a b c d"});
    const auto st = zsnmt::bleu_corpus_stats({{"a", "b", "c", "d", "e"}}, {{"a", "b", "c", "d"}});
    EXPECT_EQ(st.hyp_len, 5u);
    EXPECT_GT(longer, 0.0);
}

TEST(Bleu, ExponentialSmoothingHandComputed) {
    // hyp "a b c d" vs ref "a b x d": p1 = 3/4, p2 = 1/3, p3 and p4 have
    // zero matches and smooth to 1/(2*2) and 1/(4*1). Lengths equal: BP = 1.
    const double bleu = zsnmt::bleu_corpus({"a b c d"}, {"a b x d"});
    const double expect =
        100.0 * std::pow((3.0 / 4.0) * (1.0 / 3.0) * (1.0 / 4.0) * (1.0 / 4.0), 0.25);
    EXPECT_NEAR(bleu, expect, 1e-9);
}

TEST(Bleu, MatchesBruteForceOracleOnRandomCorpora) {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        zsnmt::Rng rng(zsnmt::derive_seed(seed, "bleu-corpus"));
        const std::size_t n = 1 + rng.uniform_index(8);
        std::vector<Toks> refs, hyps;
        for (std::size_t i = 0; i < n; ++i) {
            Toks ref = random_sentence(rng, 10);
            Toks hyp;
            const double mode = rng.uniform();
            if (mode < 0.25) {
                hyp = ref;  // perfect sentence
            } else if (mode < 0.6) {
                hyp = ref;  // noisy copy
                for (auto& t : hyp)
                    if (rng.uniform() < 0.3) t = random_sentence(rng, 1)[0];
            } else {
                hyp = random_sentence(rng, 10, /*allow_empty=*/seed % 7 == 0);
            }
            refs.push_back(std::move(ref));
            hyps.push_back(std::move(hyp));
        }
        const double got = zsnmt::bleu_corpus_tokens(hyps, refs);
        const double want = oracle_bleu(hyps, refs);
        EXPECT_NEAR(got, want, 1e-6) << "seed " << seed;
        EXPECT_GE(got, 0.0);
        EXPECT_LE(got, 100.0 + 1e-9);
    }
}

TEST(Bleu, CorpusLevelPermutationInvariance) {
    std::vector<std::string> hyps = {"a b c", "d e", "f a b c d", "b"};
    std::vector<std::string> refs = {"a b d", "d e f", "f a b d d", "c"};
    const double base = zsnmt::bleu_corpus(hyps, refs);
    std::vector<std::size_t> perm = {2, 0, 3, 1};
    std::vector<std::string> h2, r2;
    for (std::size_t i : perm) {
        h2.push_back(hyps[i]);
        r2.push_back(refs[i]);
    }
    EXPECT_DOUBLE_EQ(zsnmt::bleu_corpus(h2, r2), base);
}

TEST(Bleu, PerfectPairNeverLowersMatchNumerators) {
    std::vector<Toks> hyps = {{"a", "b"}, {"c", "c", "d"}};
    std::vector<Toks> refs = {{"a", "x"}, {"c", "d", "d"}};
    const auto before = zsnmt::bleu_corpus_stats(hyps, refs);
    hyps.push_back({"e", "f", "e", "f"});
    refs.push_back({"e", "f", "e", "f"});
    const auto after = zsnmt::bleu_corpus_stats(hyps, refs);
    for (std::size_t n = 0; n < zsnmt::kBleuOrder; ++n) {
        EXPECT_GE(after.matches[n], before.matches[n]);
        EXPECT_GE(after.totals[n], before.totals[n]);
    }
}

TEST(Bleu, EmptyAndMismatchedCorporaRejected) {
    EXPECT_THROW(zsnmt::bleu_corpus({}, {}), zsnmt::EvalError);
    EXPECT_THROW(zsnmt::bleu_corpus({"a"}, {"a", "b"}), zsnmt::EvalError);
    // Empty hypothesis strings are legal; they simply score zero.
    EXPECT_DOUBLE_EQ(zsnmt::bleu_corpus({""}, {"a b"}), 0.0);
}

TEST(Bleu, Tokenizers) {
    EXPECT_EQ(zsnmt::tokenize_ws("  a  bb c "), (Toks{"a", "bb", "c"}));
    EXPECT_EQ(zsnmt::tokenize_13a("Hello, world!"), (Toks{"Hello", ",", "world", "!"}));
    EXPECT_EQ(zsnmt::tokenize_13a("x1 y2"), (Toks{"x1", "y2"}));
    EXPECT_EQ(zsnmt::tokenize_13a("a-b"), (Toks{"a", "-", "b"}));
    // The 13a-like path is selectable from the string interface.
    EXPECT_DOUBLE_EQ(zsnmt::bleu_corpus({"Hi, there!"}, {"Hi, there!"}, true), 100.0);
}
