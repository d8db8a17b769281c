#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "zsnmt/eval.hpp"
#include "zsnmt/langid.hpp"
#include "zsnmt/model.hpp"
#include "zsnmt/util.hpp"
#include "zsnmt/vocab.hpp"

using zsnmt::CharNgramDetector;
using zsnmt::Detection;
using zsnmt::DirectionResult;
using zsnmt::EvalDirection;
using zsnmt::EvalOptions;
using zsnmt::EvalReport;
using zsnmt::ModelConfig;
using zsnmt::Rng;
using zsnmt::TransformerModel;
using zsnmt::Vocab;
using zsnmt::VocabDetector;
using zsnmt::pearson;
using zsnmt::win_ratio;

namespace {

// Textbook computational formula, deliberately a different arrangement from
// the centered-sums implementation under test.
double pearson_oracle(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    double sx = 0.0, sy = 0.0, sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxy += xs[i] * ys[i];
        sxx += xs[i] * xs[i];
        syy += ys[i] * ys[i];
    }
    return (n * sxy - sx * sy) /
           std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

EvalReport report_from(const std::vector<DirectionResult>& dirs) {
    EvalReport r;
    r.directions = dirs;
    r.aggregate();
    return r;
}

}  // namespace

TEST(Pearson, MatchesTextbookFormulaOnRandomData) {
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> xs, ys;
        for (int i = 0; i < 20; ++i) {
            xs.push_back(10.0 * rng.uniform() - 5.0);
            ys.push_back(3.0 * xs.back() + 40.0 * rng.uniform());
        }
        EXPECT_NEAR(pearson(xs, ys), pearson_oracle(xs, ys), 1e-10);
    }
}

TEST(Pearson, ExactOnPerfectlyLinearData) {
    std::vector<double> xs, up, down;
    for (int i = 0; i < 7; ++i) {
        xs.push_back(static_cast<double>(i));
        up.push_back(2.0 * i + 1.0);
        down.push_back(-3.0 * i + 7.0);
    }
    EXPECT_NEAR(pearson(xs, up), 1.0, 1e-12);
    EXPECT_NEAR(pearson(xs, down), -1.0, 1e-12);
}

TEST(Pearson, RejectsDegenerateInputs) {
    EXPECT_THROW(pearson({1.0, 2.0}, {1.0}), zsnmt::EvalError);
    EXPECT_THROW(pearson({1.0}, {2.0}), zsnmt::EvalError);
    EXPECT_THROW(pearson({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}), zsnmt::EvalError);
    EXPECT_THROW(pearson({1.0, 2.0, 3.0}, {5.0, 5.0, 5.0}), zsnmt::EvalError);
}

TEST(WinRatio, CountsStrictBleuWins) {
    auto dir = [](const std::string& s, const std::string& t, double bleu) {
        DirectionResult d;
        d.src = s;
        d.tgt = t;
        d.bleu = bleu;
        return d;
    };
    const EvalReport base = report_from({dir("de", "en", 20.0), dir("en", "de", 18.0),
                                         dir("fr", "de", 9.0), dir("de", "fr", 11.0)});
    EXPECT_DOUBLE_EQ(win_ratio(base, base), 0.0);  // ties are not wins

    EvalReport better = base;
    better.directions[0].bleu += 1.0;
    better.directions[1].bleu += 0.1;
    better.directions[3].bleu += 5.0;
    EXPECT_DOUBLE_EQ(win_ratio(better, base), 75.0);
    EXPECT_DOUBLE_EQ(win_ratio(base, better), 0.0);

    EvalReport renamed = base;
    renamed.directions[2].tgt = "it";
    EXPECT_THROW(win_ratio(renamed, base), zsnmt::EvalError);
    EvalReport shorter = base;
    shorter.directions.pop_back();
    EXPECT_THROW(win_ratio(shorter, base), zsnmt::EvalError);
}

// A mock 94-direction comparison, checked against a hand enumeration.
TEST(WinRatio, LargeDirectionSetMatchesManualCount) {
    Rng rng(6);
    std::vector<DirectionResult> as, bs;
    std::size_t expected_wins = 0;
    for (int i = 0; i < 94; ++i) {
        DirectionResult a, b;
        a.src = b.src = "s" + std::to_string(i);
        a.tgt = b.tgt = "t" + std::to_string(i);
        b.bleu = 30.0 * rng.uniform();
        const double delta = 4.0 * rng.uniform() - 2.0;
        a.bleu = b.bleu + delta;
        if (delta > 0.0) ++expected_wins;
        as.push_back(a);
        bs.push_back(b);
    }
    EvalReport ra, rb;
    ra.directions = as;
    rb.directions = bs;
    EXPECT_DOUBLE_EQ(win_ratio(ra, rb), 100.0 * static_cast<double>(expected_wins) / 94.0);
}

TEST(Detectors, VocabMajorityVote) {
    VocabDetector det;
    det.add_corpus("de", {"der hund", "die katze"});
    det.add_corpus("en", {"the dog", "the cat"});

    const Detection pure = det.detect("the dog the cat");
    EXPECT_EQ(pure.lang, "en");
    EXPECT_DOUBLE_EQ(pure.confidence, 1.0);

    const Detection mixed = det.detect("the dog der");
    EXPECT_EQ(mixed.lang, "en");
    EXPECT_NEAR(mixed.confidence, 2.0 / 3.0, 1e-12);

    const Detection diluted = det.detect("the dog zzz qqq");
    EXPECT_EQ(diluted.lang, "en");
    EXPECT_NEAR(diluted.confidence, 0.5, 1e-12);

    const Detection tie = det.detect("the der");
    EXPECT_EQ(tie.lang, "de");  // lexicographically smallest on exact ties

    EXPECT_TRUE(det.detect("zzz qqq").undetermined());
    EXPECT_THROW(det.detect("   "), zsnmt::SequenceError);
    EXPECT_THROW(det.add_token("", "tok"), zsnmt::LanguageError);

    const std::vector<std::string> langs{"de", "en"};
    EXPECT_EQ(det.languages(), langs);
}

TEST(Detectors, CharNgramProfilesSeparateScripts) {
    CharNgramDetector det;
    det.add_corpus("aa", {"abba baab abab", "babb aab"});
    det.add_corpus("xx", {"xyyx yxxy xyxy", "yxxy xyy"});
    EXPECT_EQ(det.detect("abab ba").lang, "aa");
    EXPECT_EQ(det.detect("xyxy yx").lang, "xx");
    EXPECT_GT(det.detect("abab").confidence, 0.5);
    EXPECT_TRUE(det.detect("qqq").undetermined());
    EXPECT_THROW(det.detect(" "), zsnmt::SequenceError);
    EXPECT_THROW(CharNgramDetector{0}, zsnmt::ConfigError);
}

TEST(Detectors, LanguageAccuracyIsAManualFraction) {
    VocabDetector det;
    det.add_corpus("de", {"der hund katze"});
    det.add_corpus("en", {"the dog cat"});

    std::vector<std::string> hyps;
    for (int i = 0; i < 13; ++i) hyps.push_back("the dog");     // detected en
    for (int i = 0; i < 4; ++i) hyps.push_back("der hund");     // detected de
    for (int i = 0; i < 2; ++i) hyps.push_back("zzz");          // undetermined
    hyps.push_back("");                                         // empty: off-target
    ASSERT_EQ(hyps.size(), 20u);
    EXPECT_DOUBLE_EQ(zsnmt::language_accuracy(det, hyps, "en"), 13.0 / 20.0);
    EXPECT_DOUBLE_EQ(zsnmt::language_accuracy(det, hyps, "de"), 4.0 / 20.0);

    // The off-target copy archetype: every hypothesis in the source language.
    const std::vector<std::string> copies(5, "the dog cat");
    EXPECT_DOUBLE_EQ(zsnmt::language_accuracy(det, copies, "de"), 0.0);
    EXPECT_THROW(zsnmt::language_accuracy(det, {}, "en"), zsnmt::EvalError);
}

TEST(EvalReport, AggregatesSplitSupervisedFromZeroShot) {
    auto dir = [](double bleu, double acc, bool zs) {
        static int i = 0;
        DirectionResult d;
        d.src = "s" + std::to_string(i);
        d.tgt = "t" + std::to_string(i);
        ++i;
        d.bleu = bleu;
        d.language_accuracy = acc;
        d.n_sentences = 32;
        d.zero_shot = zs;
        return d;
    };
    const EvalReport r = report_from({dir(40.0, 1.0, false), dir(30.0, 0.9, false),
                                      dir(12.0, 0.5, true), dir(8.0, 0.3, true),
                                      dir(4.0, 0.1, true)});
    EXPECT_NEAR(r.bleu_all, (40.0 + 30.0 + 12.0 + 8.0 + 4.0) / 5.0, 1e-12);
    EXPECT_NEAR(r.bleu_zero, (12.0 + 8.0 + 4.0) / 3.0, 1e-12);
    EXPECT_NEAR(r.acc_zero, (0.5 + 0.3 + 0.1) / 3.0, 1e-12);
    ASSERT_TRUE(r.has_pearson);
    EXPECT_NEAR(r.pearson_acc_bleu, pearson({0.5, 0.3, 0.1}, {12.0, 8.0, 4.0}), 1e-12);
    EXPECT_NEAR(r.pearson_acc_bleu, 1.0, 1e-9);  // both perfectly ordered

    const zsnmt::kv::Map m = r.to_kv();
    EXPECT_EQ(zsnmt::kv::get_or(m, "eval.directions", ""), "5");
    EXPECT_FALSE(zsnmt::kv::get_or(m, "eval.bleu_zero", "").empty());
    EXPECT_EQ(zsnmt::kv::get_or(m, "dir.s2-t2.zero_shot", ""), "1");
    EXPECT_EQ(zsnmt::kv::get_or(m, "dir.s0-t0.zero_shot", ""), "0");

    const std::string table = r.table();
    EXPECT_NE(table.find("s0-t0"), std::string::npos);
    EXPECT_NE(table.find("BLEU_zero"), std::string::npos);
    EXPECT_NE(table.find("pearson"), std::string::npos);

    // Constant accuracy leaves the correlation undefined, not fabricated.
    const EvalReport flat =
        report_from({dir(12.0, 0.5, true), dir(8.0, 0.5, true), dir(4.0, 0.5, true)});
    EXPECT_FALSE(flat.has_pearson);
    EXPECT_EQ(flat.table().find("pearson"), std::string::npos);
}

// End-to-end over a real (untrained) model: structure, ranges, and the
// greedy / beam-1 agreement surfacing at the report level.
TEST(EvalSuite, EvaluateDirectionsProducesCoherentReport) {
    const std::vector<std::string> lines{"w1 w2 w3", "aw1 aw2 aw3", "bw1 bw2 bw3",
                                         "w4 aw4 bw4"};
    Vocab vocab = Vocab::build(lines, {"aa", "bb", "en"});
    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.d_model = 16;
    cfg.ffn_dim = 32;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.languages = {"aa", "bb", "en"};
    cfg.use_laln = true;
    cfg.use_lalt = true;
    cfg.seed = 3;
    TransformerModel<double> model(cfg);

    VocabDetector det;
    det.add_corpus("en", {"w1 w2 w3 w4"});
    det.add_corpus("aa", {"aw1 aw2 aw3 aw4"});
    det.add_corpus("bb", {"bw1 bw2 bw3 bw4"});

    EvalDirection sup;
    sup.src_lang = "en";
    sup.tgt_lang = "aa";
    sup.src_text = {"w1 w2", "w3 w4", "w2 w2 w3"};
    sup.ref_text = {"aw1 aw2", "aw3 aw4", "aw2 aw2 aw3"};
    EvalDirection zs = sup;
    zs.src_lang = "aa";
    zs.tgt_lang = "bb";
    zs.src_text = {"aw1 aw2", "aw3 aw4", "aw2 aw2 aw3"};
    zs.ref_text = {"bw1 bw2", "bw3 bw4", "bw2 bw2 bw3"};
    zs.zero_shot = true;

    EvalOptions greedy;
    greedy.greedy = true;
    greedy.beam.max_len = 12;
    const EvalReport rg = zsnmt::evaluate_directions(model, vocab, {sup, zs}, det, greedy);
    ASSERT_EQ(rg.directions.size(), 2u);
    for (const auto& d : rg.directions) {
        EXPECT_EQ(d.n_sentences, 3u);
        EXPECT_GE(d.bleu, 0.0);
        EXPECT_LE(d.bleu, 100.0);
        EXPECT_GE(d.language_accuracy, 0.0);
        EXPECT_LE(d.language_accuracy, 1.0);
    }
    EXPECT_FALSE(rg.directions[0].zero_shot);
    EXPECT_TRUE(rg.directions[1].zero_shot);

    EvalOptions beam1 = greedy;
    beam1.greedy = false;
    beam1.beam.beam_size = 1;
    const EvalReport r1 = zsnmt::evaluate_directions(model, vocab, {sup, zs}, det, beam1);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_DOUBLE_EQ(r1.directions[i].bleu, rg.directions[i].bleu);
        EXPECT_DOUBLE_EQ(r1.directions[i].language_accuracy,
                         rg.directions[i].language_accuracy);
    }

    // Pivoting reroutes only the zero-shot direction; it must still produce
    // a structurally sound result.
    EvalOptions piv = greedy;
    piv.pivot = true;
    const EvalReport rp = zsnmt::evaluate_directions(model, vocab, {sup, zs}, det, piv);
    EXPECT_DOUBLE_EQ(rp.directions[0].bleu, rg.directions[0].bleu);  // supervised untouched
    EXPECT_EQ(rp.directions[1].n_sentences, 3u);

    EvalDirection broken = sup;
    broken.ref_text.pop_back();
    EXPECT_THROW(zsnmt::evaluate_direction(model, vocab, broken, det, greedy),
                 zsnmt::EvalError);
    EvalDirection hollow = sup;
    hollow.src_text.clear();
    hollow.ref_text.clear();
    EXPECT_THROW(zsnmt::evaluate_direction(model, vocab, hollow, det, greedy),
                 zsnmt::EvalError);
}

TEST(Corpus, InstanceEncodingGuardsAndDirections) {
    const Vocab vocab = Vocab::build({"w1 w2 aw1 aw2"}, {"aa", "en"});
    const zsnmt::TrainInstance inst = zsnmt::encode_instance(vocab, "w1 w2", "aw1 aw2", "aa");
    EXPECT_EQ(inst.lang, "aa");
    EXPECT_EQ(inst.src.size(), 2u);
    EXPECT_EQ(inst.tgt.size(), 2u);
    EXPECT_EQ(zsnmt::decode_text(vocab, inst.tgt), "aw1 aw2");

    EXPECT_THROW(zsnmt::encode_instance(vocab, "w1", "aw1", "zz"), zsnmt::LanguageError);
    EXPECT_THROW(zsnmt::encode_instance(vocab, "", "aw1", "aa"), zsnmt::SequenceError);
    EXPECT_THROW(zsnmt::encode_instance(vocab, "w1", "  ", "aa"), zsnmt::SequenceError);

    std::vector<zsnmt::TrainInstance> out;
    zsnmt::append_pair_instances(out, vocab, {{"w1", "aw1"}, {"w2", "aw2 aw1"}}, "en", "aa");
    ASSERT_EQ(out.size(), 4u);  // both directions of both rows
    EXPECT_EQ(out[0].lang, "aa");
    EXPECT_EQ(out[1].lang, "en");
    EXPECT_EQ(out[1].src, out[0].tgt);
    EXPECT_EQ(out[1].tgt, out[0].src);
    EXPECT_EQ(out[3].tgt.size(), 1u);

    std::vector<std::string> lines;
    zsnmt::append_text_lines(lines, {{"a b", "c"}, {"d", "e f"}});
    const std::vector<std::string> expect{"a b", "c", "d", "e f"};
    EXPECT_EQ(lines, expect);
}

TEST(EvalSuite, ConvergencePointsAppendAsTsv) {
    const std::string path =
        (std::filesystem::temp_directory_path() / "zsnmt_eval_curve.tsv").string();
    std::filesystem::remove(path);
    zsnmt::append_convergence_point(path, 0, 0.125, 3.5);
    zsnmt::append_convergence_point(path, 200, 0.25, 7.75);
    const std::vector<std::string> lines = zsnmt::read_lines(path);
    ASSERT_EQ(lines.size(), 2u);
    EXPECT_EQ(lines[0], "0\t0.125\t3.5");
    EXPECT_EQ(lines[1], "200\t0.25\t7.75");
    std::filesystem::remove(path);
}
