// Evaluation suite: per-direction BLEU and translation-language accuracy,
// aggregate averages over supervised and zero-shot directions, win ratio
// against a reference report, accuracy<->BLEU Pearson correlation, report
// serialization, and the convergence-curve plot data.
#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "zsnmt/bleu.hpp"
#include "zsnmt/corpus.hpp"
#include "zsnmt/decode.hpp"
#include "zsnmt/langid.hpp"
#include "zsnmt/model.hpp"
#include "zsnmt/util.hpp"

namespace zsnmt {

// Round-trip formatting for scores persisted to report.kv: reading the
// value back must reproduce the double exactly, or comparisons against a
// stored report (win ratio, replay checks) pick up rounding noise.
inline std::string format_score(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw EvalError("pearson: length mismatch");
    const std::size_t n = xs.size();
    if (n < 2) throw EvalError("pearson: need at least two points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        throw EvalError("pearson: zero variance leaves the correlation undefined");
    return sxy / std::sqrt(sxx * syy);
}

struct DirectionResult {
    std::string src, tgt;
    double bleu = 0.0;               // [0, 100]
    double language_accuracy = 0.0;  // [0, 1]
    std::size_t n_sentences = 0;
    bool zero_shot = false;

    std::string name() const { return src + "-" + tgt; }
};

struct EvalReport {
    std::vector<DirectionResult> directions;
    double bleu_all = 0.0;
    double bleu_zero = 0.0;
    double acc_zero = 0.0;
    double pearson_acc_bleu = 0.0;  // over zero-shot directions
    bool has_pearson = false;

    void aggregate() {
        double sum_all = 0.0, sum_zero = 0.0, sum_acc = 0.0;
        std::size_t zero = 0;
        std::vector<double> accs, bleus;
        for (const auto& d : directions) {
            sum_all += d.bleu;
            if (d.zero_shot) {
                ++zero;
                sum_zero += d.bleu;
                sum_acc += d.language_accuracy;
                accs.push_back(d.language_accuracy);
                bleus.push_back(d.bleu);
            }
        }
        bleu_all = directions.empty() ? 0.0 : sum_all / static_cast<double>(directions.size());
        bleu_zero = zero == 0 ? 0.0 : sum_zero / static_cast<double>(zero);
        acc_zero = zero == 0 ? 0.0 : sum_acc / static_cast<double>(zero);
        has_pearson = false;
        if (accs.size() >= 2) {
            try {
                pearson_acc_bleu = pearson(accs, bleus);
                has_pearson = true;
            } catch (const EvalError&) {
                // zero variance: leave the correlation unset
            }
        }
    }

    kv::Map to_kv() const {
        kv::Map m;
        kv::set(m, "eval.directions", std::to_string(directions.size()));
        kv::set(m, "eval.bleu_all", format_score(bleu_all));
        kv::set(m, "eval.bleu_zero", format_score(bleu_zero));
        kv::set(m, "eval.acc_zero", format_score(acc_zero));
        if (has_pearson) kv::set(m, "eval.pearson_acc_bleu", format_score(pearson_acc_bleu));
        for (const auto& d : directions) {
            const std::string p = "dir." + d.name() + ".";
            kv::set(m, p + "bleu", format_score(d.bleu));
            kv::set(m, p + "acc", format_score(d.language_accuracy));
            kv::set(m, p + "n", std::to_string(d.n_sentences));
            kv::set(m, p + "zero_shot", d.zero_shot ? "1" : "0");
        }
        return m;
    }

    std::string table() const {
        std::ostringstream os;
        os << std::left << std::setw(12) << "direction" << std::right << std::setw(9) << "BLEU"
           << std::setw(9) << "ACC%" << std::setw(7) << "n" << std::setw(6) << "zs" << "\n";
        for (const auto& d : directions) {
            os << std::left << std::setw(12) << d.name() << std::right << std::fixed
               << std::setprecision(2) << std::setw(9) << d.bleu << std::setw(9)
               << 100.0 * d.language_accuracy << std::setw(7) << d.n_sentences << std::setw(6)
               << (d.zero_shot ? "*" : "") << "\n";
        }
        os << std::left << std::setw(12) << "BLEU_all" << std::right << std::fixed
           << std::setprecision(2) << std::setw(9) << bleu_all << "\n";
        os << std::left << std::setw(12) << "BLEU_zero" << std::right << std::setw(9) << bleu_zero
           << "\n";
        os << std::left << std::setw(12) << "ACC_zero" << std::right << std::setw(9)
           << 100.0 * acc_zero << "\n";
        if (has_pearson)
            os << std::left << std::setw(12) << "pearson" << std::right << std::setprecision(4)
               << std::setw(9) << pearson_acc_bleu << "\n";
        return os.str();
    }
};

// Percentage of directions where `report` strictly beats `reference` on
// BLEU; exact ties are not wins. Direction sets must match.
inline double win_ratio(const EvalReport& report, const EvalReport& reference) {
    if (report.directions.size() != reference.directions.size())
        throw EvalError("win_ratio: direction sets differ in size");
    std::size_t wins = 0;
    for (std::size_t i = 0; i < report.directions.size(); ++i) {
        const auto& a = report.directions[i];
        const auto& b = reference.directions[i];
        if (a.src != b.src || a.tgt != b.tgt)
            throw EvalError("win_ratio: direction mismatch at index " + std::to_string(i) + " (" +
                            a.name() + " vs " + b.name() + ")");
        if (a.bleu > b.bleu) ++wins;
    }
    if (report.directions.empty()) return 0.0;
    return 100.0 * static_cast<double>(wins) / static_cast<double>(report.directions.size());
}

// One direction's text to translate and score.
struct EvalDirection {
    std::string src_lang, tgt_lang;
    std::vector<std::string> src_text, ref_text;  // aligned
    bool zero_shot = false;
};

struct EvalOptions {
    BeamConfig beam;       // beam.max_len acts as the decode cap
    bool greedy = false;   // bypass beam search
    bool pivot = false;    // route zero-shot directions through the pivot language
    std::string pivot_lang = "en";
};

template <typename T, typename Detector>
DirectionResult evaluate_direction(const TransformerModel<T>& model, const Vocab& vocab,
                                   const EvalDirection& dir, const Detector& det,
                                   const EvalOptions& opt) {
    if (dir.src_text.size() != dir.ref_text.size())
        throw EvalError("direction " + dir.src_lang + "-" + dir.tgt_lang +
                        ": source/reference misaligned");
    if (dir.src_text.empty())
        throw EvalError("direction " + dir.src_lang + "-" + dir.tgt_lang + ": no sentences");
    std::vector<std::string> hyps;
    hyps.reserve(dir.src_text.size());
    for (const auto& line : dir.src_text) {
        const std::vector<int> src = vocab.encode(split_ws(line));
        std::vector<int> out;
        if (opt.pivot && dir.zero_shot)
            out = pivot_translate(model, src, dir.src_lang, dir.tgt_lang, opt.pivot_lang,
                                  opt.beam);
        else if (opt.greedy)
            out = greedy_translate(model, src, dir.tgt_lang, opt.beam.max_len);
        else
            out = beam_translate(model, src, dir.tgt_lang, opt.beam);
        hyps.push_back(decode_text(vocab, out));
    }
    DirectionResult res;
    res.src = dir.src_lang;
    res.tgt = dir.tgt_lang;
    res.n_sentences = dir.src_text.size();
    res.zero_shot = dir.zero_shot;
    res.bleu = bleu_corpus(hyps, dir.ref_text);
    res.language_accuracy = language_accuracy(det, hyps, dir.tgt_lang);
    return res;
}

template <typename T, typename Detector>
EvalReport evaluate_directions(const TransformerModel<T>& model, const Vocab& vocab,
                               const std::vector<EvalDirection>& dirs, const Detector& det,
                               const EvalOptions& opt) {
    EvalReport report;
    for (const auto& dir : dirs)
        report.directions.push_back(evaluate_direction(model, vocab, dir, det, opt));
    report.aggregate();
    return report;
}

// Plot data for the convergence curve: tab-separated step, zero-shot
// accuracy, zero-shot BLEU.
inline void append_convergence_point(const std::string& path, std::uint64_t step, double acc_zero,
                                     double bleu_zero) {
    std::ostringstream os;
    os << step << '\t' << acc_zero << '\t' << bleu_zero;
    append_line(path, os.str());
}

}  // namespace zsnmt
