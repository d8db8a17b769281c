// Translation-language detection. Two detectors share one interface:
//  - VocabDetector: majority vote over per-language surface-token tables;
//    exact on corpora whose languages use disjoint vocabularies.
//  - CharNgramDetector: character n-gram profiles (n = 1..3) built from
//    reference text, for data without disjoint token sets.
// A sentence whose every token (or n-gram) is unknown comes back
// undetermined, which accuracy metrics count as off-target.
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "zsnmt/util.hpp"
#include "zsnmt/vocab.hpp"

namespace zsnmt {

struct Detection {
    std::string lang;  // empty when undetermined
    double confidence = 0.0;

    bool undetermined() const { return lang.empty(); }
};

class VocabDetector {
public:
    void add_token(const std::string& lang, const std::string& token) {
        if (lang.empty()) throw LanguageError("detector: empty language code");
        tables_[lang].insert(token);
    }

    void add_corpus(const std::string& lang, const std::vector<std::string>& lines) {
        for (const auto& line : lines)
            for (const auto& tok : split_ws(line)) add_token(lang, tok);
    }

    std::vector<std::string> languages() const {
        std::vector<std::string> out;
        for (const auto& [lang, _] : tables_) out.push_back(lang);
        return out;
    }

    // Majority vote: each token votes for every language whose table holds
    // it; confidence is the winner's votes over the sentence's token count,
    // so unknown tokens dilute it. Ties go to the lexicographically
    // smallest language code for determinism.
    Detection detect(const std::string& sentence) const {
        const std::vector<std::string> toks = split_ws(sentence);
        if (toks.empty()) throw SequenceError("detect_language: empty sentence");
        std::map<std::string, std::size_t> votes;
        for (const auto& tok : toks)
            for (const auto& [lang, table] : tables_)
                if (table.count(tok)) ++votes[lang];
        Detection det;
        std::size_t best = 0;
        for (const auto& [lang, v] : votes) {
            if (v > best) {  // map order makes ties lexicographic
                best = v;
                det.lang = lang;
            }
        }
        if (best == 0) return Detection{};
        det.confidence = static_cast<double>(best) / static_cast<double>(toks.size());
        return det;
    }

private:
    std::map<std::string, std::set<std::string>> tables_;
};

class CharNgramDetector {
public:
    explicit CharNgramDetector(std::size_t max_order = 3) : max_order_(max_order) {
        if (max_order < 1) throw ConfigError("char n-gram detector needs order >= 1");
    }

    void add_corpus(const std::string& lang, const std::vector<std::string>& lines) {
        if (lang.empty()) throw LanguageError("detector: empty language code");
        auto& profile = profiles_[lang];
        double& total = totals_[lang];
        for (const auto& line : lines)
            for_each_gram(line, [&](const std::string& g) {
                ++profile[g];
                ++total;
            });
    }

    // Score = mean profile frequency of the sentence's n-grams; confidence
    // is the winner's share of the summed scores.
    Detection detect(const std::string& sentence) const {
        if (trim(sentence).empty()) throw SequenceError("detect_language: empty sentence");
        std::map<std::string, double> scores;
        double sum = 0.0;
        for (const auto& [lang, profile] : profiles_) {
            double s = 0.0;
            std::size_t grams = 0;
            for_each_gram(sentence, [&](const std::string& g) {
                ++grams;
                auto it = profile.find(g);
                if (it != profile.end()) s += it->second / totals_.at(lang);
            });
            if (grams > 0) s /= static_cast<double>(grams);
            scores[lang] = s;
            sum += s;
        }
        Detection det;
        double best = 0.0;
        for (const auto& [lang, s] : scores)
            if (s > best) {
                best = s;
                det.lang = lang;
            }
        if (best <= 0.0 || sum <= 0.0) return Detection{};
        det.confidence = best / sum;
        return det;
    }

private:
    template <typename Fn>
    void for_each_gram(const std::string& line, Fn&& fn) const {
        const std::vector<std::string> chars = utf8_chars(line);
        for (std::size_t n = 1; n <= max_order_; ++n)
            for (std::size_t i = 0; i + n <= chars.size(); ++i) {
                std::string g;
                for (std::size_t j = 0; j < n; ++j) g += chars[i + j];
                fn(g);
            }
    }

    std::size_t max_order_;
    std::map<std::string, std::map<std::string, double>> profiles_;
    std::map<std::string, double> totals_;
};

// Fraction of hypotheses detected as `expected`. Undetermined detections and
// empty hypotheses count as off-target.
template <typename Detector>
double language_accuracy(const Detector& det, const std::vector<std::string>& hyps,
                         const std::string& expected) {
    if (hyps.empty()) throw EvalError("language_accuracy: no hypotheses");
    std::size_t hit = 0;
    for (const auto& hyp : hyps) {
        if (trim(hyp).empty()) continue;
        const Detection d = det.detect(hyp);
        if (!d.undetermined() && d.lang == expected) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(hyps.size());
}

}  // namespace zsnmt
