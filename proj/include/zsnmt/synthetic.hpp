// Synthetic multilingual translation task: K languages over a shared concept
// vocabulary, each non-English language a bijective token cipher with its own
// surface vocabulary (disjoint from every other language by prefixing), plus
// an optional deterministic adjacent-pair reordering so the task is not pure
// token substitution. English surfaces concepts directly. Emits English-
// centric train/valid/test pairs for every X, and test-only (plus small
// validation) references for every zero-shot pair X-Y, with every underlying
// concept sentence globally unique so train and heldout text never overlap,
// even across pairs.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "zsnmt/util.hpp"

namespace zsnmt {

struct SyntheticConfig {
    std::size_t languages = 5;  // total count, English included
    std::size_t concepts = 64;  // shared concept vocabulary size
    std::size_t train_per_pair = 500;
    std::size_t valid_per_pair = 32;
    std::size_t test_per_pair = 32;
    std::size_t len_lo = 4;
    std::size_t len_hi = 12;
    bool reorder = true;  // every second non-English language swaps adjacent tokens
    std::uint64_t seed = 1;

    void validate() const {
        if (languages < 3)
            throw ConfigError("synthetic suite needs >= 3 languages (>= 2 beyond English) "
                              "to produce zero-shot pairs");
        if (languages > 27) throw ConfigError("synthetic suite supports at most 27 languages");
        if (concepts < 2) throw ConfigError("concept vocabulary must have >= 2 entries");
        if (len_lo < 1 || len_hi < len_lo) throw ConfigError("bad sentence length range");
        if (train_per_pair == 0 || valid_per_pair == 0 || test_per_pair == 0)
            throw ConfigError("split sizes must be positive");
    }
};

class SyntheticSuite {
public:
    using Pair = std::pair<std::string, std::string>;  // text in lang_a / lang_b
    struct PairData {
        std::string lang_a, lang_b;
        std::vector<Pair> train, valid, test;
    };

    explicit SyntheticSuite(const SyntheticConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        langs_.push_back("en");
        for (std::size_t i = 1; i < cfg.languages; ++i)
            langs_.push_back(std::string("l") + static_cast<char>('a' + (i - 1)));

        for (std::size_t i = 0; i < langs_.size(); ++i) {
            const std::string& lang = langs_[i];
            std::vector<int> perm(cfg.concepts);
            for (std::size_t j = 0; j < cfg.concepts; ++j) perm[j] = static_cast<int>(j);
            if (lang != "en") {
                Rng rng(derive_seed(cfg.seed, "cipher:" + lang));
                rng.shuffle(perm);
            }
            perms_[lang] = perm;
            swaps_[lang] = cfg.reorder && lang != "en" && i % 2 == 1;
            auto& reverse = reverse_[lang];
            for (std::size_t j = 0; j < cfg.concepts; ++j)
                reverse[surface(lang, perm[j])] = static_cast<int>(j);
        }

        generate();
    }

    const std::vector<std::string>& languages() const { return langs_; }
    const std::vector<PairData>& supervised() const { return supervised_; }   // lang_a == "en"
    const std::vector<PairData>& zero_shot() const { return zero_shot_; }     // no train split
    bool swaps_adjacent(const std::string& lang) const { return swaps_.at(lang); }

    // Every surface token of a language, for seeding a vocabulary detector.
    std::vector<std::string> surface_vocab(const std::string& lang) const {
        const auto& perm = perm_of(lang);
        std::vector<std::string> out;
        out.reserve(perm.size());
        for (int p : perm) out.push_back(surface(lang, p));
        std::sort(out.begin(), out.end());
        return out;
    }

    std::string concepts_to_text(const std::vector<int>& concept_ids,
                                 const std::string& lang) const {
        const auto& perm = perm_of(lang);
        std::vector<int> ids = concept_ids;
        if (swaps_.at(lang)) swap_adjacent(ids);
        std::vector<std::string> toks;
        toks.reserve(ids.size());
        for (int c : ids) {
            if (c < 0 || static_cast<std::size_t>(c) >= perm.size())
                throw IndexError("concept id out of range: " + std::to_string(c));
            toks.push_back(surface(lang, perm[static_cast<std::size_t>(c)]));
        }
        return join(toks, " ");
    }

    std::vector<int> text_to_concepts(const std::string& text, const std::string& lang) const {
        const auto& reverse = reverse_.at(checked_lang(lang));
        std::vector<int> ids;
        for (const auto& tok : split_ws(text)) {
            auto it = reverse.find(tok);
            if (it == reverse.end())
                throw SequenceError("token '" + tok + "' is not in the " + lang +
                                    " surface vocabulary");
            ids.push_back(it->second);
        }
        if (swaps_.at(lang)) swap_adjacent(ids);  // the swap is an involution
        return ids;
    }

    // Analytic translation oracle: decode through the shared concepts.
    std::string translate_exact(const std::string& text, const std::string& src,
                                const std::string& tgt) const {
        return concepts_to_text(text_to_concepts(text, src), tgt);
    }

    // Writes one sentence per line: <a>-<b>.<split>.<lang> files plus a
    // manifest describing the suite.
    void write(const std::string& dir) const {
        std::filesystem::create_directories(dir);
        auto dump = [&](const PairData& pd) {
            const std::string stem = dir + "/" + pd.lang_a + "-" + pd.lang_b + ".";
            auto side = [&](const std::vector<Pair>& rows, const std::string& split) {
                if (rows.empty()) return;
                std::vector<std::string> a_lines, b_lines;
                for (const auto& p : rows) {
                    a_lines.push_back(p.first);
                    b_lines.push_back(p.second);
                }
                write_lines(stem + split + "." + pd.lang_a, a_lines);
                write_lines(stem + split + "." + pd.lang_b, b_lines);
            };
            side(pd.train, "train");
            side(pd.valid, "valid");
            side(pd.test, "test");
        };
        for (const auto& pd : supervised_) dump(pd);
        for (const auto& pd : zero_shot_) dump(pd);

        kv::Map manifest;
        kv::set(manifest, "suite.languages", join(langs_, ","));
        kv::set(manifest, "suite.language_count", std::to_string(cfg_.languages));
        kv::set(manifest, "suite.concepts", std::to_string(cfg_.concepts));
        kv::set(manifest, "suite.train_per_pair", std::to_string(cfg_.train_per_pair));
        kv::set(manifest, "suite.valid_per_pair", std::to_string(cfg_.valid_per_pair));
        kv::set(manifest, "suite.test_per_pair", std::to_string(cfg_.test_per_pair));
        kv::set(manifest, "suite.len_lo", std::to_string(cfg_.len_lo));
        kv::set(manifest, "suite.len_hi", std::to_string(cfg_.len_hi));
        kv::set(manifest, "suite.reorder", cfg_.reorder ? "1" : "0");
        kv::set(manifest, "suite.seed", std::to_string(cfg_.seed));
        kv::write_file(dir + "/manifest.kv", manifest);
    }

private:
    static std::string surface(const std::string& lang, int word) {
        return (lang == "en" ? std::string() : lang) + "w" + std::to_string(word);
    }

    static void swap_adjacent(std::vector<int>& ids) {
        for (std::size_t i = 0; i + 1 < ids.size(); i += 2) std::swap(ids[i], ids[i + 1]);
    }

    const std::string& checked_lang(const std::string& lang) const {
        if (!perms_.count(lang)) throw LanguageError("unknown synthetic language: " + lang);
        return lang;
    }

    const std::vector<int>& perm_of(const std::string& lang) const {
        return perms_.at(checked_lang(lang));
    }

    std::vector<int> fresh_sentence(Rng& rng, std::set<std::string>& seen) const {
        for (int attempt = 0; attempt < 10000; ++attempt) {
            const std::size_t len = cfg_.len_lo + rng.uniform_index(cfg_.len_hi - cfg_.len_lo + 1);
            std::vector<int> ids(len);
            std::string key;
            for (auto& c : ids) {
                c = static_cast<int>(rng.uniform_index(cfg_.concepts));
                key += std::to_string(c);
                key += ',';
            }
            if (seen.insert(key).second) return ids;
        }
        throw ConfigError("concept space too small to draw the requested number of "
                          "unique sentences; increase `concepts` or lengths");
    }

    void generate() {
        Rng rng(derive_seed(cfg_.seed, "sentences"));
        std::set<std::string> seen;
        auto fill = [&](const std::string& a, const std::string& b, std::vector<Pair>& out,
                        std::size_t count) {
            for (std::size_t i = 0; i < count; ++i) {
                const std::vector<int> ids = fresh_sentence(rng, seen);
                out.push_back(Pair{concepts_to_text(ids, a), concepts_to_text(ids, b)});
            }
        };
        for (std::size_t i = 1; i < langs_.size(); ++i) {
            PairData pd;
            pd.lang_a = "en";
            pd.lang_b = langs_[i];
            fill(pd.lang_a, pd.lang_b, pd.train, cfg_.train_per_pair);
            fill(pd.lang_a, pd.lang_b, pd.valid, cfg_.valid_per_pair);
            fill(pd.lang_a, pd.lang_b, pd.test, cfg_.test_per_pair);
            supervised_.push_back(std::move(pd));
        }
        for (std::size_t i = 1; i < langs_.size(); ++i)
            for (std::size_t j = i + 1; j < langs_.size(); ++j) {
                PairData pd;
                pd.lang_a = langs_[i];
                pd.lang_b = langs_[j];
                fill(pd.lang_a, pd.lang_b, pd.valid, cfg_.valid_per_pair);
                fill(pd.lang_a, pd.lang_b, pd.test, cfg_.test_per_pair);
                zero_shot_.push_back(std::move(pd));
            }
    }

    SyntheticConfig cfg_;
    std::vector<std::string> langs_;
    std::map<std::string, std::vector<int>> perms_;
    std::map<std::string, std::map<std::string, int>> reverse_;
    std::map<std::string, bool> swaps_;
    std::vector<PairData> supervised_;
    std::vector<PairData> zero_shot_;
};

}  // namespace zsnmt
