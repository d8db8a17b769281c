// English-centric corpus sampler with cross-lingual overlap filtering.
// From each raw aligned pair it draws validation, then test, then up to
// cap_train training pairs (in that order, from a seeded shuffle of the
// lines). The overlap filter works at the monolingual sentence level across
// all pairs at once: a normalized sentence string placed in any pair's train
// split may never appear in any pair's valid/test split, and vice versa.
// Heldout splits may share sentences with each other, and training splits
// with each other; only train <-> heldout leakage is filtered. A line barred
// from heldout because another pair already trains on it falls through to
// this pair's training split rather than being discarded.
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

// Whitespace-normalized exact match. Inputs are expected to be NFC-composed
// UTF-8 already (true of the synthetic suites and of ASCII corpora); no
// recomposition is attempted.
inline std::string normalize_sentence(const std::string& s) { return join(split_ws(s), " "); }

struct RawPair {
    std::string lang_a, lang_b;
    std::vector<std::pair<std::string, std::string>> lines;  // aligned (a, b) text

    std::string name() const { return lang_a + "-" + lang_b; }
};

struct SampledPair {
    std::string lang_a, lang_b;
    std::vector<std::pair<std::string, std::string>> train, valid, test;

    std::string name() const { return lang_a + "-" + lang_b; }
};

struct SampleConfig {
    std::size_t cap_train = 1000;
    std::size_t n_valid = 50;
    std::size_t n_test = 50;
    std::uint64_t seed = 1;

    void validate() const {
        if (cap_train == 0) throw ConfigError("cap_train must be positive");
    }
};

struct SampleStats {
    std::size_t pairs_in = 0;
    std::size_t pairs_kept = 0;
    std::size_t at_cap = 0;        // train size >= cap
    std::size_t at_cap_10 = 0;     // train size >= cap/10
    std::size_t at_cap_100 = 0;    // train size >= cap/100
    std::size_t filtered_train = 0;    // candidates rejected by the overlap filter
    std::size_t filtered_heldout = 0;  // valid/test candidates rejected
    std::vector<std::string> warnings;
    std::vector<std::string> dropped;  // pair names removed entirely

    kv::Map to_kv() const {
        kv::Map m;
        kv::set(m, "sampler.pairs_in", std::to_string(pairs_in));
        kv::set(m, "sampler.pairs_kept", std::to_string(pairs_kept));
        kv::set(m, "sampler.at_cap", std::to_string(at_cap));
        kv::set(m, "sampler.at_cap_10", std::to_string(at_cap_10));
        kv::set(m, "sampler.at_cap_100", std::to_string(at_cap_100));
        kv::set(m, "sampler.filtered_train", std::to_string(filtered_train));
        kv::set(m, "sampler.filtered_heldout", std::to_string(filtered_heldout));
        kv::set(m, "sampler.dropped", join(dropped, ","));
        return m;
    }
};

struct SampleResult {
    std::vector<SampledPair> pairs;
    SampleStats stats;
};

inline SampleResult sample_corpus(const std::vector<RawPair>& raw, const SampleConfig& cfg) {
    cfg.validate();
    SampleResult res;
    res.stats.pairs_in = raw.size();

    // Sentences committed to train vs heldout, pooled over all pairs and
    // both sides of every pair.
    std::set<std::string> in_train, in_heldout;

    // Deterministic order regardless of caller ordering.
    std::vector<const RawPair*> ordered;
    for (const auto& rp : raw) ordered.push_back(&rp);
    std::sort(ordered.begin(), ordered.end(),
              [](const RawPair* x, const RawPair* y) { return x->name() < y->name(); });

    for (const RawPair* rp : ordered) {
        std::vector<std::size_t> idx(rp->lines.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng(derive_seed(cfg.seed, "pair:" + rp->name()));
        rng.shuffle(idx);

        SampledPair sp;
        sp.lang_a = rp->lang_a;
        sp.lang_b = rp->lang_b;
        for (std::size_t i : idx) {
            const bool heldout_room =
                sp.valid.size() < cfg.n_valid || sp.test.size() < cfg.n_test;
            if (!heldout_room && sp.train.size() >= cfg.cap_train) break;  // all splits full
            const auto& line = rp->lines[i];
            const std::string na = normalize_sentence(line.first);
            const std::string nb = normalize_sentence(line.second);
            if (na.empty() || nb.empty()) continue;
            if (heldout_room) {
                if (!in_train.count(na) && !in_train.count(nb)) {
                    in_heldout.insert(na);
                    in_heldout.insert(nb);
                    if (sp.valid.size() < cfg.n_valid) sp.valid.push_back(line);
                    else sp.test.push_back(line);
                    continue;
                }
                // Unusable as heldout, but still fine as training data: fall
                // through so another pair's training duplicate is not wasted.
                ++res.stats.filtered_heldout;
            }
            if (sp.train.size() < cfg.cap_train) {
                if (in_heldout.count(na) || in_heldout.count(nb)) {
                    ++res.stats.filtered_train;
                    continue;
                }
                in_train.insert(na);
                in_train.insert(nb);
                sp.train.push_back(line);
            }
        }

        if (sp.train.empty()) {
            res.stats.dropped.push_back(sp.name());
            res.stats.warnings.push_back("pair " + sp.name() +
                                         " dropped: no training sentences survived sampling");
            continue;
        }
        if (sp.valid.size() < cfg.n_valid || sp.test.size() < cfg.n_test)
            res.stats.warnings.push_back(
                "pair " + sp.name() + " undersized heldout: valid " +
                std::to_string(sp.valid.size()) + "/" + std::to_string(cfg.n_valid) + ", test " +
                std::to_string(sp.test.size()) + "/" + std::to_string(cfg.n_test));

        if (sp.train.size() >= cfg.cap_train) ++res.stats.at_cap;
        if (sp.train.size() * 10 >= cfg.cap_train) ++res.stats.at_cap_10;
        if (sp.train.size() * 100 >= cfg.cap_train) ++res.stats.at_cap_100;
        ++res.stats.pairs_kept;
        res.pairs.push_back(std::move(sp));
    }
    return res;
}

// ---- file plumbing: pairs stored as <a>-<b>.<a> / <a>-<b>.<b> line files ----

inline RawPair load_raw_pair(const std::string& dir, const std::string& lang_a,
                             const std::string& lang_b) {
    RawPair rp;
    rp.lang_a = lang_a;
    rp.lang_b = lang_b;
    const std::string stem = dir + "/" + lang_a + "-" + lang_b + ".";
    const std::vector<std::string> a = read_lines(stem + lang_a);
    const std::vector<std::string> b = read_lines(stem + lang_b);
    if (a.size() != b.size())
        throw SequenceError("pair " + rp.name() + ": sides misaligned (" +
                            std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                            " lines)");
    for (std::size_t i = 0; i < a.size(); ++i) rp.lines.emplace_back(a[i], b[i]);
    return rp;
}

// Scans a directory for <a>-<b>.<a> files and loads each discovered pair.
inline std::vector<RawPair> discover_raw_pairs(const std::string& dir) {
    std::vector<std::pair<std::string, std::string>> found;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string fname = entry.path().filename().string();
        const std::size_t dot = fname.rfind('.');
        const std::size_t dash = fname.find('-');
        if (dot == std::string::npos || dash == std::string::npos || dash > dot) continue;
        const std::string stem = fname.substr(0, dot);
        const std::string ext = fname.substr(dot + 1);
        const std::string a = stem.substr(0, dash);
        const std::string b = stem.substr(dash + 1);
        if (a.empty() || b.empty() || (ext != a && ext != b)) continue;
        if (ext == a) found.emplace_back(a, b);  // count each pair once, via its .a file
    }
    std::sort(found.begin(), found.end());
    std::vector<RawPair> out;
    for (const auto& [a, b] : found) out.push_back(load_raw_pair(dir, a, b));
    return out;
}

inline void write_sampled_pairs(const std::string& dir, const SampleResult& res,
                                const SampleConfig& cfg) {
    std::filesystem::create_directories(dir);
    for (const auto& sp : res.pairs) {
        const std::string stem = dir + "/" + sp.name() + ".";
        auto dump = [&](const std::vector<std::pair<std::string, std::string>>& rows,
                        const std::string& split) {
            if (rows.empty()) return;
            std::vector<std::string> a_lines, b_lines;
            for (const auto& [a, b] : rows) {
                a_lines.push_back(a);
                b_lines.push_back(b);
            }
            write_lines(stem + split + "." + sp.lang_a, a_lines);
            write_lines(stem + split + "." + sp.lang_b, b_lines);
        };
        dump(sp.train, "train");
        dump(sp.valid, "valid");
        dump(sp.test, "test");
    }
    kv::Map manifest = res.stats.to_kv();
    kv::set(manifest, "sampler.cap_train", std::to_string(cfg.cap_train));
    kv::set(manifest, "sampler.n_valid", std::to_string(cfg.n_valid));
    kv::set(manifest, "sampler.n_test", std::to_string(cfg.n_test));
    kv::set(manifest, "sampler.seed", std::to_string(cfg.seed));
    for (const auto& sp : res.pairs) {
        kv::set(manifest, "pair." + sp.name() + ".train", std::to_string(sp.train.size()));
        kv::set(manifest, "pair." + sp.name() + ".valid", std::to_string(sp.valid.size()));
        kv::set(manifest, "pair." + sp.name() + ".test", std::to_string(sp.test.size()));
    }
    kv::write_file(dir + "/manifest.kv", manifest);
    for (const auto& w : res.stats.warnings) append_line(dir + "/warnings.log", w);
}

}  // namespace zsnmt
