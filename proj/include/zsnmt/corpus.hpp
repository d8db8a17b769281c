// Text <-> training-instance plumbing shared by the trainer, the evaluation
// suite, and the CLI: joint vocabulary construction over pair data, instance
// encoding (the tag is stored as a language code and prepended inside the
// model; EOS joins the target at the loss/decode layer), and split-file
// loading in the <a>-<b>.<split>.<lang> layout the sampler and the synthetic
// generator write.
#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "zsnmt/trainer.hpp"
#include "zsnmt/util.hpp"
#include "zsnmt/vocab.hpp"

namespace zsnmt {

using TextPair = std::pair<std::string, std::string>;

inline TrainInstance encode_instance(const Vocab& vocab, const std::string& src_text,
                                     const std::string& tgt_text, const std::string& tgt_lang) {
    if (!vocab.has_lang(tgt_lang))
        throw LanguageError("encode_instance: unknown target language '" + tgt_lang + "'");
    TrainInstance inst;
    inst.src = vocab.encode(split_ws(src_text));
    inst.tgt = vocab.encode(split_ws(tgt_text));
    inst.lang = tgt_lang;
    if (inst.src.empty()) throw SequenceError("encode_instance: empty source sentence");
    if (inst.tgt.empty()) throw SequenceError("encode_instance: empty target sentence");
    return inst;
}

inline std::string decode_text(const Vocab& vocab, const std::vector<int>& ids) {
    return join(vocab.decode(ids), " ");
}

// Both translation directions of an aligned pair list as tagged instances.
inline void append_pair_instances(std::vector<TrainInstance>& out, const Vocab& vocab,
                                  const std::vector<TextPair>& rows, const std::string& lang_a,
                                  const std::string& lang_b) {
    for (const auto& [a, b] : rows) {
        out.push_back(encode_instance(vocab, a, b, lang_b));
        out.push_back(encode_instance(vocab, b, a, lang_a));
    }
}

// Lines feeding vocabulary construction: both sides of every row.
inline void append_text_lines(std::vector<std::string>& out, const std::vector<TextPair>& rows) {
    for (const auto& [a, b] : rows) {
        out.push_back(a);
        out.push_back(b);
    }
}

// Language pairs present in a split directory, recognized by the
// <a>-<b>.<split>.<a> naming scheme. Sorted by pair name.
inline std::vector<std::pair<std::string, std::string>> discover_split_pairs(
    const std::string& dir, const std::string& split) {
    if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::pair<std::string, std::string>> out;
    const std::string marker = "." + split + ".";
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        const std::size_t dash = name.find('-');
        const std::size_t dot = name.find('.');
        if (dash == std::string::npos || dot == std::string::npos || dash == 0 || dash >= dot)
            continue;
        const std::string a = name.substr(0, dash);
        const std::string b = name.substr(dash + 1, dot - dash - 1);
        if (b.empty() || name.substr(dot) != marker + a) continue;
        out.emplace_back(a, b);
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<TextPair> load_split(const std::string& dir, const std::string& lang_a,
                                        const std::string& lang_b, const std::string& split) {
    const std::string stem = dir + "/" + lang_a + "-" + lang_b + "." + split + ".";
    if (!std::filesystem::exists(stem + lang_a)) return {};
    const std::vector<std::string> a = read_lines(stem + lang_a);
    const std::vector<std::string> b = read_lines(stem + lang_b);
    if (a.size() != b.size())
        throw SequenceError("split " + lang_a + "-" + lang_b + "." + split + " misaligned (" +
                            std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    std::vector<TextPair> rows;
    rows.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) rows.emplace_back(a[i], b[i]);
    return rows;
}

}  // namespace zsnmt
