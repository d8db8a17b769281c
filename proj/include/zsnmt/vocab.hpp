// Token vocabulary with pinned special ids plus a small byte-pair
// subword learner. Target-language tag tokens of the form <2xx> live in
// the same table, directly after the reserved range.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "zsnmt/util.hpp"

namespace zsnmt {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;
inline constexpr int kNumReserved = 4;

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kBosToken = "<s>";
inline constexpr const char* kEosToken = "</s>";

// Target-language tag, e.g. tag_token("de") == "<2de>".
inline std::string tag_token(const std::string& lang) {
    if (lang.empty()) throw LanguageError("empty language code");
    return "<2" + lang + ">";
}

inline bool is_tag_token(const std::string& tok) {
    return tok.size() > 3 && tok.rfind("<2", 0) == 0 && tok.back() == '>';
}

// Splits a UTF-8 string into code points (kept as byte strings). Invalid
// continuation bytes fall back to single-byte symbols.
inline std::vector<std::string> utf8_chars(const std::string& s) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < s.size();) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if ((c & 0xE0u) == 0xC0u) len = 2;
        else if ((c & 0xF0u) == 0xE0u) len = 3;
        else if ((c & 0xF8u) == 0xF0u) len = 4;
        if (i + len > s.size()) len = 1;
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

class Vocab {
  public:
    Vocab() {
        for (const char* t : {kPadToken, kUnkToken, kBosToken, kEosToken}) add_token(t);
    }

    // Builds the table from whitespace-tokenized lines. Tag tokens for all
    // given languages sit right after the reserved ids, in sorted order, so
    // the id layout is a function of the language set alone. Regular tokens
    // rank by descending frequency, ties broken lexicographically.
    // max_size caps the total table (reserved + tags + regular).
    static Vocab build(const std::vector<std::string>& lines,
                       const std::vector<std::string>& langs, std::size_t max_size = 0) {
        Vocab v;
        std::vector<std::string> sorted_langs(langs);
        std::sort(sorted_langs.begin(), sorted_langs.end());
        for (std::size_t i = 1; i < sorted_langs.size(); ++i)
            if (sorted_langs[i] == sorted_langs[i - 1])
                throw LanguageError("duplicate language code '" + sorted_langs[i] + "'");
        for (const auto& l : sorted_langs) v.add_token(tag_token(l));
        if (max_size != 0 && max_size < v.size())
            throw ConfigError("vocab cap " + std::to_string(max_size) +
                              " cannot hold reserved tokens and " +
                              std::to_string(sorted_langs.size()) + " language tags");

        std::unordered_map<std::string, std::uint64_t> counts;
        for (const auto& line : lines)
            for (auto& tok : split_ws(line)) ++counts[tok];
        std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        for (const auto& [tok, cnt] : ranked) {
            if (max_size != 0 && v.size() >= max_size) break;
            if (!v.contains(tok)) v.add_token(tok);
        }
        return v;
    }

    std::size_t size() const { return id_to_token_.size(); }
    bool contains(const std::string& tok) const { return token_to_id_.count(tok) > 0; }

    int id(const std::string& tok) const {
        auto it = token_to_id_.find(tok);
        return it == token_to_id_.end() ? kUnkId : it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
            throw IndexError("token id " + std::to_string(id) + " out of range [0," +
                             std::to_string(id_to_token_.size()) + ")");
        return id_to_token_[static_cast<std::size_t>(id)];
    }

    int tag_id(const std::string& lang) const {
        auto it = token_to_id_.find(tag_token(lang));
        if (it == token_to_id_.end())
            throw LanguageError("no tag token for language '" + lang + "'");
        return it->second;
    }

    bool has_lang(const std::string& lang) const { return contains(tag_token(lang)); }

    std::vector<std::string> languages() const {
        std::vector<std::string> out;
        for (const auto& t : id_to_token_)
            if (is_tag_token(t)) out.push_back(t.substr(2, t.size() - 3));
        return out;
    }

    std::vector<int> encode(const std::vector<std::string>& toks) const {
        std::vector<int> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(id(t));
        return out;
    }

    std::vector<std::string> decode(const std::vector<int>& ids,
                                    bool strip_specials = true) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (int i : ids) {
            const std::string& t = token(i);
            if (strip_specials && (i < kNumReserved || is_tag_token(t))) continue;
            out.push_back(t);
        }
        return out;
    }

    void save(const std::string& path) const {
        std::vector<std::string> lines;
        lines.push_back("zsnmt-vocab 1");
        for (const auto& t : id_to_token_) lines.push_back(t);
        write_lines(path, lines);
    }

    static Vocab load(const std::string& path) {
        auto lines = read_lines(path);
        if (lines.empty() || lines[0] != "zsnmt-vocab 1")
            throw IoError("not a vocab file: " + path);
        Vocab v;
        v.id_to_token_.clear();
        v.token_to_id_.clear();
        for (std::size_t i = 1; i < lines.size(); ++i) v.add_token(lines[i]);
        if (v.size() < static_cast<std::size_t>(kNumReserved) ||
            v.id_to_token_[0] != kPadToken || v.id_to_token_[1] != kUnkToken ||
            v.id_to_token_[2] != kBosToken || v.id_to_token_[3] != kEosToken)
            throw IoError("vocab file missing reserved tokens in pinned order: " + path);
        return v;
    }

  private:
    void add_token(const std::string& tok) {
        if (token_to_id_.count(tok))
            throw ConfigError("duplicate vocab token '" + tok + "'");
        token_to_id_.emplace(tok, static_cast<int>(id_to_token_.size()));
        id_to_token_.push_back(tok);
    }

    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

// Minimal byte-pair encoder over whitespace-tokenized text. Merges are
// learned on word frequencies; non-final subwords carry an "@@" marker so
// decoding is a pure string operation.
class BpeLite {
  public:
    using Merge = std::pair<std::string, std::string>;

    BpeLite() = default;
    explicit BpeLite(std::vector<Merge> merges) : merges_(std::move(merges)) {}

    const std::vector<Merge>& merges() const { return merges_; }

    static BpeLite learn(const std::vector<std::string>& lines, std::size_t num_merges) {
        std::map<std::string, std::uint64_t> word_counts;
        for (const auto& line : lines)
            for (auto& w : split_ws(line)) ++word_counts[w];

        std::vector<std::pair<std::vector<std::string>, std::uint64_t>> words;
        words.reserve(word_counts.size());
        for (const auto& [w, c] : word_counts) words.emplace_back(utf8_chars(w), c);

        std::vector<Merge> merges;
        for (std::size_t step = 0; step < num_merges; ++step) {
            // std::map keys are ordered, so equal counts resolve to the
            // lexicographically smallest pair deterministically.
            std::map<Merge, std::uint64_t> pair_counts;
            for (const auto& [syms, cnt] : words)
                for (std::size_t i = 0; i + 1 < syms.size(); ++i)
                    pair_counts[{syms[i], syms[i + 1]}] += cnt;
            if (pair_counts.empty()) break;
            auto best = pair_counts.begin();
            for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it)
                if (it->second > best->second) best = it;
            merges.push_back(best->first);
            for (auto& [syms, cnt] : words) syms = apply_merge(syms, best->first);
        }
        return BpeLite(std::move(merges));
    }

    // Splits one word into subword tokens; every piece except the last is
    // suffixed with the continuation marker.
    std::vector<std::string> split_word(const std::string& word) const {
        std::vector<std::string> syms = utf8_chars(word);
        for (const auto& m : merges_) syms = apply_merge(syms, m);
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) syms[i] += "@@";
        return syms;
    }

    std::vector<std::string> encode_line(const std::string& line) const {
        std::vector<std::string> out;
        for (auto& w : split_ws(line))
            for (auto& piece : split_word(w)) out.push_back(std::move(piece));
        return out;
    }

    // Inverse of encode_line for any token sequence using the marker.
    static std::string decode_tokens(const std::vector<std::string>& toks) {
        std::string out;
        for (const auto& t : toks) {
            if (t.size() > 2 && t.compare(t.size() - 2, 2, "@@") == 0) {
                out += t.substr(0, t.size() - 2);
            } else {
                out += t;
                out += ' ';
            }
        }
        if (!out.empty() && out.back() == ' ') out.pop_back();
        return out;
    }

    void save(const std::string& path) const {
        std::vector<std::string> lines;
        lines.push_back("zsnmt-bpe 1");
        for (const auto& [a, b] : merges_) lines.push_back(a + " " + b);
        write_lines(path, lines);
    }

    static BpeLite load(const std::string& path) {
        auto lines = read_lines(path);
        if (lines.empty() || lines[0] != "zsnmt-bpe 1")
            throw IoError("not a merges file: " + path);
        std::vector<Merge> merges;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            auto parts = split_ws(lines[i]);
            if (parts.size() != 2)
                throw IoError("malformed merge line " + std::to_string(i + 1) + " in " + path);
            merges.emplace_back(parts[0], parts[1]);
        }
        return BpeLite(std::move(merges));
    }

  private:
    // One left-to-right pass combining non-overlapping occurrences.
    static std::vector<std::string> apply_merge(const std::vector<std::string>& syms,
                                                const Merge& m) {
        std::vector<std::string> out;
        out.reserve(syms.size());
        for (std::size_t i = 0; i < syms.size();) {
            if (i + 1 < syms.size() && syms[i] == m.first && syms[i + 1] == m.second) {
                out.push_back(syms[i] + syms[i + 1]);
                i += 2;
            } else {
                out.push_back(syms[i]);
                ++i;
            }
        }
        return out;
    }

    std::vector<Merge> merges_;
};

}  // namespace zsnmt
