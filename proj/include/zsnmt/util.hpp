// Shared utilities: error types, deterministic RNG, string and key-value helpers.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace zsnmt {

// Domain error hierarchy. Dimension/sequence/language/... map onto the
// checked failure states of the library; the CLI turns UsageError into
// exit code 2 and everything else into exit code 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct DimensionError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct SequenceError : Error { using Error::Error; };
struct LanguageError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };
struct EvalError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };

// FNV-1a, used to derive per-tensor and per-step RNG streams from a base
// seed plus a label. Stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 1469598103934665603ull) {
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, const std::string& label) {
    return fnv1a(label, base ^ 0x9e3779b97f4a7c15ull);
}

// Deterministic RNG. Gaussian sampling is a hand-rolled Box-Muller on top
// of the uniform stream so that identical seeds give identical draws on
// every platform (std::normal_distribution is implementation-defined).
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    // Uniform integer in [0, n).
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw IndexError("uniform_index: n must be positive");
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return static_cast<std::size_t>(v % n);
    }

    int uniform_int(int lo, int hi) {  // inclusive range
        if (hi < lo) throw IndexError("uniform_int: empty range");
        return lo + static_cast<int>(uniform_index(static_cast<std::size_t>(hi - lo + 1)));
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        u1 = std::max(u1, 1e-300);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename V>
    void shuffle(V& v) {
        if (v.empty()) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::swap(v[i], v[uniform_index(i + 1)]);
        }
    }

  private:
    // splitmix64: tiny, fast, and good enough statistically for init,
    // dropout masks and sampling.
    struct SplitMix {
        std::uint64_t state;
        explicit SplitMix(std::uint64_t s) : state(s) {}
        std::uint64_t operator()() {
            std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            return z ^ (z >> 31);
        }
    };
    SplitMix gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---- string helpers ----

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

inline std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string join(const std::vector<std::string>& toks, const std::string& sep = " ") {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out += sep;
        out += toks[i];
    }
    return out;
}

inline std::string to_upper_ascii(std::string s) {
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

inline std::string to_lower_ascii(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// ---- plain key-value files (configs, manifests, logs) ----

namespace kv {

using Map = std::vector<std::pair<std::string, std::string>>;

inline const std::string* find(const Map& m, const std::string& key) {
    for (const auto& [k, v] : m)
        if (k == key) return &v;
    return nullptr;
}

inline std::string get_or(const Map& m, const std::string& key, const std::string& fallback) {
    const std::string* v = find(m, key);
    return v ? *v : fallback;
}

inline void set(Map& m, const std::string& key, const std::string& value) {
    for (auto& [k, v] : m) {
        if (k == key) {
            v = value;
            return;
        }
    }
    m.emplace_back(key, value);
}

inline Map parse(std::istream& in) {
    Map out;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("key-value line missing '=': " + t);
        out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return out;
}

inline Map parse(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
}

inline Map parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open key-value file: " + path);
    return parse(in);
}

inline void write(std::ostream& out, const Map& m) {
    for (const auto& [k, v] : m) out << k << " = " << v << "\n";
}

inline void write_file(const std::string& path, const Map& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write key-value file: " + path);
    write(out, m);
}

}  // namespace kv

// ---- small file helpers ----

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write file: " + path);
    for (const auto& l : lines) out << l << "\n";
}

inline void append_line(const std::string& path, const std::string& line) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot append to file: " + path);
    out << line << "\n";
}

}  // namespace zsnmt
