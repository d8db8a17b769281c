// zsnmt command-line front end. Subcommands cover the full workflow:
// synthetic-suite generation, corpus sampling, vocabulary building,
// training, ROBT finetuning, translation, evaluation, and parameter
// accounting. Every artifact-producing run writes a manifest.kv next to
// its outputs holding the resolved configuration; passing that file back
// via --config replays the run (explicit flags still win over it).
//
// Exit codes: 0 success, 2 usage error (bad flags/subcommand/config
// syntax), 1 any other failure.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "zsnmt/checkpoint.hpp"
#include "zsnmt/corpus.hpp"
#include "zsnmt/decode.hpp"
#include "zsnmt/eval.hpp"
#include "zsnmt/langid.hpp"
#include "zsnmt/model.hpp"
#include "zsnmt/robt.hpp"
#include "zsnmt/sampler.hpp"
#include "zsnmt/synthetic.hpp"
#include "zsnmt/trainer.hpp"
#include "zsnmt/util.hpp"
#include "zsnmt/vocab.hpp"

namespace {

using namespace zsnmt;

constexpr const char* kToolVersion = "zsnmt 0.1.0";

// Base seed: --seed flag wins, then ZSNMT_SEED, then a fixed default so
// runs are reproducible out of the box. Module seeds derive from it
// unless a manifest (or dedicated flag) pins them directly.
std::uint64_t resolve_seed(std::uint64_t cli_seed, bool cli_seed_set) {
    if (cli_seed_set) return cli_seed;
    if (const char* env = std::getenv("ZSNMT_SEED")) {
        try {
            std::size_t used = 0;
            const std::string text(env);
            const std::uint64_t v = std::stoull(text, &used);
            if (used != text.size()) throw std::invalid_argument(text);
            return v;
        } catch (const std::exception&) {
            throw UsageError("ZSNMT_SEED must be an unsigned integer, got '" +
                             std::string(env) + "'");
        }
    }
    return 1234567;
}

// ---- config-file layering ----
//
// A key in the --config file supplies the value for any flag the command
// line leaves untouched; explicit flags always win. Keys use the same
// names the manifests echo (model.d_model, train.max_steps, ...).

void parse_config_value(const std::string& key, const std::string& v, std::string& out) {
    (void)key;
    out = v;
}

void parse_config_value(const std::string& key, const std::string& v, std::uint64_t& out) {
    try {
        std::size_t used = 0;
        out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "' needs an unsigned integer, got '" + v + "'");
    }
}

void parse_config_value(const std::string& key, const std::string& v, double& out) {
    try {
        out = std::stod(v);
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "' needs a number, got '" + v + "'");
    }
}

void parse_config_value(const std::string& key, const std::string& v, bool& out) {
    if (v == "1" || v == "true" || v == "yes") out = true;
    else if (v == "0" || v == "false" || v == "no") out = false;
    else throw UsageError("config key '" + key + "' needs a boolean, got '" + v + "'");
}

void parse_config_value(const std::string& key, const std::string& v,
                        std::vector<std::string>& out) {
    (void)key;
    out.clear();
    for (const auto& part : split_on(v, ','))
        if (!trim(part).empty()) out.push_back(trim(part));
}

class ConfigLayer {
  public:
    void load(const std::string& path) {
        map_ = kv::parse_file(path);
        loaded_ = true;
    }

    bool has(const std::string& key) const { return loaded_ && kv::find(map_, key) != nullptr; }

    // Flag-backed key: the config value applies only when the flag was
    // not given on the command line.
    template <typename V>
    void bind(CLI::Option* opt, const std::string& key, V& var) {
        appliers_.push_back([this, opt, key, &var] {
            if (opt->count() > 0) return;
            if (const std::string* v = kv::find(map_, key)) parse_config_value(key, *v, var);
        });
    }

    // Config-only key (no flag spelling), e.g. the per-module seeds that
    // manifests echo.
    template <typename V>
    void bind_key(const std::string& key, V& var) {
        appliers_.push_back([this, key, &var] {
            if (const std::string* v = kv::find(map_, key)) parse_config_value(key, *v, var);
        });
    }

    void apply() const {
        if (!loaded_) return;
        for (const auto& f : appliers_) f();
    }

  private:
    kv::Map map_;
    bool loaded_ = false;
    std::vector<std::function<void()>> appliers_;
};

// ---- shared plumbing ----

std::string with_commas(std::size_t n) {
    const std::string s = std::to_string(n);
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i > 0 && (s.size() - i) % 3 == 0) out += ',';
        out += s[i];
    }
    return out;
}

void require_flag(const std::string& value, const std::string& flag) {
    if (value.empty()) throw UsageError(flag + " is required (as a flag or via --config)");
}

// Merges run metadata into the manifest the module may already have
// written, creating it otherwise.
void finish_manifest(const std::string& dir, const std::string& subcommand, std::uint64_t seed,
                     const std::string& config_path, const kv::Map& extra = {}) {
    const std::string path = dir + "/manifest.kv";
    kv::Map m;
    if (std::filesystem::exists(path)) m = kv::parse_file(path);
    kv::set(m, "run.subcommand", subcommand);
    kv::set(m, "run.seed", std::to_string(seed));
    kv::set(m, "run.config", config_path.empty() ? "-" : config_path);
    kv::set(m, "run.version", kToolVersion);
    for (const auto& [k, v] : extra) kv::set(m, k, v);
    kv::write_file(path, m);
}

// Loads training text for every pair in a split directory, optionally
// re-tokenized through BPE, and appends both tagged directions.
std::vector<TrainInstance> load_train_instances(const std::string& data_dir, const Vocab& vocab,
                                                const BpeLite* bpe) {
    std::vector<TrainInstance> out;
    for (const auto& [a, b] : discover_split_pairs(data_dir, "train")) {
        std::vector<TextPair> rows = load_split(data_dir, a, b, "train");
        if (bpe)
            for (auto& [sa, sb] : rows) {
                sa = join(bpe->encode_line(sa), " ");
                sb = join(bpe->encode_line(sb), " ");
            }
        append_pair_instances(out, vocab, rows, a, b);
    }
    if (out.empty()) throw IoError("no <a>-<b>.train.<lang> files found in " + data_dir);
    return out;
}

// Language detector profiled on every split file in a directory. When the
// model works on subwords the profile is built in the same token space.
VocabDetector detector_from_dir(const std::string& dir, const BpeLite* bpe = nullptr) {
    VocabDetector det;
    if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir);
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        const std::size_t dash = name.find('-');
        const std::size_t dot = name.find('.');
        const std::size_t last_dot = name.rfind('.');
        if (dash == std::string::npos || dot == std::string::npos || dash == 0 || dash >= dot ||
            last_dot <= dot)
            continue;
        const std::string a = name.substr(0, dash);
        const std::string b = name.substr(dash + 1, dot - dash - 1);
        const std::string lang = name.substr(last_dot + 1);
        if (lang != a && lang != b) continue;
        std::vector<std::string> lines = read_lines(entry.path().string());
        if (bpe)
            for (auto& line : lines) line = join(bpe->encode_line(line), " ");
        det.add_corpus(lang, lines);
    }
    if (det.languages().empty()) throw IoError("no split files to profile in " + dir);
    return det;
}

// A model directory as written by `train` / `finetune-robt`: weights plus
// the vocabulary (and BPE merges when the pipeline uses subwords).
struct LoadedModel {
    Vocab vocab;
    TransformerModel<double> model;
    ckpt::Checkpoint checkpoint;
    std::string weights_path;
    std::optional<BpeLite> bpe;

    const BpeLite* bpe_ptr() const { return bpe ? &*bpe : nullptr; }
};

// `prefer_checkpoint` picks the newest raw checkpoint (which carries
// optimizer state) over the averaged deploy artifact — what finetuning
// wants; inference prefers the averaged weights.
LoadedModel load_model_dir(const std::string& dir, bool prefer_checkpoint) {
    if (!std::filesystem::is_directory(dir)) throw IoError("not a model directory: " + dir);

    std::string newest_numeric;
    std::uint64_t newest_step = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("ckpt_", 0) != 0 || name.size() <= 9 ||
            name.compare(name.size() - 4, 4, ".bin") != 0)
            continue;
        const std::string middle = name.substr(5, name.size() - 9);
        if (middle.empty() || middle.find_first_not_of("0123456789") != std::string::npos)
            continue;
        const std::uint64_t step = std::stoull(middle);
        if (newest_numeric.empty() || step > newest_step) {
            newest_numeric = entry.path().string();
            newest_step = step;
        }
    }
    const std::string robt_final = dir + "/ckpt_robt_final.bin";
    const std::string averaged = dir + "/model.bin";

    std::vector<std::string> order;
    if (prefer_checkpoint)
        order = {robt_final, newest_numeric, averaged};
    else
        order = {averaged, robt_final, newest_numeric};
    std::string weights;
    for (const auto& cand : order)
        if (!cand.empty() && std::filesystem::exists(cand)) {
            weights = cand;
            break;
        }
    if (weights.empty()) throw IoError("no model weights (model.bin or ckpt_*.bin) in " + dir);

    ckpt::Checkpoint c = ckpt::load(weights);
    LoadedModel lm{Vocab::load(dir + "/vocab.txt"), ckpt::restore_model<double>(c), std::move(c),
                   weights, std::nullopt};
    const std::string merges = dir + "/bpe.merges";
    if (std::filesystem::exists(merges)) lm.bpe = BpeLite::load(merges);
    return lm;
}

struct Route {
    BeamConfig beam;
    bool greedy = false;
    bool pivot = false;
    std::string pivot_lang = "en";
};

// One sentence through the requested decoding path, text to text.
// Whitespace-only input maps to an empty line so file alignment survives.
std::string translate_one(const TransformerModel<double>& model, const Vocab& vocab,
                          const BpeLite* bpe, const std::string& line, const std::string& src_lang,
                          const std::string& tgt_lang, const Route& route) {
    const std::vector<std::string> toks = bpe ? bpe->encode_line(line) : split_ws(line);
    if (toks.empty()) return "";
    const std::vector<int> ids = vocab.encode(toks);
    std::vector<int> out;
    if (route.pivot) {
        BeamConfig cfg = route.beam;
        if (route.greedy) cfg.beam_size = 1;
        out = pivot_translate(model, ids, src_lang, tgt_lang, route.pivot_lang, cfg);
    } else if (route.greedy) {
        out = greedy_translate(model, ids, tgt_lang, route.beam.max_len, route.beam.min_len);
    } else {
        out = beam_translate(model, ids, tgt_lang, route.beam);
    }
    const std::vector<std::string> words = vocab.decode(out);
    return bpe ? BpeLite::decode_tokens(words) : join(words, " ");
}

// Both directions of every pair in a split; a direction is zero-shot when
// neither side is the hub language.
std::vector<EvalDirection> directions_from_dir(const std::string& dir, const std::string& split,
                                               const std::string& hub_lang, bool zero_shot_only) {
    std::vector<EvalDirection> dirs;
    for (const auto& [a, b] : discover_split_pairs(dir, split)) {
        const bool zero_shot = a != hub_lang && b != hub_lang;
        if (zero_shot_only && !zero_shot) continue;
        const std::vector<TextPair> rows = load_split(dir, a, b, split);
        if (rows.empty()) continue;
        for (const bool forward : {true, false}) {
            EvalDirection d;
            d.src_lang = forward ? a : b;
            d.tgt_lang = forward ? b : a;
            for (const auto& [sa, sb] : rows) {
                d.src_text.push_back(forward ? sa : sb);
                d.ref_text.push_back(forward ? sb : sa);
            }
            d.zero_shot = zero_shot;
            dirs.push_back(std::move(d));
        }
    }
    return dirs;
}

// Evaluation loop in raw text space: hypotheses come out of translate_one
// (which undoes BPE), so the detector and BLEU see ordinary words.
EvalReport evaluate_with_routing(const LoadedModel& lm, const std::vector<EvalDirection>& dirs,
                                 const VocabDetector& det, const EvalOptions& opt) {
    EvalReport report;
    for (const auto& dir : dirs) {
        if (dir.src_text.size() != dir.ref_text.size())
            throw EvalError("direction " + dir.src_lang + "-" + dir.tgt_lang +
                            ": source/reference misaligned");
        Route route;
        route.beam = opt.beam;
        route.greedy = opt.greedy;
        route.pivot = opt.pivot && dir.zero_shot;
        route.pivot_lang = opt.pivot_lang;
        std::vector<std::string> hyps;
        hyps.reserve(dir.src_text.size());
        for (const auto& line : dir.src_text)
            hyps.push_back(translate_one(lm.model, lm.vocab, lm.bpe_ptr(), line, dir.src_lang,
                                         dir.tgt_lang, route));
        DirectionResult r;
        r.src = dir.src_lang;
        r.tgt = dir.tgt_lang;
        r.n_sentences = dir.src_text.size();
        r.zero_shot = dir.zero_shot;
        r.bleu = bleu_corpus(hyps, dir.ref_text);
        r.language_accuracy = language_accuracy(det, hyps, dir.tgt_lang);
        report.directions.push_back(r);
    }
    report.aggregate();
    return report;
}

// Rebuilds a report from the key-value record `evaluate` writes — enough
// for win-ratio comparisons against an earlier run.
EvalReport report_from_kv(const kv::Map& m) {
    EvalReport report;
    for (const auto& [key, value] : m) {
        if (key.rfind("dir.", 0) != 0 || key.size() < 10) continue;
        if (key.compare(key.size() - 5, 5, ".bleu") != 0) continue;
        const std::string name = key.substr(4, key.size() - 9);
        const std::size_t dash = name.find('-');
        if (dash == std::string::npos) continue;
        DirectionResult r;
        r.src = name.substr(0, dash);
        r.tgt = name.substr(dash + 1);
        parse_config_value(key, value, r.bleu);
        parse_config_value(key, kv::get_or(m, "dir." + name + ".acc", "0"), r.language_accuracy);
        parse_config_value(key, kv::get_or(m, "dir." + name + ".n", "0"), r.n_sentences);
        r.zero_shot = kv::get_or(m, "dir." + name + ".zero_shot", "0") == "1";
        report.directions.push_back(std::move(r));
    }
    if (report.directions.empty()) throw EvalError("report holds no dir.<src>-<tgt>.bleu keys");
    report.aggregate();
    return report;
}

std::vector<std::string> read_input_lines(const std::string& path) {
    if (path == "-") {
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(std::cin, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            lines.push_back(line);
        }
        return lines;
    }
    return read_lines(path);
}

// Sorted synthetic language codes for accounting configurations that
// never touch real data.
std::vector<std::string> placeholder_langs(std::size_t n) {
    std::vector<std::string> langs;
    for (std::size_t i = 0; i < n; ++i) langs.push_back("l" + std::to_string(i));
    std::sort(langs.begin(), langs.end());
    return langs;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"zsnmt: multilingual translation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed_flag = 0;
    bool seed_set = false;
    app.add_option("--seed", seed_flag, "base RNG seed (overrides ZSNMT_SEED)")
        ->each([&seed_set](const std::string&) { seed_set = true; });
    std::string config_path;
    app.add_option("--config", config_path, "key-value file supplying defaults for unset flags");

    ConfigLayer layer;

    auto* version = app.add_subcommand("version", "print toolkit version");

    // ---- param-count ----
    auto* pc = app.add_subcommand("param-count", "closed-form parameter accounting");
    std::size_t pc_d = 512, pc_langs = 100, pc_layers = 6, pc_ffn = 0, pc_vocab = 0;
    bool pc_laln = false, pc_lalt = false;
    layer.bind(pc->add_option("--d", pc_d, "model width"), "model.d_model", pc_d);
    layer.bind(pc->add_option("--languages", pc_langs, "target language count"),
               "model.language_count", pc_langs);
    layer.bind(pc->add_option("--layers", pc_layers, "encoder/decoder depth"), "model.layers",
               pc_layers);
    layer.bind(pc->add_option("--ffn", pc_ffn, "feedforward width (default 4*d)"), "model.ffn_dim",
               pc_ffn);
    layer.bind(pc->add_option("--vocab", pc_vocab, "vocabulary size (default: minimum legal)"),
               "model.vocab_size", pc_vocab);
    layer.bind(pc->add_flag("--laln,!--no-laln", pc_laln, "per-language norm parameters"),
               "model.use_laln", pc_laln);
    layer.bind(pc->add_flag("--lalt,!--no-lalt", pc_lalt, "per-language encoder-decoder bridge"),
               "model.use_lalt", pc_lalt);

    // ---- gen-synthetic ----
    auto* gs = app.add_subcommand("gen-synthetic", "write a cipher-language benchmark suite");
    std::string gs_out;
    SyntheticConfig gs_cfg;
    gs->add_option("--out", gs_out, "output directory")->required();
    layer.bind(gs->add_option("--languages", gs_cfg.languages, "total languages incl. English"),
               "suite.language_count", gs_cfg.languages);
    layer.bind(gs->add_option("--concepts", gs_cfg.concepts, "shared concept vocabulary size"),
               "suite.concepts", gs_cfg.concepts);
    layer.bind(gs->add_option("--train", gs_cfg.train_per_pair, "train pairs per direction"),
               "suite.train_per_pair", gs_cfg.train_per_pair);
    layer.bind(gs->add_option("--valid", gs_cfg.valid_per_pair, "valid pairs per direction"),
               "suite.valid_per_pair", gs_cfg.valid_per_pair);
    layer.bind(gs->add_option("--test", gs_cfg.test_per_pair, "test pairs per direction"),
               "suite.test_per_pair", gs_cfg.test_per_pair);
    layer.bind(gs->add_option("--len-lo", gs_cfg.len_lo, "shortest sentence length"),
               "suite.len_lo", gs_cfg.len_lo);
    layer.bind(gs->add_option("--len-hi", gs_cfg.len_hi, "longest sentence length"),
               "suite.len_hi", gs_cfg.len_hi);
    layer.bind(gs->add_flag("--reorder,!--no-reorder", gs_cfg.reorder,
                            "swap adjacent tokens in every second non-English language"),
               "suite.reorder", gs_cfg.reorder);
    auto* gs_seed_opt = gs->add_option("--suite-seed", gs_cfg.seed, "suite RNG seed");
    layer.bind(gs_seed_opt, "suite.seed", gs_cfg.seed);

    // ---- sample-corpus ----
    auto* sc = app.add_subcommand("sample-corpus", "split raw pair files with overlap filtering");
    std::string sc_raw, sc_out;
    SampleConfig sc_cfg;
    layer.bind(sc->add_option("--raw", sc_raw, "directory of <a>-<b>.<lang> files"),
               "sampler.raw_dir", sc_raw);
    sc->add_option("--out", sc_out, "output directory")->required();
    layer.bind(sc->add_option("--cap-train", sc_cfg.cap_train, "per-pair training cap"),
               "sampler.cap_train", sc_cfg.cap_train);
    layer.bind(sc->add_option("--n-valid", sc_cfg.n_valid, "validation sentences per pair"),
               "sampler.n_valid", sc_cfg.n_valid);
    layer.bind(sc->add_option("--n-test", sc_cfg.n_test, "test sentences per pair"),
               "sampler.n_test", sc_cfg.n_test);
    auto* sc_seed_opt = sc->add_option("--sample-seed", sc_cfg.seed, "sampler RNG seed");
    layer.bind(sc_seed_opt, "sampler.seed", sc_cfg.seed);

    // ---- build-vocab ----
    auto* bv = app.add_subcommand("build-vocab", "token table (and optional BPE) from a corpus");
    std::string bv_data, bv_out;
    std::size_t bv_max = 0, bv_merges = 0;
    layer.bind(bv->add_option("--data", bv_data, "split directory with train files"),
               "vocab.data_dir", bv_data);
    bv->add_option("--out", bv_out, "output directory")->required();
    layer.bind(bv->add_option("--max-size", bv_max, "vocabulary cap (0 = unlimited)"),
               "vocab.max_size", bv_max);
    layer.bind(bv->add_option("--bpe-merges", bv_merges, "BPE merges to learn (0 = word level)"),
               "vocab.bpe_merges", bv_merges);

    // ---- train ----
    auto* tr = app.add_subcommand("train", "train a tagged multilingual model");
    std::string tr_data, tr_vocab, tr_out, tr_bpe;
    ModelConfig tr_model;
    tr_model.d_model = 64;
    tr_model.ffn_dim = 0;  // 0 resolves to 4*d below
    tr_model.heads = 4;
    tr_model.layers = 2;
    TrainConfig tr_train;
    layer.bind(tr->add_option("--data", tr_data, "split directory with train files"),
               "train.data_dir", tr_data);
    layer.bind(tr->add_option("--vocab", tr_vocab, "vocabulary file"), "train.vocab_path",
               tr_vocab);
    tr->add_option("--out", tr_out, "output directory")->required();
    layer.bind(tr->add_option("--bpe", tr_bpe, "BPE merges file (text is split to subwords)"),
               "train.bpe_path", tr_bpe);
    layer.bind(tr->add_option("--d", tr_model.d_model, "model width"), "model.d_model",
               tr_model.d_model);
    layer.bind(tr->add_option("--ffn", tr_model.ffn_dim, "feedforward width (default 4*d)"),
               "model.ffn_dim", tr_model.ffn_dim);
    layer.bind(tr->add_option("--heads", tr_model.heads, "attention heads"), "model.heads",
               tr_model.heads);
    layer.bind(tr->add_option("--layers", tr_model.layers, "encoder/decoder depth"),
               "model.layers", tr_model.layers);
    layer.bind(tr->add_flag("--laln,!--no-laln", tr_model.use_laln,
                            "language-aware layer normalization"),
               "model.use_laln", tr_model.use_laln);
    layer.bind(tr->add_flag("--lalt,!--no-lalt", tr_model.use_lalt,
                            "language-aware encoder-decoder bridge"),
               "model.use_lalt", tr_model.use_lalt);
    layer.bind(tr->add_option("--dropout", tr_model.dropout, "residual/embedding dropout"),
               "model.dropout", tr_model.dropout);
    layer.bind(tr->add_option("--attn-dropout", tr_model.attn_dropout, "attention dropout"),
               "model.attn_dropout", tr_model.attn_dropout);
    layer.bind(tr->add_option("--max-steps", tr_train.max_steps, "optimizer steps"),
               "train.max_steps", tr_train.max_steps);
    layer.bind(
        tr->add_option("--batch-tokens", tr_train.batch_tokens, "target-token budget per batch"),
        "train.batch_tokens", tr_train.batch_tokens);
    layer.bind(tr->add_option("--label-smoothing", tr_train.label_smoothing, "label smoothing"),
               "train.label_smoothing", tr_train.label_smoothing);
    layer.bind(tr->add_option("--warmup", tr_train.warmup_steps, "learning-rate warmup steps"),
               "train.warmup_steps", tr_train.warmup_steps);
    layer.bind(tr->add_option("--lr-scale", tr_train.lr_scale, "learning-rate scale"),
               "train.lr_scale", tr_train.lr_scale);
    layer.bind(tr->add_option("--clip-norm", tr_train.clip_norm, "gradient clipping norm"),
               "train.clip_norm", tr_train.clip_norm);
    layer.bind(tr->add_option("--checkpoint-every", tr_train.checkpoint_every,
                              "steps between checkpoints"),
               "train.checkpoint_every", tr_train.checkpoint_every);
    layer.bind(tr->add_option("--average-last", tr_train.average_last,
                              "checkpoints averaged into model.bin"),
               "train.average_last", tr_train.average_last);
    layer.bind(tr->add_option("--log-every", tr_train.log_every, "steps between log lines"),
               "train.log_every", tr_train.log_every);
    layer.bind_key("model.seed", tr_model.seed);
    layer.bind_key("train.seed", tr_train.seed);

    // ---- finetune-robt ----
    auto* ft = app.add_subcommand("finetune-robt", "random online backtranslation finetuning");
    std::string ft_model, ft_data, ft_out, ft_eval_data, ft_hub = "en";
    RobtConfig ft_cfg;
    std::size_t ft_eval_max_len = 32;
    layer.bind(ft->add_option("--model", ft_model, "model directory (from `train`)"),
               "robt.model_dir", ft_model);
    layer.bind(ft->add_option("--data", ft_data, "split directory with train files"),
               "robt.data_dir", ft_data);
    ft->add_option("--out", ft_out, "output directory")->required();
    layer.bind(ft->add_option("--eval-data", ft_eval_data,
                              "split directory scanned for zero-shot valid pairs (enables the "
                              "convergence guard)"),
               "robt.eval_data", ft_eval_data);
    layer.bind(ft->add_option("--hub", ft_hub, "supervised hub language"), "robt.hub", ft_hub);
    layer.bind(ft->add_option("--max-steps", ft_cfg.max_steps, "finetune steps (0 = no-op)"),
               "robt.max_steps", ft_cfg.max_steps);
    layer.bind(ft->add_option("--batch-size", ft_cfg.batch_size,
                              "original instances per step (doubled by augmentation)"),
               "robt.batch_size", ft_cfg.batch_size);
    layer.bind(ft->add_option("--t-robt", ft_cfg.t_robt,
                              "intermediate-language sampling set (default: all model languages)")
                   ->delimiter(','),
               "robt.t_robt", ft_cfg.t_robt);
    layer.bind(ft->add_option("--eval-every", ft_cfg.eval_every,
                              "steps between convergence checks (0 = off)"),
               "robt.eval_every", ft_cfg.eval_every);
    layer.bind(ft->add_option("--plateau-points", ft_cfg.plateau_points,
                              "accuracy points that count as progress"),
               "robt.plateau_points", ft_cfg.plateau_points);
    layer.bind(
        ft->add_option("--plateau-evals", ft_cfg.plateau_evals, "stale evals before stopping"),
        "robt.plateau_evals", ft_cfg.plateau_evals);
    layer.bind(ft->add_option("--eval-max-len", ft_eval_max_len,
                              "decode cap for convergence checks"),
               "robt.eval_max_len", ft_eval_max_len);
    layer.bind(ft->add_option("--label-smoothing", ft_cfg.sched.label_smoothing,
                              "label smoothing"),
               "train.label_smoothing", ft_cfg.sched.label_smoothing);
    layer.bind(ft->add_option("--warmup", ft_cfg.sched.warmup_steps, "learning-rate warmup steps"),
               "train.warmup_steps", ft_cfg.sched.warmup_steps);
    layer.bind(ft->add_option("--lr-scale", ft_cfg.sched.lr_scale, "learning-rate scale"),
               "train.lr_scale", ft_cfg.sched.lr_scale);
    layer.bind(ft->add_option("--clip-norm", ft_cfg.sched.clip_norm, "gradient clipping norm"),
               "train.clip_norm", ft_cfg.sched.clip_norm);
    auto* ft_seed_opt = ft->add_option("--robt-seed", ft_cfg.seed, "backtranslation RNG seed");
    layer.bind(ft_seed_opt, "robt.seed", ft_cfg.seed);

    // ---- translate ----
    auto* tl = app.add_subcommand("translate", "translate one sentence per line");
    std::string tl_model, tl_src, tl_tgt, tl_input = "-", tl_output = "-", tl_pivot_lang = "en";
    std::size_t tl_beam = 4, tl_max_len = 64, tl_min_len = 0;
    double tl_len_penalty = 0.6;
    bool tl_greedy = false, tl_pivot = false;
    layer.bind(tl->add_option("--model", tl_model, "model directory"), "translate.model",
               tl_model);
    layer.bind(tl->add_option("--src", tl_src, "source language"), "translate.src", tl_src);
    layer.bind(tl->add_option("--tgt", tl_tgt, "target language"), "translate.tgt", tl_tgt);
    layer.bind(tl->add_option("--input", tl_input, "input file ('-' = stdin)"), "translate.input",
               tl_input);
    tl->add_option("--output", tl_output, "output file ('-' = stdout)");
    layer.bind(tl->add_option("--beam", tl_beam, "beam size"), "translate.beam", tl_beam);
    layer.bind(tl->add_flag("--greedy,!--no-greedy", tl_greedy, "greedy decoding"),
               "translate.greedy", tl_greedy);
    layer.bind(tl->add_flag("--pivot,!--no-pivot", tl_pivot,
                            "two-hop translation through the pivot language"),
               "translate.pivot", tl_pivot);
    layer.bind(tl->add_option("--pivot-lang", tl_pivot_lang, "pivot language"),
               "translate.pivot_lang", tl_pivot_lang);
    layer.bind(tl->add_option("--max-len", tl_max_len, "decode length cap"), "translate.max_len",
               tl_max_len);
    layer.bind(tl->add_option("--min-len", tl_min_len, "EOS masked before this many tokens"),
               "translate.min_len", tl_min_len);
    layer.bind(tl->add_option("--len-penalty", tl_len_penalty, "beam length penalty alpha"),
               "translate.len_penalty", tl_len_penalty);

    // ---- evaluate ----
    auto* ev = app.add_subcommand("evaluate", "score a model over every direction in a corpus");
    std::string ev_model, ev_data, ev_out, ev_split = "test", ev_pivot_lang = "en", ev_wr_against;
    std::size_t ev_beam = 4, ev_max_len = 64;
    double ev_len_penalty = 0.6;
    bool ev_greedy = false, ev_pivot = false;
    layer.bind(ev->add_option("--model", ev_model, "model directory"), "evaluate.model", ev_model);
    layer.bind(ev->add_option("--data", ev_data, "split directory"), "evaluate.data", ev_data);
    ev->add_option("--out", ev_out, "output directory")->required();
    ev->add_option("--wr-against", ev_wr_against,
                   "earlier report.kv; records this run's win ratio against it");
    layer.bind(ev->add_option("--split", ev_split, "which split to score"), "evaluate.split",
               ev_split);
    layer.bind(ev->add_option("--beam", ev_beam, "beam size"), "evaluate.beam", ev_beam);
    layer.bind(ev->add_flag("--greedy,!--no-greedy", ev_greedy, "greedy decoding"),
               "evaluate.greedy", ev_greedy);
    layer.bind(ev->add_flag("--pivot,!--no-pivot", ev_pivot,
                            "route zero-shot directions through the pivot language"),
               "evaluate.pivot", ev_pivot);
    layer.bind(ev->add_option("--pivot-lang", ev_pivot_lang,
                              "pivot/hub language (marks zero-shot directions)"),
               "evaluate.pivot_lang", ev_pivot_lang);
    layer.bind(ev->add_option("--max-len", ev_max_len, "decode length cap"), "evaluate.max_len",
               ev_max_len);
    layer.bind(ev->add_option("--len-penalty", ev_len_penalty, "beam length penalty alpha"),
               "evaluate.len_penalty", ev_len_penalty);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: " << e.what() << "\n";
        std::cerr << "run with --help for usage\n";
        return 2;
    }

    try {
        if (!config_path.empty()) layer.load(config_path);
        layer.apply();
        const std::uint64_t seed = resolve_seed(seed_flag, seed_set);

        if (version->parsed()) {
            std::cout << kToolVersion << "\n";
            return 0;
        }

        if (pc->parsed()) {
            ModelConfig cfg;
            cfg.d_model = pc_d;
            cfg.layers = pc_layers;
            cfg.heads = 1;
            cfg.ffn_dim = pc_ffn ? pc_ffn : 4 * pc_d;
            cfg.languages = placeholder_langs(pc_langs);
            cfg.vocab_size =
                pc_vocab ? pc_vocab : static_cast<std::size_t>(kNumReserved) + pc_langs;
            cfg.use_laln = pc_laln;
            cfg.use_lalt = pc_lalt;
            cfg.validate();
            const auto counts = analytic_param_counts(cfg);
            auto row = [](const std::string& k, const std::string& v) {
                std::cout << k << std::string(k.size() < 14 ? 14 - k.size() : 1, ' ') << v << "\n";
            };
            row("d_model", std::to_string(cfg.d_model));
            row("languages", std::to_string(cfg.languages.size()));
            row("layers", std::to_string(cfg.layers));
            row("ffn_dim", std::to_string(cfg.ffn_dim));
            row("vocab_size", std::to_string(cfg.vocab_size));
            row("norm_sites", std::to_string(cfg.norm_sites()));
            for (const char* comp : {"embedding", "encoder", "decoder", "output", "laln", "lalt"})
                row(comp, with_commas(counts.at(comp)));
            row("laln_delta", with_commas(laln_param_delta(cfg)));
            row("lalt_delta", with_commas(lalt_param_delta(cfg)));
            row("total", with_commas(counts.at("total")));
            return 0;
        }

        if (gs->parsed()) {
            if (gs_seed_opt->count() == 0 && !layer.has("suite.seed"))
                gs_cfg.seed = derive_seed(seed, "suite");
            SyntheticSuite suite(gs_cfg);
            suite.write(gs_out);
            finish_manifest(gs_out, "gen-synthetic", seed, config_path);
            std::cout << "wrote " << suite.supervised().size() << " supervised and "
                      << suite.zero_shot().size() << " zero-shot pairs to " << gs_out << "\n";
            return 0;
        }

        if (sc->parsed()) {
            require_flag(sc_raw, "--raw");
            if (sc_seed_opt->count() == 0 && !layer.has("sampler.seed"))
                sc_cfg.seed = derive_seed(seed, "sampler");
            const std::vector<RawPair> raw = discover_raw_pairs(sc_raw);
            if (raw.empty()) throw IoError("no <a>-<b>.<lang> pair files found in " + sc_raw);
            const SampleResult res = sample_corpus(raw, sc_cfg);
            write_sampled_pairs(sc_out, res, sc_cfg);
            kv::Map extra;
            kv::set(extra, "sampler.raw_dir", sc_raw);
            finish_manifest(sc_out, "sample-corpus", seed, config_path, extra);
            std::cout << "kept " << res.stats.pairs_kept << "/" << res.stats.pairs_in << " pairs ("
                      << res.stats.filtered_train << " train / " << res.stats.filtered_heldout
                      << " heldout candidates filtered)";
            if (!res.stats.dropped.empty())
                std::cout << "; dropped: " << join(res.stats.dropped, ",");
            std::cout << "\n";
            for (const auto& w : res.stats.warnings) std::cerr << "warning: " << w << "\n";
            return 0;
        }

        if (bv->parsed()) {
            require_flag(bv_data, "--data");
            const auto pairs = discover_split_pairs(bv_data, "train");
            if (pairs.empty()) throw IoError("no <a>-<b>.train.<lang> files found in " + bv_data);
            std::vector<std::string> langs;
            for (const auto& [a, b] : pairs) {
                langs.push_back(a);
                langs.push_back(b);
            }
            std::sort(langs.begin(), langs.end());
            langs.erase(std::unique(langs.begin(), langs.end()), langs.end());
            std::vector<std::string> lines;
            for (const auto& [a, b] : pairs)
                append_text_lines(lines, load_split(bv_data, a, b, "train"));

            std::filesystem::create_directories(bv_out);
            kv::Map extra;
            kv::set(extra, "vocab.data_dir", bv_data);
            if (bv_merges > 0) {
                const BpeLite bpe = BpeLite::learn(lines, bv_merges);
                bpe.save(bv_out + "/bpe.merges");
                for (auto& line : lines) line = join(bpe.encode_line(line), " ");
            }
            kv::set(extra, "vocab.bpe_merges", std::to_string(bv_merges));
            const Vocab vocab = Vocab::build(lines, langs, bv_max);
            vocab.save(bv_out + "/vocab.txt");
            kv::set(extra, "vocab.size", std::to_string(vocab.size()));
            kv::set(extra, "vocab.languages", join(langs, ","));
            kv::set(extra, "vocab.max_size", std::to_string(bv_max));
            finish_manifest(bv_out, "build-vocab", seed, config_path, extra);
            std::cout << "vocab of " << vocab.size() << " tokens over " << langs.size()
                      << " languages -> " << bv_out << "/vocab.txt\n";
            return 0;
        }

        if (tr->parsed()) {
            require_flag(tr_data, "--data");
            require_flag(tr_vocab, "--vocab");
            const Vocab vocab = Vocab::load(tr_vocab);
            if (vocab.languages().empty())
                throw ConfigError("vocabulary " + tr_vocab + " carries no language tags");
            std::optional<BpeLite> bpe;
            if (!tr_bpe.empty()) bpe = BpeLite::load(tr_bpe);
            const std::vector<TrainInstance> data =
                load_train_instances(tr_data, vocab, bpe ? &*bpe : nullptr);

            tr_model.vocab_size = vocab.size();
            tr_model.languages = vocab.languages();
            if (tr_model.ffn_dim == 0) tr_model.ffn_dim = 4 * tr_model.d_model;
            if (!layer.has("model.seed")) tr_model.seed = derive_seed(seed, "model");
            if (!layer.has("train.seed")) tr_train.seed = derive_seed(seed, "train");
            TransformerModel<double> model(tr_model);
            Adam<double> opt;
            const std::vector<std::string> ckpts = train_loop(model, opt, data, tr_train, tr_out);

            const ckpt::Checkpoint averaged =
                average_last_checkpoints(ckpts, tr_train.average_last);
            ckpt::save(tr_out + "/model.bin", averaged);
            vocab.save(tr_out + "/vocab.txt");
            if (bpe) bpe->save(tr_out + "/bpe.merges");
            kv::Map extra;
            kv::set(extra, "train.data_dir", tr_data);
            kv::set(extra, "train.vocab_path", tr_vocab);
            if (!tr_bpe.empty()) kv::set(extra, "train.bpe_path", tr_bpe);
            kv::set(extra, "train.checkpoints", std::to_string(ckpts.size()));
            kv::set(extra, "train.averaged",
                    std::to_string(std::min(tr_train.average_last, ckpts.size())));
            finish_manifest(tr_out, "train", seed, config_path, extra);
            std::cout << "trained " << opt.step_count() << " steps over " << data.size()
                      << " instances; model.bin averages the last "
                      << std::min(tr_train.average_last, ckpts.size()) << " checkpoint(s)\n";
            return 0;
        }

        if (ft->parsed()) {
            require_flag(ft_model, "--model");
            require_flag(ft_data, "--data");
            LoadedModel lm = load_model_dir(ft_model, /*prefer_checkpoint=*/true);
            const std::vector<TrainInstance> data =
                load_train_instances(ft_data, lm.vocab, lm.bpe_ptr());
            Adam<double> opt;
            opt.restore_from(lm.checkpoint);

            if (ft_cfg.t_robt.empty()) ft_cfg.t_robt = lm.model.config().languages;
            if (ft_seed_opt->count() == 0 && !layer.has("robt.seed"))
                ft_cfg.seed = derive_seed(seed, "robt");
            if (!layer.has("train.seed")) ft_cfg.sched.seed = derive_seed(seed, "train");

            RobtEvalHook hook = nullptr;
            VocabDetector det;
            std::vector<EvalDirection> zs_dirs;
            EvalOptions eopt;
            if (!ft_eval_data.empty()) {
                det = detector_from_dir(ft_eval_data, lm.bpe_ptr());
                zs_dirs = directions_from_dir(ft_eval_data, "valid", ft_hub,
                                              /*zero_shot_only=*/true);
                if (zs_dirs.empty())
                    throw UsageError("--eval-data holds no zero-shot valid pairs (both sides "
                                     "non-" +
                                     ft_hub + ")");
                if (lm.bpe)
                    for (auto& d : zs_dirs)
                        for (auto* side : {&d.src_text, &d.ref_text})
                            for (auto& line : *side) line = join(lm.bpe->encode_line(line), " ");
                eopt.greedy = true;
                eopt.beam.max_len = ft_eval_max_len;
                hook = [&lm, &det, &zs_dirs, &eopt](std::uint64_t) {
                    const EvalReport r = evaluate_directions(lm.model, lm.vocab, zs_dirs, det, eopt);
                    return std::make_pair(r.acc_zero, r.bleu_zero);
                };
            }

            const RobtResult res = robt_finetune(lm.model, opt, data, ft_cfg, ft_out, hook);

            ckpt::save(ft_out + "/model.bin", ckpt::from_model(lm.model, opt.step_count()));
            lm.vocab.save(ft_out + "/vocab.txt");
            if (lm.bpe) lm.bpe->save(ft_out + "/bpe.merges");
            kv::Map extra;
            kv::set(extra, "robt.model_dir", ft_model);
            kv::set(extra, "robt.data_dir", ft_data);
            if (!ft_eval_data.empty()) kv::set(extra, "robt.eval_data", ft_eval_data);
            kv::set(extra, "robt.hub", ft_hub);
            kv::set(extra, "robt.eval_max_len", std::to_string(ft_eval_max_len));
            kv::set(extra, "robt.init", lm.weights_path);
            kv::set(extra, "robt.steps_run", std::to_string(res.steps_run));
            kv::set(extra, "robt.converged", res.converged ? "1" : "0");
            kv::set(extra, "robt.empty_backtranslations",
                    std::to_string(res.empty_backtranslations));
            finish_manifest(ft_out, "finetune-robt", seed, config_path, extra);
            std::cout << "ROBT ran " << res.steps_run << " steps"
                      << (res.converged ? " (converged)" : "") << "; "
                      << res.empty_backtranslations << " empty backtranslation(s)";
            if (!res.evals.empty())
                std::cout << "; final zero-shot acc=" << res.evals.back().acc_zero
                          << " bleu=" << res.evals.back().bleu_zero;
            std::cout << "\n";
            return 0;
        }

        if (tl->parsed()) {
            require_flag(tl_model, "--model");
            require_flag(tl_src, "--src");
            require_flag(tl_tgt, "--tgt");
            const LoadedModel lm = load_model_dir(tl_model, /*prefer_checkpoint=*/false);
            if (!lm.vocab.has_lang(tl_src))
                throw LanguageError("source language '" + tl_src + "' not in the vocabulary");
            if (!lm.vocab.has_lang(tl_tgt))
                throw LanguageError("target language '" + tl_tgt + "' not in the vocabulary");
            Route route;
            route.beam.beam_size = tl_beam;
            route.beam.length_penalty = tl_len_penalty;
            route.beam.max_len = tl_max_len;
            route.beam.min_len = tl_min_len;
            route.beam.validate();
            route.greedy = tl_greedy;
            route.pivot = tl_pivot;
            route.pivot_lang = tl_pivot_lang;

            const std::vector<std::string> input = read_input_lines(tl_input);
            std::vector<std::string> output;
            output.reserve(input.size());
            for (const auto& line : input)
                output.push_back(
                    translate_one(lm.model, lm.vocab, lm.bpe_ptr(), line, tl_src, tl_tgt, route));
            if (tl_output == "-") {
                for (const auto& line : output) std::cout << line << "\n";
            } else {
                write_lines(tl_output, output);
                kv::Map m;
                kv::set(m, "run.subcommand", "translate");
                kv::set(m, "run.seed", std::to_string(seed));
                kv::set(m, "run.config", config_path.empty() ? "-" : config_path);
                kv::set(m, "run.version", kToolVersion);
                kv::set(m, "translate.model", tl_model);
                kv::set(m, "translate.src", tl_src);
                kv::set(m, "translate.tgt", tl_tgt);
                kv::set(m, "translate.input", tl_input);
                kv::set(m, "translate.beam", std::to_string(tl_beam));
                kv::set(m, "translate.greedy", tl_greedy ? "1" : "0");
                kv::set(m, "translate.pivot", tl_pivot ? "1" : "0");
                kv::set(m, "translate.pivot_lang", tl_pivot_lang);
                kv::set(m, "translate.max_len", std::to_string(tl_max_len));
                kv::set(m, "translate.min_len", std::to_string(tl_min_len));
                kv::set(m, "translate.len_penalty", std::to_string(tl_len_penalty));
                kv::set(m, "translate.lines", std::to_string(output.size()));
                kv::write_file(tl_output + ".manifest.kv", m);
            }
            return 0;
        }

        if (ev->parsed()) {
            require_flag(ev_model, "--model");
            require_flag(ev_data, "--data");
            const LoadedModel lm = load_model_dir(ev_model, /*prefer_checkpoint=*/false);
            const std::vector<EvalDirection> dirs =
                directions_from_dir(ev_data, ev_split, ev_pivot_lang, /*zero_shot_only=*/false);
            if (dirs.empty()) throw IoError("no " + ev_split + " pairs found in " + ev_data);
            const VocabDetector det = detector_from_dir(ev_data);

            EvalOptions opt;
            opt.beam.beam_size = ev_beam;
            opt.beam.length_penalty = ev_len_penalty;
            opt.beam.max_len = ev_max_len;
            opt.beam.validate();
            opt.greedy = ev_greedy;
            opt.pivot = ev_pivot;
            opt.pivot_lang = ev_pivot_lang;

            const EvalReport report = lm.bpe
                                          ? evaluate_with_routing(lm, dirs, det, opt)
                                          : evaluate_directions(lm.model, lm.vocab, dirs, det, opt);

            std::filesystem::create_directories(ev_out);
            kv::Map record = report.to_kv();
            if (!ev_wr_against.empty()) {
                const EvalReport reference = report_from_kv(kv::parse_file(ev_wr_against));
                const double wr = win_ratio(report, reference);
                kv::set(record, "eval.win_ratio", std::to_string(wr));
                std::cout << "win ratio vs " << ev_wr_against << ": " << wr << "%\n";
            }
            kv::write_file(ev_out + "/report.kv", record);
            {
                std::ofstream txt(ev_out + "/report.txt");
                txt << report.table();
            }
            kv::Map extra;
            kv::set(extra, "evaluate.model", ev_model);
            kv::set(extra, "evaluate.data", ev_data);
            kv::set(extra, "evaluate.split", ev_split);
            kv::set(extra, "evaluate.beam", std::to_string(ev_beam));
            kv::set(extra, "evaluate.greedy", ev_greedy ? "1" : "0");
            kv::set(extra, "evaluate.pivot", ev_pivot ? "1" : "0");
            kv::set(extra, "evaluate.pivot_lang", ev_pivot_lang);
            kv::set(extra, "evaluate.max_len", std::to_string(ev_max_len));
            kv::set(extra, "evaluate.len_penalty", std::to_string(ev_len_penalty));
            finish_manifest(ev_out, "evaluate", seed, config_path, extra);
            std::cout << report.table();
            return 0;
        }

        throw UsageError("no subcommand dispatched");  // unreachable with require_subcommand
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
