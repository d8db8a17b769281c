// Random Online Backtranslation finetuning. Each step takes a batch of B
// original instances, samples an intermediate language t' != t per instance,
// backtranslates every target y into t' with batched greedy decoding against
// the live model (no dropout, no gradients, per-sentence cap 2|y|+8, at
// least one token so augmented sources are never empty), and optimizes the
// combined 2B-instance batch. The learning-rate schedule continues from the
// optimizer's pretrained step counter. The loop stops at max_steps or when
// zero-shot validation accuracy plateaus: no gain of at least
// `plateau_points` accuracy points over the best seen for `plateau_evals`
// consecutive evaluations.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "zsnmt/checkpoint.hpp"
#include "zsnmt/decode.hpp"
#include "zsnmt/eval.hpp"
#include "zsnmt/model.hpp"
#include "zsnmt/trainer.hpp"
#include "zsnmt/util.hpp"

namespace zsnmt {

struct RobtConfig {
    std::uint64_t max_steps = 1000;    // N; 0 leaves the model untouched
    std::size_t batch_size = 8;        // B original instances per step
    std::vector<std::string> t_robt;   // language set sampled for backtranslation
    std::uint64_t eval_every = 200;    // convergence checks; 0 disables them
    double plateau_points = 0.5;       // accuracy points (out of 100)
    std::size_t plateau_evals = 3;
    TrainConfig sched;                 // smoothing/schedule/clipping for the update
    std::uint64_t seed = 99;

    void validate() const {
        if (t_robt.size() < 2)
            throw ConfigError("ROBT needs a sampling set of at least two languages; got " +
                              std::to_string(t_robt.size()));
        if (batch_size < 1) throw ConfigError("ROBT batch size must be >= 1");
        sched.validate();
    }

    kv::Map to_kv() const {
        kv::Map m;
        kv::set(m, "robt.max_steps", std::to_string(max_steps));
        kv::set(m, "robt.batch_size", std::to_string(batch_size));
        kv::set(m, "robt.t_robt", join(t_robt, ","));
        kv::set(m, "robt.eval_every", std::to_string(eval_every));
        kv::set(m, "robt.plateau_points", std::to_string(plateau_points));
        kv::set(m, "robt.plateau_evals", std::to_string(plateau_evals));
        kv::set(m, "robt.seed", std::to_string(seed));
        return m;
    }
};

// Uniform over t_robt \ {t}. The current target may itself sit outside the
// sampling set (restricted-set mode), in which case all of t_robt is live.
inline std::string sample_intermediate(const std::string& t, const std::vector<std::string>& t_robt,
                                       Rng& rng) {
    if (t_robt.size() < 2)
        throw ConfigError("sample_intermediate: need at least two candidate languages");
    std::vector<const std::string*> candidates;
    for (const auto& lang : t_robt)
        if (lang != t) candidates.push_back(&lang);
    if (candidates.empty())
        throw ConfigError("sample_intermediate: no candidate distinct from '" + t + "'");
    return *candidates[rng.uniform_index(candidates.size())];
}

struct AugmentedInstance {
    TrainInstance instance;     // x' -> y tagged with the original t
    std::string intermediate;   // t'
};

// Batched greedy backtranslation of (y_k, t'_k) pairs. Decoding is
// inference-only: gradients off, no dropout. Sentences are capped at
// 2|y_k|+8 tokens and forced non-empty.
template <typename T>
std::vector<std::vector<int>> greedy_batch_backtranslate(
    const TransformerModel<T>& model,
    const std::vector<std::pair<std::vector<int>, std::string>>& targets) {
    std::vector<std::size_t> caps;
    caps.reserve(targets.size());
    std::size_t max_cap = 0;
    for (const auto& [y, _] : targets) {
        caps.push_back(2 * y.size() + 8);
        max_cap = std::max(max_cap, caps.back());
    }
    std::vector<std::vector<int>> outs =
        greedy_translate_batch(model, targets, max_cap, /*min_len=*/1, &caps);
    return outs;
}

// One augmented instance per original: t' sampled from t_robt \ {t}, then y
// backtranslated into t' in one batched greedy pass. Originals are never
// mutated; empty backtranslations (impossible under the min-length floor,
// kept as a guard) are skipped and counted.
template <typename T>
std::vector<AugmentedInstance> augment_batch(const TransformerModel<T>& model,
                                             const std::vector<TrainInstance>& originals,
                                             const std::vector<std::string>& t_robt,
                                             Rng& lang_rng,
                                             std::size_t* empty_count = nullptr) {
    std::vector<std::pair<std::vector<int>, std::string>> targets;
    targets.reserve(originals.size());
    for (const auto& inst : originals)
        targets.emplace_back(inst.tgt, sample_intermediate(inst.lang, t_robt, lang_rng));
    const std::vector<std::vector<int>> back = greedy_batch_backtranslate(model, targets);

    std::vector<AugmentedInstance> out;
    out.reserve(originals.size());
    for (std::size_t k = 0; k < originals.size(); ++k) {
        if (back[k].empty()) {
            if (empty_count) ++*empty_count;
            continue;
        }
        AugmentedInstance aug;
        aug.instance = TrainInstance{back[k], originals[k].tgt, originals[k].lang};
        aug.intermediate = targets[k].second;
        out.push_back(std::move(aug));
    }
    return out;
}

struct RobtEval {
    std::uint64_t step = 0;
    double acc_zero = 0.0;   // [0, 1]
    double bleu_zero = 0.0;  // [0, 100]
};

struct RobtResult {
    std::uint64_t steps_run = 0;
    bool converged = false;
    std::vector<RobtEval> evals;
    std::size_t empty_backtranslations = 0;
};

// The evaluation hook returns (zero-shot valid accuracy in [0,1], zero-shot
// valid BLEU); it sees the live model through its own captures.
using RobtEvalHook = std::function<std::pair<double, double>(std::uint64_t step)>;

template <typename T>
RobtResult robt_finetune(TransformerModel<T>& model, Adam<T>& opt,
                         std::vector<TrainInstance> data, const RobtConfig& rc,
                         const std::string& out_dir, const RobtEvalHook& eval_hook = nullptr) {
    RobtResult result;
    if (rc.max_steps == 0) return result;  // explicit no-op
    rc.validate();
    for (const auto& lang : rc.t_robt)
        if (std::find(model.config().languages.begin(), model.config().languages.end(), lang) ==
            model.config().languages.end())
            throw LanguageError("ROBT sampling language '" + lang + "' unknown to the model");
    if (data.empty()) throw SequenceError("robt_finetune: no training data");

    std::filesystem::create_directories(out_dir);
    kv::Map manifest = ckpt::model_config_to_kv(model.config());
    for (const auto& [k, v] : rc.sched.to_kv()) kv::set(manifest, k, v);
    for (const auto& [k, v] : rc.to_kv()) kv::set(manifest, k, v);
    kv::set(manifest, "robt.instances", std::to_string(data.size()));
    kv::write_file(out_dir + "/manifest.kv", manifest);
    const std::string log_path = out_dir + "/robt.log";
    const std::string curve_path = out_dir + "/convergence.tsv";

    Rng shuffle_rng(derive_seed(rc.seed, "robt-shuffle"));
    Rng lang_rng(derive_seed(rc.seed, "robt-lang"));
    Rng dropout_rng(derive_seed(rc.seed, "robt-dropout"));

    double best_acc = 0.0;
    std::size_t stale = 0;
    auto run_eval = [&](std::uint64_t step) -> bool {  // true = plateau reached
        const auto [acc, bleu] = eval_hook(step);
        result.evals.push_back(RobtEval{step, acc, bleu});
        append_convergence_point(curve_path, step, acc, bleu);
        append_line(log_path, "eval step=" + std::to_string(step) +
                                  " acc_zero=" + std::to_string(acc) +
                                  " bleu_zero=" + std::to_string(bleu));
        if (result.evals.size() == 1 || acc >= best_acc + rc.plateau_points / 100.0) {
            best_acc = std::max(best_acc, acc);
            stale = 0;
            return false;
        }
        best_acc = std::max(best_acc, acc);
        ++stale;
        return stale >= rc.plateau_evals;
    };
    if (eval_hook && rc.eval_every > 0) run_eval(opt.step_count());

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // forces an initial shuffle

    for (std::uint64_t step = 1; step <= rc.max_steps; ++step) {
        // Sample B originals (epoch-shuffled without replacement).
        std::vector<TrainInstance> batch;
        batch.reserve(2 * rc.batch_size);
        for (std::size_t k = 0; k < rc.batch_size; ++k) {
            if (cursor >= order.size()) {
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(data[order[cursor++]]);
        }

        const std::size_t empties_before = result.empty_backtranslations;
        const std::vector<AugmentedInstance> augmented =
            augment_batch(model, batch, rc.t_robt, lang_rng, &result.empty_backtranslations);
        if (result.empty_backtranslations != empties_before)
            append_line(log_path,
                        "empty backtranslation at step " + std::to_string(step) + " (skipped " +
                            std::to_string(result.empty_backtranslations - empties_before) + ")");
        for (const AugmentedInstance& aug : augmented) batch.push_back(aug.instance);

        const StepResult sr = train_step(model, opt, batch, rc.sched, dropout_rng);
        result.steps_run = step;
        if (rc.sched.log_every > 0 && step % rc.sched.log_every == 0)
            append_line(log_path, "step=" + std::to_string(opt.step_count()) +
                                      " loss=" + std::to_string(sr.loss) +
                                      " lr=" + std::to_string(sr.lr) +
                                      " grad_norm=" + std::to_string(sr.grad_norm) +
                                      " batch=" + std::to_string(batch.size()));

        if (eval_hook && rc.eval_every > 0 && step % rc.eval_every == 0) {
            if (run_eval(opt.step_count())) {
                result.converged = true;
                append_line(log_path, "converged: accuracy plateau after " +
                                          std::to_string(result.evals.size()) + " evaluations");
                break;
            }
        }
    }

    ckpt::Checkpoint final_ckpt = ckpt::from_model(model, opt.step_count(), rc.sched.to_kv());
    opt.append_to(final_ckpt, model.params());
    ckpt::save(out_dir + "/ckpt_robt_final.bin", final_ckpt);
    return result;
}

}  // namespace zsnmt
