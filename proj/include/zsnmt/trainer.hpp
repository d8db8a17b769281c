// Optimization loop: Adam with inverse-square-root warmup, label-smoothed
// token cross entropy, token-budget batching, periodic checkpoints with
// optimizer state, and checkpoint averaging.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "zsnmt/checkpoint.hpp"
#include "zsnmt/model.hpp"
#include "zsnmt/tensor.hpp"
#include "zsnmt/util.hpp"

namespace zsnmt {

// lr(step) = lr_scale * d^{-1/2} * min(step^{-1/2}, step * warmup^{-3/2});
// rises linearly to the peak at step == warmup, then decays as 1/sqrt(step).
inline double lr_at(std::uint64_t step, std::size_t d_model, std::uint64_t warmup,
                    double lr_scale) {
    if (step < 1) throw ConfigError("lr_at: step must be >= 1");
    if (warmup < 1 || d_model == 0) throw ConfigError("lr_at: warmup and d_model must be positive");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup);
    return lr_scale * std::pow(static_cast<double>(d_model), -0.5) *
           std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

struct TrainConfig {
    std::uint64_t max_steps = 1000;
    std::size_t batch_tokens = 1024;  // target-token budget per batch
    double label_smoothing = 0.1;
    std::uint64_t warmup_steps = 4000;
    double lr_scale = 0.5;  // 1.0 bilingual, 0.5 multilingual
    double clip_norm = 1.0;
    std::uint64_t checkpoint_every = 500;
    std::size_t average_last = 5;  // checkpoints pooled into the final model
    std::uint64_t log_every = 50;
    std::uint64_t seed = 1;

    void validate() const {
        if (max_steps < 1 || batch_tokens < 1 || warmup_steps < 1 || checkpoint_every < 1 ||
            average_last < 1 || log_every < 1)
            throw ConfigError("train config fields must be positive");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw ConfigError("label_smoothing must lie in [0,1)");
        if (lr_scale <= 0.0) throw ConfigError("lr_scale must be positive");
        if (clip_norm <= 0.0) throw ConfigError("clip_norm must be positive");
    }

    kv::Map to_kv() const {
        kv::Map m;
        kv::set(m, "train.max_steps", std::to_string(max_steps));
        kv::set(m, "train.batch_tokens", std::to_string(batch_tokens));
        kv::set(m, "train.label_smoothing", std::to_string(label_smoothing));
        kv::set(m, "train.warmup_steps", std::to_string(warmup_steps));
        kv::set(m, "train.lr_scale", std::to_string(lr_scale));
        kv::set(m, "train.clip_norm", std::to_string(clip_norm));
        kv::set(m, "train.checkpoint_every", std::to_string(checkpoint_every));
        kv::set(m, "train.average_last", std::to_string(average_last));
        kv::set(m, "train.seed", std::to_string(seed));
        return m;
    }
};

// One tokenized training instance: plain ids without tag/BOS/EOS framing —
// the model and loss attach those.
struct TrainInstance {
    std::vector<int> src;
    std::vector<int> tgt;
    std::string lang;  // target language t

    std::size_t target_tokens() const { return tgt.size() + 1; }  // EOS included
};

// Greedy token-budget batching: a batch closes before the budget would be
// exceeded; an instance longer than the whole budget forms its own batch.
inline std::vector<std::vector<std::size_t>> batch_by_tokens(
    const std::vector<std::size_t>& lens, std::size_t budget) {
    if (budget == 0) throw ConfigError("batch token budget must be positive");
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur;
    std::size_t used = 0;
    for (std::size_t i = 0; i < lens.size(); ++i) {
        if (!cur.empty() && used + lens[i] > budget) {
            out.push_back(std::move(cur));
            cur.clear();
            used = 0;
        }
        cur.push_back(i);
        used += lens[i];
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

template <typename T>
class Adam {
  public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    std::uint64_t step_count() const { return t_; }
    void set_step_count(std::uint64_t t) { t_ = t; }

    // One bias-corrected update over every parameter that has gradients.
    // Moments are kept in double for platform-stable accumulation.
    void step(std::map<std::string, Tensor<T>>& params, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& [name, p] : params) {
            auto& m = moment(m_, name, p.numel());
            auto& v = moment(v_, name, p.numel());
            const auto& g = p.grad();
            auto& vals = p.values();
            for (std::size_t i = 0; i < vals.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                const double update = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
                vals[i] = static_cast<T>(static_cast<double>(vals[i]) - update);
            }
        }
    }

    // Moments as checkpoint tensors under the "opt." prefix.
    void append_to(ckpt::Checkpoint& c,
                   const std::map<std::string, Tensor<T>>& params) const {
        for (const auto& [name, p] : params) {
            auto mi = m_.find(name);
            auto vi = v_.find(name);
            if (mi == m_.end() || vi == v_.end()) continue;  // never stepped
            ckpt::TensorData mt, vt;
            mt.shape = vt.shape = p.shape();
            mt.data.assign(mi->second.begin(), mi->second.end());
            vt.data.assign(vi->second.begin(), vi->second.end());
            c.tensors.emplace_back(std::string(ckpt::kOptPrefix) + "m." + name, std::move(mt));
            c.tensors.emplace_back(std::string(ckpt::kOptPrefix) + "v." + name, std::move(vt));
        }
    }

    void restore_from(const ckpt::Checkpoint& c) {
        m_.clear();
        v_.clear();
        t_ = c.step;
        for (const auto& [name, t] : c.tensors) {
            const std::string mp = std::string(ckpt::kOptPrefix) + "m.";
            const std::string vp = std::string(ckpt::kOptPrefix) + "v.";
            if (name.rfind(mp, 0) == 0)
                m_[name.substr(mp.size())].assign(t.data.begin(), t.data.end());
            else if (name.rfind(vp, 0) == 0)
                v_[name.substr(vp.size())].assign(t.data.begin(), t.data.end());
        }
    }

  private:
    static std::vector<double>& moment(std::map<std::string, std::vector<double>>& store,
                                       const std::string& name, std::size_t numel) {
        auto& buf = store[name];
        if (buf.size() != numel) buf.assign(numel, 0.0);
        return buf;
    }

    double beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

// Scales all gradients so their global L2 norm is at most max_norm;
// returns the pre-clip norm.
template <typename T>
double clip_global_norm(std::map<std::string, Tensor<T>>& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, p] : params)
        for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const T factor = static_cast<T>(max_norm / norm);
        for (auto& [name, p] : params)
            for (T& g : p.grad()) g *= factor;
    }
    return norm;
}

struct StepResult {
    double loss = 0.0;       // mean label-smoothed CE per target token
    std::size_t tokens = 0;  // target tokens in the batch
    double grad_norm = 0.0;  // pre-clip global norm
    double lr = 0.0;
};

// One optimizer step on a batch: per-instance forward (variable lengths,
// no padding), losses pooled as (sum of token losses) / (total tokens).
template <typename T>
StepResult train_step(TransformerModel<T>& model, Adam<T>& opt,
                      const std::vector<TrainInstance>& batch, const TrainConfig& tc,
                      Rng& dropout_rng) {
    if (batch.empty()) throw SequenceError("train_step: empty batch");
    model.zero_grads();

    std::vector<Tensor<T>> losses;
    losses.reserve(batch.size());
    std::size_t total_tokens = 0;
    for (const auto& inst : batch) {
        if (inst.tgt.empty())
            throw SequenceError("train_step: instance with empty target (lang " + inst.lang + ")");
        Tensor<T> h = model.encode(inst.src, inst.lang, &dropout_rng);
        std::vector<int> dec_in;
        dec_in.reserve(inst.tgt.size() + 1);
        dec_in.push_back(kBosId);
        dec_in.insert(dec_in.end(), inst.tgt.begin(), inst.tgt.end());
        std::vector<int> gold(inst.tgt);
        gold.push_back(kEosId);
        auto out = model.decode(dec_in, h, inst.lang, &dropout_rng);
        losses.push_back(cross_entropy_smoothed_sum(out.logits, gold,
                                                    static_cast<T>(tc.label_smoothing), kPadId));
        total_tokens += gold.size();
    }
    Tensor<T> loss = scale(add_all(losses), static_cast<T>(1.0 / total_tokens));
    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value))
        throw NumericError("non-finite loss at optimizer step " +
                           std::to_string(opt.step_count() + 1) + "; aborting training");
    loss.backward();

    const double norm = clip_global_norm(model.params(), tc.clip_norm);
    if (!std::isfinite(norm))
        throw NumericError("non-finite gradient norm at optimizer step " +
                           std::to_string(opt.step_count() + 1) + "; aborting training");
    const double lr =
        lr_at(opt.step_count() + 1, model.config().d_model, tc.warmup_steps, tc.lr_scale);
    opt.step(model.params(), lr);
    return {loss_value, total_tokens, norm, lr};
}

inline std::string checkpoint_name(std::uint64_t step) {
    std::ostringstream os;
    os << "ckpt_" << std::setw(6) << std::setfill('0') << step << ".bin";
    return os.str();
}

// Full training loop over tokenized instances. Each epoch reshuffles and
// re-batches by token budget. Writes a manifest, a structured log
// (step/loss/lr/tokens-per-second lines), and periodic checkpoints with
// optimizer state. `on_checkpoint` fires after each save (for eval hooks).
template <typename T>
std::vector<std::string> train_loop(
    TransformerModel<T>& model, Adam<T>& opt, std::vector<TrainInstance> data,
    const TrainConfig& tc, const std::string& out_dir,
    const std::function<void(std::uint64_t)>& on_checkpoint = nullptr) {
    tc.validate();
    if (data.empty()) throw SequenceError("train_loop: no training data");
    std::filesystem::create_directories(out_dir);

    kv::Map manifest = ckpt::model_config_to_kv(model.config());
    for (const auto& [k, v] : tc.to_kv()) kv::set(manifest, k, v);
    kv::set(manifest, "train.instances", std::to_string(data.size()));
    kv::write_file(out_dir + "/manifest.kv", manifest);

    std::ofstream log(out_dir + "/train.log", std::ios::app);
    if (!log) throw IoError("cannot open training log in " + out_dir);

    Rng shuffle_rng(derive_seed(tc.seed, "shuffle"));
    Rng dropout_rng(derive_seed(tc.seed, "dropout"));
    std::vector<std::string> checkpoints;
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t tokens_done = 0;

    auto save_ckpt = [&](std::uint64_t step) {
        ckpt::Checkpoint c = ckpt::from_model(model, step, tc.to_kv());
        opt.append_to(c, model.params());
        const std::string path = out_dir + "/" + checkpoint_name(step);
        ckpt::save(path, c);
        checkpoints.push_back(path);
        if (on_checkpoint) on_checkpoint(step);
    };

    while (opt.step_count() < tc.max_steps) {
        shuffle_rng.shuffle(data);
        std::vector<std::size_t> lens(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) lens[i] = data[i].target_tokens();
        for (const auto& batch_idx : batch_by_tokens(lens, tc.batch_tokens)) {
            std::vector<TrainInstance> batch;
            batch.reserve(batch_idx.size());
            for (std::size_t i : batch_idx) batch.push_back(data[i]);
            StepResult r = train_step(model, opt, batch, tc, dropout_rng);
            tokens_done += r.tokens;
            const std::uint64_t step = opt.step_count();
            if (step % tc.log_every == 0 || step == tc.max_steps) {
                const double secs =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                log << "step=" << step << " loss=" << r.loss << " lr=" << r.lr
                    << " grad_norm=" << r.grad_norm << " tokens_per_sec="
                    << (secs > 0 ? static_cast<double>(tokens_done) / secs : 0.0) << "\n";
                log.flush();
            }
            if (step % tc.checkpoint_every == 0) {
                for (const auto& [name, p] : model.params()) check_finite(p, name);
                save_ckpt(step);
            }
            if (step >= tc.max_steps) break;
        }
    }
    if (checkpoints.empty() || opt.step_count() % tc.checkpoint_every != 0)
        save_ckpt(opt.step_count());
    return checkpoints;
}

// Mean of the last k checkpoints written by train_loop.
inline ckpt::Checkpoint average_last_checkpoints(const std::vector<std::string>& paths,
                                                 std::size_t k) {
    if (paths.empty()) throw CheckpointError("no checkpoints to average");
    const std::size_t take = std::min(k, paths.size());
    std::vector<std::string> tail(paths.end() - static_cast<std::ptrdiff_t>(take), paths.end());
    return ckpt::average(tail);
}

}  // namespace zsnmt
