// Self-describing model checkpoints: a versioned binary container of
// named tensors (name, shape, little-endian float32 payload) plus a
// key-value config echo and the training step counter. Optimizer moments
// ride along as tensors under the "opt." prefix; checkpoint averaging
// drops them.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "zsnmt/model.hpp"
#include "zsnmt/tensor.hpp"
#include "zsnmt/util.hpp"

namespace zsnmt::ckpt {

inline constexpr char kMagic[8] = {'Z', 'S', 'N', 'M', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr const char* kOptPrefix = "opt.";

struct TensorData {
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    kv::Map config;
    std::uint64_t step = 0;
    std::vector<std::pair<std::string, TensorData>> tensors;  // sorted by name

    const TensorData* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

namespace detail {

// Explicit little-endian encoding so the on-disk format is host-independent.
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw CheckpointError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline void save(const std::string& path, const Checkpoint& c) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    detail::put_u32(out, kVersion);

    std::ostringstream cfg;
    kv::write(cfg, c.config);
    const std::string cfg_text = cfg.str();
    detail::put_u32(out, static_cast<std::uint32_t>(cfg_text.size()));
    out += cfg_text;

    detail::put_u64(out, c.step);
    detail::put_u64(out, c.tensors.size());
    for (const auto& [name, t] : c.tensors) {
        if (shape_numel(t.shape) != t.data.size())
            throw CheckpointError("tensor '" + name + "' shape/data mismatch");
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) detail::put_u64(out, d);
        for (float f : t.data) detail::put_f32(out, f);
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to checkpoint: " + path);
}

inline Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    detail::Reader r(buf);
    if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
        throw CheckpointError("bad magic, not a checkpoint: " + path);
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

    Checkpoint c;
    const std::uint32_t cfg_len = r.u32();
    c.config = kv::parse(r.bytes(cfg_len));
    c.step = r.u64();
    const std::uint64_t n_tensors = r.u64();
    c.tensors.reserve(n_tensors);
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        TensorData t;
        const std::uint32_t rank = r.u32();
        t.shape.resize(rank);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            t.shape[d] = r.u64();
            numel *= t.shape[d];
        }
        t.data.resize(numel);
        for (std::size_t e = 0; e < numel; ++e) t.data[e] = r.f32();
        c.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (r.pos != buf.size()) throw CheckpointError("trailing bytes in checkpoint: " + path);
    return c;
}

// ---- model config echo ----

inline kv::Map model_config_to_kv(const ModelConfig& cfg) {
    kv::Map m;
    kv::set(m, "model.vocab_size", std::to_string(cfg.vocab_size));
    kv::set(m, "model.d_model", std::to_string(cfg.d_model));
    kv::set(m, "model.ffn_dim", std::to_string(cfg.ffn_dim));
    kv::set(m, "model.heads", std::to_string(cfg.heads));
    kv::set(m, "model.layers", std::to_string(cfg.layers));
    kv::set(m, "model.languages", join(cfg.languages, ","));
    kv::set(m, "model.use_laln", cfg.use_laln ? "1" : "0");
    kv::set(m, "model.use_lalt", cfg.use_lalt ? "1" : "0");
    kv::set(m, "model.dropout", std::to_string(cfg.dropout));
    kv::set(m, "model.attn_dropout", std::to_string(cfg.attn_dropout));
    kv::set(m, "model.base_std", std::to_string(cfg.base_std));
    kv::set(m, "model.seed", std::to_string(cfg.seed));
    return m;
}

inline ModelConfig model_config_from_kv(const kv::Map& m) {
    auto req = [&](const std::string& key) {
        const std::string v = kv::get_or(m, key, "");
        if (v.empty()) throw CheckpointError("config echo missing key '" + key + "'");
        return v;
    };
    ModelConfig cfg;
    cfg.vocab_size = std::stoull(req("model.vocab_size"));
    cfg.d_model = std::stoull(req("model.d_model"));
    cfg.ffn_dim = std::stoull(req("model.ffn_dim"));
    cfg.heads = std::stoull(req("model.heads"));
    cfg.layers = std::stoull(req("model.layers"));
    cfg.languages = split_on(req("model.languages"), ',');
    cfg.use_laln = req("model.use_laln") == "1";
    cfg.use_lalt = req("model.use_lalt") == "1";
    cfg.dropout = std::stod(req("model.dropout"));
    cfg.attn_dropout = std::stod(req("model.attn_dropout"));
    cfg.base_std = std::stod(req("model.base_std"));
    cfg.seed = std::stoull(req("model.seed"));
    return cfg;
}

// ---- model <-> checkpoint ----

template <typename T>
Checkpoint from_model(const TransformerModel<T>& model, std::uint64_t step,
                      kv::Map extra_config = {}) {
    Checkpoint c;
    c.config = model_config_to_kv(model.config());
    for (const auto& [k, v] : extra_config) kv::set(c.config, k, v);
    c.step = step;
    for (const auto& [name, p] : model.params()) {
        TensorData t;
        t.shape = p.shape();
        t.data.reserve(p.numel());
        for (T x : p.values()) t.data.push_back(static_cast<float>(x));
        c.tensors.emplace_back(name, std::move(t));
    }
    return c;
}

// Copies model tensors from a checkpoint into an already-built model. The
// non-optimizer tensor sets must match exactly, names and shapes both.
template <typename T>
void into_model(TransformerModel<T>& model, const Checkpoint& c) {
    std::size_t model_tensors = 0;
    for (const auto& [name, t] : c.tensors) {
        if (name.rfind(kOptPrefix, 0) == 0) continue;
        ++model_tensors;
        auto it = model.params().find(name);
        if (it == model.params().end())
            throw CheckpointError("checkpoint tensor '" + name + "' has no model parameter");
        if (it->second.shape() != t.shape)
            throw CheckpointError("shape mismatch for '" + name + "': model " +
                                  shape_str(it->second.shape()) + " vs checkpoint " +
                                  shape_str(t.shape));
        auto& vals = it->second.values();
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<T>(t.data[i]);
    }
    if (model_tensors != model.params().size())
        throw CheckpointError("checkpoint holds " + std::to_string(model_tensors) +
                              " model tensors, model expects " +
                              std::to_string(model.params().size()));
}

// Rebuilds the model described by the config echo, then loads weights.
template <typename T>
TransformerModel<T> restore_model(const Checkpoint& c) {
    TransformerModel<T> model(model_config_from_kv(c.config));
    into_model(model, c);
    return model;
}

// Elementwise average of the model tensors across checkpoints; optimizer
// state does not survive averaging. Config and step come from the last
// (newest) checkpoint.
inline Checkpoint average(const std::vector<std::string>& paths) {
    if (paths.empty()) throw CheckpointError("average: no checkpoints given");
    Checkpoint out = load(paths.back());
    std::vector<std::pair<std::string, TensorData>> model_tensors;
    for (auto& [name, t] : out.tensors)
        if (name.rfind(kOptPrefix, 0) != 0) model_tensors.emplace_back(name, std::move(t));
    out.tensors = std::move(model_tensors);

    std::vector<std::vector<double>> acc(out.tensors.size());
    for (std::size_t i = 0; i < out.tensors.size(); ++i)
        acc[i].assign(out.tensors[i].second.data.size(), 0.0);

    // All checkpoints must agree on the model-config signature.
    auto model_sig = [](const kv::Map& m) {
        kv::Map sig;
        for (const auto& [k, v] : m)
            if (k.rfind("model.", 0) == 0) sig.emplace_back(k, v);
        return sig;
    };
    const kv::Map want_sig = model_sig(out.config);

    for (const auto& path : paths) {
        Checkpoint c = paths.back() == path ? out : load(path);
        if (model_sig(c.config) != want_sig)
            throw CheckpointError("checkpoint " + path +
                                  " has a different model config; cannot average");
        for (std::size_t i = 0; i < out.tensors.size(); ++i) {
            const auto& name = out.tensors[i].first;
            const TensorData* t = c.find(name);
            if (t == nullptr)
                throw CheckpointError("checkpoint " + path + " lacks tensor '" + name + "'");
            if (t->shape != out.tensors[i].second.shape)
                throw CheckpointError("checkpoint " + path + " shape mismatch for '" + name + "'");
            for (std::size_t e = 0; e < t->data.size(); ++e) acc[i][e] += t->data[e];
        }
    }
    const double inv = 1.0 / static_cast<double>(paths.size());
    for (std::size_t i = 0; i < out.tensors.size(); ++i)
        for (std::size_t e = 0; e < acc[i].size(); ++e)
            out.tensors[i].second.data[e] = static_cast<float>(acc[i][e] * inv);
    return out;
}

}  // namespace zsnmt::ckpt
