#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "zsnmt/checkpoint.hpp"
#include "zsnmt/model.hpp"

using zsnmt::ModelConfig;
using zsnmt::Rng;
using zsnmt::TransformerModel;
namespace ckpt = zsnmt::ckpt;

namespace {

std::string temp_file(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("zsnmt_ckpt_" + name)).string();
}

ModelConfig small_config(std::uint64_t seed = 5) {
    ModelConfig cfg;
    cfg.vocab_size = 12;
    cfg.d_model = 8;
    cfg.ffn_dim = 10;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.languages = {"de", "en"};
    cfg.use_laln = true;
    cfg.use_lalt = true;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST(Checkpoint, ConfigEchoRoundTrip) {
    ModelConfig cfg = small_config();
    cfg.dropout = 0.1;
    cfg.attn_dropout = 0.05;
    cfg.base_std = 0.07;
    ModelConfig back = ckpt::model_config_from_kv(ckpt::model_config_to_kv(cfg));
    EXPECT_EQ(back.vocab_size, cfg.vocab_size);
    EXPECT_EQ(back.d_model, cfg.d_model);
    EXPECT_EQ(back.ffn_dim, cfg.ffn_dim);
    EXPECT_EQ(back.heads, cfg.heads);
    EXPECT_EQ(back.layers, cfg.layers);
    EXPECT_EQ(back.languages, cfg.languages);
    EXPECT_EQ(back.use_laln, cfg.use_laln);
    EXPECT_EQ(back.use_lalt, cfg.use_lalt);
    EXPECT_NEAR(back.dropout, cfg.dropout, 1e-9);
    EXPECT_NEAR(back.base_std, cfg.base_std, 1e-9);
    EXPECT_EQ(back.seed, cfg.seed);
}

TEST(Checkpoint, SaveLoadRoundTrip) {
    TransformerModel<float> m(small_config());
    ckpt::Checkpoint c = ckpt::from_model(m, 1234, {{"note", "unit test"}});
    const std::string path = temp_file("roundtrip.bin");
    ckpt::save(path, c);
    ckpt::Checkpoint back = ckpt::load(path);

    EXPECT_EQ(back.step, 1234u);
    EXPECT_EQ(zsnmt::kv::get_or(back.config, "note", ""), "unit test");
    EXPECT_EQ(zsnmt::kv::get_or(back.config, "model.d_model", ""), "8");
    ASSERT_EQ(back.tensors.size(), c.tensors.size());
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
        EXPECT_EQ(back.tensors[i].first, c.tensors[i].first);
        EXPECT_EQ(back.tensors[i].second.shape, c.tensors[i].second.shape);
        EXPECT_EQ(back.tensors[i].second.data, c.tensors[i].second.data);  // float32 exact
    }
    std::remove(path.c_str());
}

TEST(Checkpoint, RestoredModelReproducesLogitsExactly) {
    TransformerModel<float> m(small_config());
    const std::string path = temp_file("restore.bin");
    ckpt::save(path, ckpt::from_model(m, 7));

    TransformerModel<float> r = ckpt::restore_model<float>(ckpt::load(path));
    auto a = m.decode({zsnmt::kBosId, 6}, m.encode({7, 8}, "de"), "de").logits;
    auto b = r.decode({zsnmt::kBosId, 6}, r.encode({7, 8}, "de"), "de").logits;
    ASSERT_EQ(a.values().size(), b.values().size());
    for (std::size_t i = 0; i < a.values().size(); ++i) EXPECT_EQ(a.values()[i], b.values()[i]);
    std::remove(path.c_str());
}

TEST(Checkpoint, IntoModelValidatesNamesAndShapes) {
    TransformerModel<float> m(small_config());
    ckpt::Checkpoint c = ckpt::from_model(m, 1);

    ckpt::Checkpoint renamed = c;
    renamed.tensors[0].first = "no.such.tensor";
    EXPECT_THROW(ckpt::into_model(m, renamed), zsnmt::CheckpointError);

    ckpt::Checkpoint missing = c;
    missing.tensors.pop_back();
    EXPECT_THROW(ckpt::into_model(m, missing), zsnmt::CheckpointError);

    ckpt::Checkpoint reshaped = c;
    reshaped.tensors[0].second.shape = {1, reshaped.tensors[0].second.data.size()};
    EXPECT_THROW(ckpt::into_model(m, reshaped), zsnmt::CheckpointError);
}

TEST(Checkpoint, LoadRejectsCorruptFiles) {
    const std::string path = temp_file("corrupt.bin");
    {
        std::ofstream f(path, std::ios::binary);
        f << "definitely not a checkpoint";
    }
    EXPECT_THROW(ckpt::load(path), zsnmt::CheckpointError);

    // Truncate a valid checkpoint mid-payload.
    TransformerModel<float> m(small_config());
    ckpt::save(path, ckpt::from_model(m, 1));
    {
        std::ifstream in(path, std::ios::binary);
        std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
    }
    EXPECT_THROW(ckpt::load(path), zsnmt::CheckpointError);
    std::remove(path.c_str());
    EXPECT_THROW(ckpt::load(path), zsnmt::IoError);
}

TEST(Checkpoint, AverageOfIdenticalEqualsItself) {
    TransformerModel<float> m(small_config());
    const std::string path = temp_file("avg_same.bin");
    ckpt::save(path, ckpt::from_model(m, 10));
    ckpt::Checkpoint avg = ckpt::average({path, path, path});
    ckpt::Checkpoint one = ckpt::load(path);
    ASSERT_EQ(avg.tensors.size(), one.tensors.size());
    for (std::size_t i = 0; i < avg.tensors.size(); ++i)
        EXPECT_EQ(avg.tensors[i].second.data, one.tensors[i].second.data);
    std::remove(path.c_str());
}

TEST(Checkpoint, AverageOfOppositesIsZeroAndDropsOptState) {
    TransformerModel<float> m(small_config());
    const std::string pa = temp_file("avg_a.bin");
    const std::string pb = temp_file("avg_b.bin");

    ckpt::Checkpoint a = ckpt::from_model(m, 10);
    ckpt::TensorData fake_moment;
    fake_moment.shape = {2};
    fake_moment.data = {1.0f, 2.0f};
    a.tensors.emplace_back("opt.m.embed.tok", fake_moment);
    ckpt::save(pa, a);

    for (auto& [name, p] : m.params())
        for (float& v : p.values()) v = -v;
    ckpt::save(pb, ckpt::from_model(m, 20));

    ckpt::Checkpoint avg = ckpt::average({pa, pb});
    EXPECT_EQ(avg.step, 20u);  // newest checkpoint wins
    for (const auto& [name, t] : avg.tensors) {
        EXPECT_TRUE(name.rfind("opt.", 0) != 0) << "optimizer state survived averaging";
        for (float v : t.data) EXPECT_EQ(v, 0.0f) << name;
    }
    std::remove(pa.c_str());
    std::remove(pb.c_str());
}

TEST(Checkpoint, AverageMatchesElementwiseMeanOracle) {
    std::vector<std::string> paths;
    std::vector<std::vector<float>> embeds;
    for (int k = 0; k < 3; ++k) {
        TransformerModel<float> m(small_config());
        Rng rng(900 + k);
        for (auto& [name, p] : m.params())
            for (float& v : p.values()) v = static_cast<float>(rng.normal());
        embeds.push_back(m.param("embed.tok").values());
        const std::string path = temp_file("avg_rand_" + std::to_string(k) + ".bin");
        ckpt::save(path, ckpt::from_model(m, 100 + k));
        paths.push_back(path);
    }
    ckpt::Checkpoint avg = ckpt::average(paths);
    const ckpt::TensorData* t = avg.find("embed.tok");
    ASSERT_NE(t, nullptr);
    for (std::size_t i = 0; i < t->data.size(); ++i) {
        const double mean = (static_cast<double>(embeds[0][i]) + embeds[1][i] + embeds[2][i]) / 3.0;
        EXPECT_NEAR(t->data[i], mean, 1e-7);
    }
    for (const auto& p : paths) std::remove(p.c_str());
}

TEST(Checkpoint, AverageRejectsConfigMismatch) {
    TransformerModel<float> a(small_config(5));
    ModelConfig other = small_config(5);
    other.d_model = 16;
    other.heads = 4;
    TransformerModel<float> b(other);
    const std::string pa = temp_file("mismatch_a.bin");
    const std::string pb = temp_file("mismatch_b.bin");
    ckpt::save(pa, ckpt::from_model(a, 1));
    ckpt::save(pb, ckpt::from_model(b, 2));
    EXPECT_THROW(ckpt::average({pa, pb}), zsnmt::CheckpointError);
    EXPECT_THROW(ckpt::average({}), zsnmt::CheckpointError);
    std::remove(pa.c_str());
    std::remove(pb.c_str());
}
