#include <cstdio>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include <wavenet_sf/checkpoint.hpp>
#include <wavenet_sf/grad_check.hpp>
#include <wavenet_sf/model.hpp>

#include "test_util.hpp"

using namespace wnsf;
using wnsf::testing::max_abs_diff;
using wnsf::testing::random_tensor;

namespace {

ModelConfig tiny_config(std::size_t stages) {
    ModelConfig cfg;
    cfg.input_size = 16;
    cfg.num_classes = 2;
    cfg.stages = {{1, 4, false}};
    if (stages > 1) cfg.stages.push_back({1, 4, true});
    cfg.hffc_channels = {4};
    cfg.d_lf = 4;
    cfg.d_hf = 4;
    return cfg;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("wnsf_test_" + name)).string();
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& b) {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

bool same_state(Model<float>& a, Model<float>& b) {
    auto ca = capture_state(a), cb = capture_state(b);
    if (ca.entries.size() != cb.entries.size()) return false;
    for (std::size_t i = 0; i < ca.entries.size(); ++i)
        if (ca.entries[i].name != cb.entries[i].name || ca.entries[i].values != cb.entries[i].values) return false;
    return true;
}

}  // namespace

TEST(ModelConfig, Validation) {
    ModelConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.input_size = 60;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg.input_size = 48;  // 48/16 ok for the backbone, not for four HFFC halvings of 24
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg.ablation.hffc = false;
    EXPECT_NO_THROW(cfg.validate());
    ModelConfig c2;
    c2.hffc_channels = {16, 32, 30, 64};
    EXPECT_THROW(c2.validate(), std::invalid_argument);
}

TEST(Model, DeterministicBuild) {
    Model<float> a(ModelConfig{}, 7), b(ModelConfig{}, 7), c(ModelConfig{}, 8);
    EXPECT_EQ(a.parameter_count(), b.parameter_count());
    EXPECT_GT(a.parameter_count(), 0u);
    EXPECT_TRUE(same_state(a, b));
    EXPECT_FALSE(same_state(a, c));
}

TEST(Model, ClassifierWidthFollowsClassCount) {
    for (std::size_t k : {4u, 8u}) {
        ModelConfig cfg;
        cfg.num_classes = k;
        Model<float> m(cfg, 1);
        Shape w;
        m.visit([&](const std::string& name, Tensor<float>& t, bool) {
            if (name == "classifier/weight") w = t.shape();
        });
        EXPECT_EQ(w, (Shape{cfg.d_lf + cfg.d_hf, k}));
    }
}

TEST(Model, ForwardShapeAndEvalDeterminism) {
    Model<float> m(ModelConfig{}, 3);
    Rng rng(1);
    auto x = random_tensor<float>({2, 1, 64, 64}, rng);
    auto y1 = m.forward(x, Mode::eval);
    auto y2 = m.forward(x, Mode::eval);
    EXPECT_EQ(y1.shape(), (Shape{2, 8}));
    EXPECT_EQ(y1.values(), y2.values());
    EXPECT_THROW(m.forward(Tensor<float>({2, 1, 32, 32}), Mode::eval), std::invalid_argument);
}

TEST(Model, BatchPermutationConsistency) {
    Model<double> m(tiny_config(2), 4);
    Rng rng(2);
    auto x = random_tensor({3, 1, 16, 16}, rng);
    Tensor<double> xp(x.shape());
    const std::size_t perm[] = {2, 0, 1}, plane = 256;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < plane; ++j) xp[i * plane + j] = x[perm[i] * plane + j];
    auto y = m.forward(x, Mode::eval), yp = m.forward(xp, Mode::eval);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(yp[i * 2 + k], y[perm[i] * 2 + k], 1e-12);
}

TEST(Model, FusedWidth) {
    Model<float> m(ModelConfig{}, 5);
    Rng rng(3);
    auto f = m.features(random_tensor<float>({2, 1, 64, 64}, rng), Mode::eval);
    EXPECT_EQ(f.low.dim(1) + f.high.dim(1), m.config().d_lf + m.config().d_hf);
}

TEST(Model, ZeroDetailsLeavesLowBranch) {
    Model<double> m(tiny_config(2), 6);
    Rng rng(4);
    auto x = random_tensor({2, 1, 16, 16}, rng);
    auto f = m.features(x, Mode::eval);
    m.set_zero_details(true);
    auto g = m.features(x, Mode::eval);
    EXPECT_EQ(f.low.values(), g.low.values());
    EXPECT_GT(max_abs_diff(f.high, g.high), 0.0);
}

TEST(Model, LowOnlyAblationChangesLogits) {
    ModelConfig full;
    ModelConfig low = full;
    low.ablation.hffc = false;
    Model<float> a(full, 9), b(low, 9);
    Rng rng(5);
    auto x = random_tensor<float>({2, 1, 64, 64}, rng);
    EXPECT_GT(max_abs_diff(a.forward(x, Mode::eval), b.forward(x, Mode::eval)), 1e-6);
}

TEST(Model, AblationParameterCounts) {
    ModelConfig base;
    base.ablation = {false, false, false, FfeVariant::full};
    ModelConfig wav = base;
    wav.ablation.wavelet_front_end = true;
    ModelConfig wav_msw = wav;
    wav_msw.ablation.msw_sa = true;
    ModelConfig full;
    std::vector<std::size_t> counts;
    for (const auto& c : {base, wav, wav_msw, full}) counts.push_back(Model<float>(c, 1).parameter_count());
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) EXPECT_NE(counts[i], counts[j]);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(counts[i], counts[3]);
}

TEST(Model, EndToEndGradCheck) {
    for (std::size_t stages : {1u, 2u}) {
        Model<double> m(tiny_config(stages), 11);
        Rng rng(6);
        auto x = random_tensor({2, 1, 16, 16}, rng);
        auto ps = m.parameters();
        auto r = grad_check([&] { return cross_entropy(m.forward(x, Mode::train), {0, 1}); }, ps, 1e-5, 1e-4);
        EXPECT_TRUE(r.pass) << r.worst_param << "[" << r.worst_index << "] " << r.max_rel_err;
    }
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Model<float> a(ModelConfig{}, 21), b(ModelConfig{}, 22);
    const auto p1 = temp_path("rt1.ckpt"), p2 = temp_path("rt2.ckpt");
    save_checkpoint(capture_state(a), p1);
    restore_state(b, load_checkpoint(p1));
    EXPECT_TRUE(same_state(a, b));
    save_checkpoint(capture_state(b), p2);
    EXPECT_EQ(read_bytes(p1), read_bytes(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST(Checkpoint, IncludesRunningStats) {
    Model<float> m(ModelConfig{}, 1);
    auto ck = capture_state(m);
    EXPECT_NE(ck.find("stem/bn/running_var"), nullptr);
    EXPECT_EQ(ck.find("stem/bn/running_var")->values.front(), 1.0f);
}

TEST(Checkpoint, HeaderErrors) {
    Checkpoint ck;
    ck.entries.push_back({"w", {2, 3}, {1, 2, 3, 4, 5, 6}});
    auto good = encode_checkpoint(ck);
    EXPECT_EQ(decode_checkpoint(good).entries.front().values, ck.entries.front().values);

    auto bad = good;
    bad[0] = 'X';
    try {
        decode_checkpoint(bad);
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_STREQ(e.what(), "bad magic at offset 0");
    }

    auto v2 = good;
    v2[4] = 2;
    try {
        decode_checkpoint(v2);
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("unsupported version"), std::string::npos);
    }

    for (std::size_t cut : {std::size_t{6}, std::size_t{13}, good.size() - 1}) {
        std::vector<std::uint8_t> t(good.begin(), good.begin() + static_cast<long>(cut));
        try {
            decode_checkpoint(t);
            FAIL() << cut;
        } catch (const CheckpointError& e) {
            EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
        }
    }
}

TEST(Checkpoint, LayoutMismatchRejected) {
    ModelConfig other;
    other.num_classes = 4;
    Model<float> a(ModelConfig{}, 1), b(other, 1);
    EXPECT_THROW(restore_state(b, capture_state(a)), CheckpointError);
    const auto p = temp_path("missing.ckpt");
    std::remove(p.c_str());
    EXPECT_THROW(load_checkpoint(p), CheckpointError);
    write_bytes(p, {'W', 'N'});
    EXPECT_THROW(load_checkpoint(p), CheckpointError);
    std::remove(p.c_str());
}
