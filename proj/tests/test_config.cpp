#include <gtest/gtest.h>

#include <sstream>

#include "psrd/checkpoint.hpp"
#include "psrd/config.hpp"

using namespace psrd;

TEST(RunConfig, RenderParseIsIdempotentOnDefaults) {
    const RunConfig def;
    const RunConfig back = parse_run_config_string(render_run_config(def));
    EXPECT_TRUE(def == back);
    EXPECT_EQ(render_run_config(def), render_run_config(back));
}

TEST(RunConfig, RenderParseIsIdempotentAfterMutation) {
    RunConfig cfg;
    cfg.data.n_train = 12;
    cfg.data.noise_sigma = Real(0.0375);
    cfg.net.block_variant = BlockVariant::kNoSecondRelu;
    cfg.net.dropout = {DropoutMode::kInsideBlock, Real(0.25)};
    cfg.net.stages = {{3, 24, 1}, {2, 48, 2}};
    cfg.anchors.base_sizes = {6, 11.5, 19};
    cfg.anchors.aspect_ratios = {0.5, 1, 2};
    cfg.optim.lr = Real(0.00375);
    cfg.optim.epochs = 7;
    cfg.train.include_gt_rois = false;
    cfg.finalize();
    const RunConfig back = parse_run_config_string(render_run_config(cfg));
    EXPECT_TRUE(cfg == back);
    EXPECT_EQ(back.net.stages.size(), 2u);
    EXPECT_EQ(back.net.stages[1].width, 48);
    EXPECT_EQ(back.net.stages[1].stride, 2);
    EXPECT_EQ(back.anchors.base_sizes.size(), 3u);
    EXPECT_NEAR(back.anchors.base_sizes[1], 11.5, 1e-15);
    EXPECT_FALSE(back.train.include_gt_rois);
}

TEST(RunConfig, UnknownKeyIsRejected) {
    try {
        parse_run_config_string("data.width = 64\nnot.a.key = 3\n");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("not.a.key"), std::string::npos);
    }
}

TEST(RunConfig, DuplicateKeyIsRejected) {
    EXPECT_THROW(parse_run_config_string("data.width = 64\ndata.width = 32\n"), ParseError);
}

TEST(RunConfig, MalformedValuesAreRejected) {
    EXPECT_THROW(parse_run_config_string("data.width = sixty-four\n"), ParseError);
    EXPECT_THROW(parse_run_config_string("net.stages = 2x16\n"), ParseError);
    EXPECT_THROW(parse_run_config_string("net.block_variant = newfangled\n"), ParseError);
    EXPECT_THROW(parse_run_config_string("train.include_gt_rois = yes\n"), ParseError);
    EXPECT_THROW(parse_run_config_string("no equals sign here\n"), ParseError);
}

TEST(RunConfig, CommentsAndBlankLinesAreIgnored) {
    const RunConfig cfg = parse_run_config_string(
        "# a comment\n"
        "\n"
        "data.width = 48  # trailing comment\n");
    EXPECT_EQ(cfg.data.width, 48);
    EXPECT_EQ(cfg.data.height, 64);  // untouched default
}

TEST(RunConfig, EveryKeyCarriesDocumentation) {
    const std::string text = render_run_config(RunConfig{});
    std::istringstream is(text);
    std::string line;
    int keys = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        EXPECT_NE(line.find(" = "), std::string::npos) << line;
        EXPECT_NE(line.find("  # "), std::string::npos) << line;
        ++keys;
    }
    EXPECT_GE(keys, 35);
}

TEST(RunConfig, DefaultsMatchTheDeskScaleExperiment) {
    const RunConfig cfg;
    EXPECT_EQ(cfg.data.n_train, 180);
    EXPECT_EQ(cfg.data.n_val, 20);
    EXPECT_EQ(cfg.data.n_test, 25);
    EXPECT_EQ(cfg.data.width, 64);
    EXPECT_EQ(cfg.net.ps.k, 3);
    EXPECT_EQ(cfg.net.ps.C, 3);
    EXPECT_EQ(cfg.net.dropout.mode, DropoutMode::kAfterFirstPool);
    EXPECT_DOUBLE_EQ(cfg.net.dropout.rate, 0.5);
    EXPECT_EQ(cfg.net.feature_stride(), 4);
    EXPECT_DOUBLE_EQ(cfg.net.bn_eps, 1e-5);
    EXPECT_DOUBLE_EQ(cfg.net.bn_momentum, 0.9);
    EXPECT_DOUBLE_EQ(cfg.optim.momentum, 0.9);
    EXPECT_LE(cfg.optim.epochs, 30);
}

TEST(Checkpoint, ArbitraryTensorsRoundTripBitExact) {
    Rng rng(61);
    std::map<std::string, Tensor> tensors;
    tensors["a/w"] = Tensor::from_values({2, 3}, {1, -2, 3.5, -4.25, 5e-7, -6e12});
    Tensor big({3, 2, 2, 2});
    for (std::int64_t i = 0; i < big.numel(); ++i) big[i] = static_cast<Real>(rng.normal());
    tensors["z/deep/name/with/slashes"] = big;
    tensors["scalar"] = Tensor::scalar(Real(0.1));

    const std::string path = testing::TempDir() + "psrd_ckpt_roundtrip.bin";
    save_checkpoint(tensors, path);
    const auto loaded = load_checkpoint(path);
    ASSERT_EQ(loaded.size(), tensors.size());
    for (const auto& [name, t] : tensors) {
        const Tensor& u = loaded.at(name);
        ASSERT_EQ(u.shape(), t.shape()) << name;
        for (std::int64_t i = 0; i < t.numel(); ++i) ASSERT_EQ(t[i], u[i]) << name;
    }
}

TEST(Checkpoint, MagicBytesArePinned) {
    const std::string path = testing::TempDir() + "psrd_ckpt_magic.bin";
    save_checkpoint({{"t", Tensor::scalar(1)}}, path);
    std::ifstream is(path, std::ios::binary);
    char magic[5];
    is.read(magic, 5);
    EXPECT_EQ(std::string(magic, 5), "PSRD1");
}

TEST(Checkpoint, BadMagicIsRejected) {
    const std::string path = testing::TempDir() + "psrd_ckpt_bad.bin";
    std::ofstream(path, std::ios::binary) << "NOPE1junkjunkjunk";
    EXPECT_THROW(load_checkpoint(path), ParseError);
}

TEST(RealToString, ShortestRoundTrip) {
    for (double v : {0.5, 0.1, 1e-5, 12.0, 0.0375, 1.0 / 3.0, 1e300}) {
        const std::string s = real_to_string(v);
        EXPECT_EQ(std::stod(s), v) << s;
    }
    EXPECT_EQ(real_to_string(0.5), "0.5");
    EXPECT_EQ(real_to_string(12.0), "12");
}
