#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "offroad/config.hpp"

using namespace offroad;

namespace {

std::string error_of(const std::string& yaml, const std::vector<std::string>& overrides = {}) {
    try {
        parse_config_text(yaml, overrides);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(ParseConfig, EmptyTextGivesDefaults) {
    const PipelineConfig c = parse_config_text("");
    EXPECT_EQ(c, PipelineConfig{});
    EXPECT_EQ(c.schedule.base_lr, 6e-5);
    EXPECT_EQ(c.schedule.total_iters, 96000);
    EXPECT_EQ(c.schedule.power, 0.9);
    EXPECT_EQ(c.ema.decay, 0.999);
    EXPECT_EQ(c.train.batch_size, 2);
    EXPECT_EQ(c.train.grad_accumulation_steps, 4);
    EXPECT_EQ(c.effective_batch(), 8);
    EXPECT_EQ(c.augment.photometric.p_apply, 0.5);
    EXPECT_EQ(c.augment.geometric.crop_height, 512);
    EXPECT_EQ(c.augment.geometric.label_pad_value, kIgnoreId);
    EXPECT_FALSE(c.train.mixed_precision);
}

TEST(ParseConfig, EmptyFileGivesDefaults) {
    const auto path = std::filesystem::temp_directory_path() / "offroad_empty_config.yaml";
    std::ofstream(path).close();
    EXPECT_EQ(parse_config(path), PipelineConfig{});
    std::filesystem::remove(path);
    EXPECT_THROW(parse_config("/nonexistent/config.yaml"), ConfigError);
}

TEST(ParseConfig, FileThenOverridesPrecedence) {
    const std::string yaml =
        "schedule:\n  total_iters: 500\n  base_lr: 0.001\n"
        "model:\n  psp_bin_sizes: [1, 2, 4]\n"
        "augment:\n  geometric:\n    crop_size: [256, 128]\n"
        "data:\n  train_roots: [a, b]\n";
    const PipelineConfig c = parse_config_text(yaml, {"schedule.total_iters=96000", "train.seed=7"});
    EXPECT_EQ(c.schedule.total_iters, 96000);
    EXPECT_EQ(c.schedule.base_lr, 0.001);
    EXPECT_EQ(c.train.seed, 7u);
    EXPECT_EQ(c.model.psp_bin_sizes, (std::vector<int>{1, 2, 4}));
    EXPECT_EQ(c.augment.geometric.crop_height, 256);
    EXPECT_EQ(c.augment.geometric.crop_width, 128);
    EXPECT_EQ(c.data.train_roots, (std::vector<std::string>{"a", "b"}));
}

TEST(ParseConfig, OverridesAcceptYamlValues) {
    const PipelineConfig c = parse_config_text("", {"augment.photometric.contrast_range=[0.5, 1.5]", "ema.enabled=false",
                                                    "model.norm_kind=none", "schedule.base_lr=1"});
    EXPECT_EQ(c.augment.photometric.contrast_range, (Range{0.5, 1.5}));
    EXPECT_FALSE(c.ema.enabled);
    EXPECT_EQ(c.model.norm_kind, nn::NormKind::none);
    EXPECT_EQ(c.schedule.base_lr, 1.0);
}

TEST(ParseConfig, ValidationCitesRange) {
    const std::string msg = error_of("", {"augment.photometric.p_apply=1.5"});
    EXPECT_NE(msg.find("augment.photometric.p_apply"), std::string::npos) << msg;
    EXPECT_NE(msg.find("0 <= p <= 1"), std::string::npos) << msg;
}

TEST(ParseConfig, UnknownKeyNamed) {
    EXPECT_NE(error_of("schedule:\n  warmup: 10\n").find("schedule.warmup"), std::string::npos);
    EXPECT_NE(error_of("", {"optim.momentum=0.9"}).find("optim.momentum"), std::string::npos);
    EXPECT_NE(error_of("", {"no_equals_sign"}).find("key=value"), std::string::npos);
}

TEST(ParseConfig, TypeMismatchNamed) {
    EXPECT_NE(error_of("schedule:\n  total_iters: many\n").find("schedule.total_iters"), std::string::npos);
    EXPECT_NE(error_of("", {"train.batch_size=1.5"}).find("train.batch_size"), std::string::npos);
    EXPECT_NE(error_of("model:\n  psp_bin_sizes: 3\n").find("model.psp_bin_sizes"), std::string::npos);
    EXPECT_NE(error_of("ema: [1, 2]\n").find("ema"), std::string::npos);
}

TEST(ParseConfig, InvariantViolations) {
    EXPECT_NE(error_of("", {"train.mixed_precision=true"}).find("mixed_precision"), std::string::npos);
    EXPECT_NE(error_of("", {"augment.geometric.crop_size=[500, 512]"}).find("divisible by 32"), std::string::npos);
    EXPECT_NE(error_of("", {"model.psp_bin_sizes=[3, 2]"}).find("strictly increasing"), std::string::npos);
    EXPECT_NE(error_of("", {"ema.decay=1.0"}).find("ema.decay"), std::string::npos);
    EXPECT_NE(error_of("", {"train.eval_interval=0"}).find("train.eval_interval"), std::string::npos);
    EXPECT_NE(error_of("", {"augment.geometric.label_pad_value=0"}).find("label_pad_value"), std::string::npos);
    EXPECT_NE(error_of("", {"model.num_classes=19"}).find("num_classes"), std::string::npos);
    EXPECT_NE(error_of("key: [unclosed\n").find("malformed"), std::string::npos);
}

TEST(ParseConfig, JsonRoundTripAndStableId) {
    const PipelineConfig c = parse_config_text("", {"train.seed=3", "model.decoder_channels=64"});
    EXPECT_EQ(from_json(to_json(c)), c);
    EXPECT_EQ(config_id(c), config_id(from_json(to_json(c))));
    EXPECT_NE(config_id(c), config_id(PipelineConfig{}));
    EXPECT_EQ(config_id(c).size(), 16u);
}

TEST(ShippedConfigs, AllParse) {
    const std::filesystem::path dir = std::filesystem::path(OFFROAD_DATA_DIR).parent_path() / "configs";
    int n = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() != ".yaml") continue;
        EXPECT_NO_THROW(parse_config(e.path())) << e.path();
        ++n;
    }
    EXPECT_GE(n, 3);
    const PipelineConfig big = parse_config(dir / "paper_scale.yaml");
    EXPECT_EQ(big.augment.geometric.crop_height, 2048);
    EXPECT_EQ(big.effective_batch(), 8);
}
