#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ruackit/config.hpp"

using namespace ruackit;

namespace {

std::filesystem::path write_temp_config(const std::string& body) {
    auto path = std::filesystem::temp_directory_path() / "ruackit_config_test.cfg";
    std::ofstream f(path);
    f << body;
    return path;
}

}  // namespace

TEST(Config, EmptyFileYieldsPaperDefaults) {
    auto path = write_temp_config("# just a comment\n\n");
    RunConfig cfg = parse_config(path);
    EXPECT_DOUBLE_EQ(cfg.train.beta, 0.05);
    EXPECT_DOUBLE_EQ(cfg.train.gamma, 0.2);
    EXPECT_DOUBLE_EQ(cfg.train.lambda_cal, 0.1);
    EXPECT_DOUBLE_EQ(cfg.train.eps_style, 0.3);
    EXPECT_DOUBLE_EQ(cfg.train.eps_deform, 0.15);
    EXPECT_EQ(cfg.train.epochs, 20);
    EXPECT_EQ(cfg.eval.mc_samples, 20);
    std::filesystem::remove(path);
}

TEST(Config, FileValuesApplyAndFlagsWin) {
    auto path = write_temp_config("gamma = 0.5\nepochs = 8\nstyle_variant = multi\n");
    RunConfig cfg = parse_config(path);
    EXPECT_DOUBLE_EQ(cfg.train.gamma, 0.5);
    EXPECT_EQ(cfg.train.epochs, 8);
    EXPECT_EQ(cfg.train.style_variant, StyleVariant::kMulti);
    RunConfig with_flag = parse_config(path, {{"gamma", "0.7"}});
    EXPECT_DOUBLE_EQ(with_flag.train.gamma, 0.7);
    std::filesystem::remove(path);
}

TEST(Config, UnknownKeyIsNamedInError) {
    auto path = write_temp_config("gama = 0.5\n");
    try {
        parse_config(path);
        FAIL() << "expected error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("gama"), std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST(Config, TypeMismatchIsNamedInError) {
    auto path = write_temp_config("epochs = soon\n");
    try {
        parse_config(path);
        FAIL() << "expected error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("epochs"), std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST(Config, EnvOverridesFileButNotFlags) {
    auto path = write_temp_config("beta = 0.01\n");
    setenv("RUACKIT_BETA", "0.02", 1);
    RunConfig cfg = parse_config(path);
    EXPECT_DOUBLE_EQ(cfg.train.beta, 0.02);
    RunConfig flagged = parse_config(path, {{"beta", "0.03"}});
    EXPECT_DOUBLE_EQ(flagged.train.beta, 0.03);
    unsetenv("RUACKIT_BETA");
    std::filesystem::remove(path);
}

TEST(Config, TausCommaList) {
    auto path = write_temp_config("taus = 0.02,0.04\n");
    RunConfig cfg = parse_config(path);
    ASSERT_EQ(cfg.eval.taus.size(), 2u);
    EXPECT_DOUBLE_EQ(cfg.eval.taus[0], 0.02);
    EXPECT_DOUBLE_EQ(cfg.eval.taus[1], 0.04);
    std::filesystem::remove(path);
}

TEST(Config, EchoRoundTrips) {
    RunConfig cfg;
    cfg.train.gamma = 0.42;
    cfg.eval.mc_samples = 5;
    std::string echoed = echo_config(cfg);
    auto path = write_temp_config(echoed);
    RunConfig back = parse_config(path);
    EXPECT_DOUBLE_EQ(back.train.gamma, 0.42);
    EXPECT_EQ(back.eval.mc_samples, 5);
    EXPECT_EQ(echo_config(back), echoed);
    std::filesystem::remove(path);
}

TEST(Config, InvalidCurriculumRejected) {
    auto path = write_temp_config("p1 = 0.5\np2 = 0.4\n");
    EXPECT_THROW(parse_config(path), std::invalid_argument);
    std::filesystem::remove(path);
}
