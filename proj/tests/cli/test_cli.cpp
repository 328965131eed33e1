#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + LONGSHORT_CLI + " " + args + " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    Run r;
    char buf[256];
    while (p && fgets(buf, sizeof buf, p)) r.out += buf;
    const int status = p ? pclose(p) : -1;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("longshort_cli_" + name);
    fs::remove_all(d);
    return d;
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

const std::string corpus = LONGSHORT_CORPUS;
const std::string tiny_lm = " --steps 2 --batch 2 --d-model 16 --l-train 32 --ppl-windows 4";

}  // namespace

TEST(Cli, TheoryGamma) {
    EXPECT_EQ(run("theory gamma --task length --l-train 10").out, "5.5\n");
    const auto sum = run("theory gamma --task sum --l-train 10");
    EXPECT_EQ(sum.code, 0);
    EXPECT_NEAR(std::stod(sum.out), 5.02747, 1e-5);
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("theory gamma --task bogus --l-train 10").code, 2);
    EXPECT_EQ(run("theory gamma --l-train 10").code, 2);
    EXPECT_EQ(run("synth --pe nope").code, 2);
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("lm --steps 0 --corpus " + corpus).code, 2);
    EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, MissingInputsExitOneWithPath) {
    const auto dir = fresh_dir("missing");
    const std::string cmd = std::string(LONGSHORT_CLI) + " metric --checkpoint /no/such.ckpt --corpus " + corpus + " --out " +
                            dir.string() + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    std::string text;
    char buf[256];
    while (fgets(buf, sizeof buf, p)) text += buf;
    EXPECT_EQ(WEXITSTATUS(pclose(p)), 1);
    EXPECT_NE(text.find("/no/such.ckpt"), std::string::npos);
    EXPECT_EQ(run("lm --corpus /no/such.txt").code, 1);
}

TEST(Cli, ConfigFileRulesAndPrecedence) {
    const auto dir = fresh_dir("config");
    fs::create_directories(dir);
    const auto cfg = dir / "c.json";
    std::ofstream(cfg) << R"({"task": "length", "l_train": 20})";
    EXPECT_EQ(run("theory gamma --config " + cfg.string()).out, "10.5\n");
    EXPECT_EQ(run("theory gamma --config " + cfg.string() + " --l-train 10").out, "5.5\n");
    std::ofstream(cfg) << R"({"task": "length", "bogus": 1})";
    EXPECT_EQ(run("theory gamma --config " + cfg.string()).code, 2);
}

TEST(Cli, SynthCurveSchema) {
    const auto dir = fresh_dir("synth");
    const auto r = run("synth --task mean --pe nope --l-train 10 --l-test 50 --steps 3 --batch 8 --d-model 16 --samples-per-length 4 --out " +
                       dir.string());
    ASSERT_EQ(r.code, 0);
    const auto rows = lines(dir / "curve.csv");
    ASSERT_EQ(rows.size(), 51u);
    EXPECT_EQ(rows[0], "length,loss,n,clamped");
    EXPECT_EQ(lines(dir / "train.csv")[0], "step,total,ce,misalign");
    EXPECT_TRUE(fs::exists(dir / "model.ckpt"));
    const auto rep = fresh_dir("synth_reparam");
    ASSERT_EQ(run("synth --task length --reparam inv-sqrt --l-test 5 --steps 2 --batch 4 --d-model 16 --samples-per-length 2 --out " +
                  rep.string()).code, 0);
    EXPECT_EQ(lines(rep / "curve.csv")[0], "length,loss,n,clamped");
}

TEST(Cli, TheoryCurveSchema) {
    const auto dir = fresh_dir("curve");
    ASSERT_EQ(run("theory curve --task length --l-train 10 --l-test-max 12 --out " + dir.string()).code, 0);
    const auto rows = lines(dir / "theory_length.csv");
    ASSERT_EQ(rows.size(), 13u);
    EXPECT_EQ(rows[0], "task,l_train,l_test,gamma_star,gamma_fitted,gen_error_closed,gen_error_measured");
}

TEST(Cli, EnvironmentOverridesOutputDirectory) {
    const auto env_dir = fresh_dir("env");
    const auto flag_dir = fresh_dir("flag");
    ASSERT_EQ(run("theory curve --task sum --l-test-max 3 --out " + flag_dir.string(), "LONGSHORT_OUT=" + env_dir.string()).code, 0);
    EXPECT_TRUE(fs::exists(env_dir / "theory_sum.csv"));
    EXPECT_FALSE(fs::exists(flag_dir / "theory_sum.csv"));
}

TEST(Cli, LmMetricAndGrid) {
    const auto lm_dir = fresh_dir("lm");
    ASSERT_EQ(run("lm --corpus " + corpus + " --alpha 0.1" + tiny_lm + " --out " + lm_dir.string()).code, 0);
    const auto train = lines(lm_dir / "train.csv");
    ASSERT_EQ(train.size(), 3u);
    EXPECT_EQ(train[0], "step,total,ce,misalign");

    const auto metric_dir = fresh_dir("metric");
    const auto m = run("metric --checkpoint " + (lm_dir / "model.ckpt").string() + " --corpus " + corpus +
                       " --variant sce --l-train 32 --samples 8 --out " + metric_dir.string());
    ASSERT_EQ(m.code, 0);
    const auto json = nlohmann::json::parse(m.out);
    EXPECT_TRUE(json.contains("estimate"));
    EXPECT_EQ(json.at("variant"), "sce");

    const auto grid_dir = fresh_dir("grid");
    const auto g = run("grid --corpus " + corpus + " --alphas 0,0.1 --pes nope,rope --eval-lengths 64 --misalign-samples 8" + tiny_lm +
                       " --out " + grid_dir.string());
    ASSERT_EQ(g.code, 0);
    const auto rows = lines(grid_dir / "grid.csv");
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0], "label,pe,alpha,l_train,loss_train,misalign,long_logppl");
    const auto report = nlohmann::json::parse(std::ifstream(grid_dir / "grid.json"));
    EXPECT_TRUE(report.contains("r_misalign_long_logppl"));
    EXPECT_TRUE(report.contains("r_train_long_logppl"));
    EXPECT_EQ(run("grid --corpus " + corpus + " --alphas 0 --pes nope" + tiny_lm).code, 2);
}
