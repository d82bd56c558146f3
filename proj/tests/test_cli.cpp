#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "artface/dataset.hpp"
#include "artface/landmarks.hpp"
#include "artface/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace artface;

namespace {

struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / ("artface_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        manifest_ = write_toy_corpus(dir_ / "toy", 2, 11, kHighResSize, 1, 2);
        torch::manual_seed(1);
        ModelBundle::create(4, 0).save(dir_ / "model");
    }
    static void TearDownTestSuite() { fs::remove_all(dir_); }

    static CliRun run(const std::string& args) {
        const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
        const std::string cmd =
            std::string(ARTFACE_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
        const int status = std::system(cmd.c_str());
        return {WEXITSTATUS(status), slurp(out), slurp(err)};
    }

    static std::string p(const fs::path& path) { return "'" + path.string() + "'"; }
    static fs::path image(int k) { return dir_ / "toy" / "images" / ("toy_000" + std::to_string(k) + ".png"); }
    static fs::path sidecar(int k) { return dir_ / "toy" / "landmarks" / ("toy_000" + std::to_string(k) + ".json"); }

    static inline fs::path dir_;
    static inline fs::path manifest_;
};

}  // namespace

TEST_F(CliTest, InferWritesSixtyEightPoints) {
    const fs::path out = dir_ / "infer" / "pred.json";
    const auto r = run("infer " + p(image(3)) + " --model " + p(dir_ / "model") + " --out " + p(out) + " --vis " +
                       p(dir_ / "infer" / "dots.png"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = json::parse(slurp(out));
    EXPECT_EQ(j["points"].size(), 68u);
    EXPECT_EQ(j["width"], 1024);
    EXPECT_TRUE(fs::exists(dir_ / "infer" / "dots.png"));
    // The sidecar reads back as a landmark file.
    EXPECT_EQ(read_landmark_file(out).landmarks.image_width(), 1024);

    // Same seed, same bytes.
    const fs::path again = dir_ / "infer" / "again.json";
    ASSERT_EQ(run("infer " + p(image(3)) + " --model " + p(dir_ / "model") + " --out " + p(again)).code, 0);
    EXPECT_EQ(json::parse(slurp(again))["points"], j["points"]);
}

TEST_F(CliTest, ModelFromEnvironment) {
    const fs::path out = dir_ / "env.json";
    const auto r = run("infer " + p(image(3)) + " --out " + p(out));
    EXPECT_NE(r.code, 0);
    const std::string cmd = "ARTFACE_MODEL=" + p(dir_ / "model") + " " + ARTFACE_CLI + " infer " + p(image(3)) +
                            " --out " + p(out) + " 2>/dev/null";
    EXPECT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_TRUE(fs::exists(out));
}

TEST_F(CliTest, EvaluateWritesReportColumns) {
    const fs::path out = dir_ / "eval";
    const auto r = run("evaluate --model " + p(dir_ / "model") + " --corpus " + p(manifest_) + " --split test --out " +
                       p(out));
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream report(slurp(out / "report.csv"));
    std::string header, row;
    std::getline(report, header);
    EXPECT_EQ(header,
              "set,n,me68_mean,me68_std,me51_mean,me51_std,global_me68_mean,global_me68_std,global_me51_mean,"
              "global_me51_std,failed");
    int rows = 0;
    while (std::getline(report, row)) {
        if (!row.empty()) ++rows;
    }
    EXPECT_GE(rows, 2);
    EXPECT_NE(slurp(out / "images.csv").find("toy_0003"), std::string::npos);
    EXPECT_TRUE(fs::exists(out / "parts.csv"));
    EXPECT_EQ(json::parse(slurp(out / "effective_config.json"))["split"], "test");
}

TEST_F(CliTest, RegisterSelfIsIdentity) {
    const fs::path out = dir_ / "reg";
    const auto r = run("register " + p(image(0)) + " " + p(image(0)) + " --landmarks " + p(sidecar(0)) + " " +
                       p(sidecar(0)) + " --out " + p(out) + " --contours " + p(image(0)) + " " + p(image(0)));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = json::parse(slurp(out / "transform.json"))["transform"];
    EXPECT_NEAR(t["angle_rad"].get<double>(), 0.0, 1e-6);
    EXPECT_NEAR(t["scale"].get<double>(), 1.0, 1e-6);
    EXPECT_NEAR(t["tx"].get<double>(), 0.0, 1e-6);
    EXPECT_NEAR(t["ty"].get<double>(), 0.0, 1e-6);
    for (const char* f : {"overlay.png", "matches.png", "warped.png", "intersection.png", "effective_config.json"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
}

TEST_F(CliTest, FlagsBeatConfigBeatDefaults) {
    const fs::path cfg = dir_ / "cfg.json";
    std::ofstream(cfg) << R"({"padding": 0.3, "split": "val"})";
    auto effective = [&](const std::string& extra, const std::string& name) {
        const fs::path out = dir_ / name;
        const auto r = run("evaluate --model " + p(dir_ / "model") + " --corpus " + p(manifest_) + " --out " + p(out) +
                           " " + extra);
        EXPECT_EQ(r.code, 0) << r.err;
        return json::parse(slurp(out / "effective_config.json"));
    };
    const auto d = effective("", "prec_default");
    EXPECT_DOUBLE_EQ(d["padding"].get<double>(), 0.25);
    EXPECT_EQ(d["split"], "test");
    const auto c = effective("--config " + p(cfg), "prec_config");
    EXPECT_DOUBLE_EQ(c["padding"].get<double>(), 0.3);
    EXPECT_EQ(c["split"], "val");
    const auto f = effective("--config " + p(cfg) + " --padding 0.4", "prec_flag");
    EXPECT_DOUBLE_EQ(f["padding"].get<double>(), 0.4);
    EXPECT_EQ(f["split"], "val");
}

TEST_F(CliTest, FailuresAreOneLineJson) {
    auto check = [](const CliRun& r, const std::string& kind) {
        EXPECT_NE(r.code, 0);
        ASSERT_FALSE(r.err.empty());
        EXPECT_EQ(r.err.find('\n'), r.err.size() - 1) << r.err;
        const auto j = json::parse(r.err);
        EXPECT_EQ(j["error"], kind) << r.err;
        EXPECT_TRUE(j["detail"].is_string());
    };
    check(run("infer " + p(dir_ / "missing.png") + " --model " + p(dir_ / "model") + " --out " + p(dir_ / "x.json")),
          "io");
    check(run("evaluate --model " + p(dir_ / "model") + " --corpus " + p(manifest_) + " --out " + p(dir_ / "e") +
              " --split nowhere"),
          "validation");
    check(run("frobnicate"), "usage");
    const fs::path bad = dir_ / "bad.json";
    std::ofstream(bad) << R"({"paddin": 0.3})";
    check(run("evaluate --model " + p(dir_ / "model") + " --corpus " + p(manifest_) + " --out " + p(dir_ / "e") +
              " --config " + p(bad)),
          "validation");
    // Validation happens before anything is written.
    EXPECT_FALSE(fs::exists(dir_ / "e"));
}

TEST_F(CliTest, AugmentIsDeterministicUnderSeed) {
    auto build = [&](const std::string& name) {
        const fs::path out = dir_ / name;
        const auto r = run("augment --corpus " + p(manifest_) + " --out " + p(out) + " --per-image 2 --seed 4");
        EXPECT_EQ(r.code, 0) << r.err;
        return out;
    };
    const auto a = build("aug_a");
    const auto b = build("aug_b");
    const auto m = read_manifest(a / "manifest.csv");
    ASSERT_EQ(m.rows.size(), 4u);
    EXPECT_TRUE(validate_manifest(m).empty());
    for (const auto& row : m.rows) {
        EXPECT_EQ(slurp(a / row.landmarks), slurp(b / row.landmarks));
        EXPECT_EQ(slurp(a / row.image), slurp(b / row.image));
    }
}

TEST_F(CliTest, RenderHeatmaps) {
    const fs::path out = dir_ / "heat";
    const auto r = run("render-heatmaps " + p(image(3)) + " --model " + p(dir_ / "model") + " --out " + p(out));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto g = read_heatmap_blob(out / "global.heatmaps");
    EXPECT_EQ(g.channels, 68);
    EXPECT_EQ(g.height, 256);
    for (const char* name : {"left_eye_region", "right_eye_region", "nose", "mouth"})
        EXPECT_TRUE(fs::exists(out / (std::string(name) + ".png"))) << name;
}
