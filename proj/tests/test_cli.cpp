#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rkt/checkpoint.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status = 0;
  std::string output;
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string(RKT_CLI_PATH) + " " + args + " 2>&1";
  Outcome r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  std::array<char, 512> buf{};
  while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int st = pclose(pipe);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("rkt_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "quick.cfg") << "run.out = " << (dir_ / "out").string() << "\n"
                                      << "data.per_class = 60\n"
                                      << "corruption.rate = 0.05\n"
                                      << "train.epochs = 6\n"
                                      << "train.milestones = 4\n"
                                      << "rectify.reference_samples = 80\n";
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string cfg() { return "--config " + (dir_ / "quick.cfg").string(); }
  static fs::path out() { return dir_ / "out"; }
  static inline fs::path dir_;
};

}  // namespace

TEST_F(Cli, MissingArtifactIsNamed) {
  const Outcome r = run("trojan-eval " + cfg() + " --out " + (dir_ / "empty").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("model.rkt"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("error: trojan-eval:"), std::string::npos) << r.output;
}

TEST_F(Cli, BadConfigIsReported) {
  std::ofstream(dir_ / "bad.cfg") << "run.seed = 1\ntrain.epochz = 3\n";
  const Outcome r = run("gen-data --config " + (dir_ / "bad.cfg").string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("line 2"), std::string::npos) << r.output;
}

TEST_F(Cli, UnknownSubcommandFails) { EXPECT_NE(run("frobnicate").status, 0); }

TEST_F(Cli, PipelineProducesArtifacts) {
  for (const char* seed : {"1", "2"}) {
    const std::string common = cfg() + " --seed " + seed;
    for (const char* cmd : {"gen-data", "train", "trojan-eval", "oracle", "localize"}) {
      const Outcome r = run(std::string(cmd) + " " + common);
      ASSERT_EQ(r.status, 0) << cmd << ": " << r.output;
    }
  }
  for (const char* f : {"data/train/manifest.csv", "data/test/manifest.csv", "config.cfg", "model.rkt",
                        "train_history.csv", "trojan_eval.csv", "oracle.csv", "scores.csv", "heatmap_input.pgm"})
    EXPECT_TRUE(fs::exists(out() / f)) << f;

  std::stringstream recall(slurp(out() / "recall.csv"));
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(recall, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].rfind("seed,located,oracle_top1,recall_at_1", 0), 0u);
  EXPECT_EQ(rows[1].rfind("1,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("2,", 0), 0u);

  for (const char* cmd : {"rectify", "rectify-static", "fine-tune", "report"}) {
    const Outcome r = run(std::string(cmd) + " " + cfg() + " --seed 2");
    ASSERT_EQ(r.status, 0) << cmd << ": " << r.output;
  }
  const std::string report = slurp(out() / "report.csv");
  EXPECT_NE(report.find("\nmodel,"), std::string::npos);
  EXPECT_NE(report.find("\nrectified,"), std::string::npos);
  EXPECT_NE(report.find("\nrectified_static,"), std::string::npos);
  EXPECT_NE(report.find("\nfinetuned,"), std::string::npos);
  EXPECT_TRUE(fs::exists(out() / "run.log"));
}

TEST_F(Cli, CompliantModelRectifyIsNoOp) {
  std::ofstream(dir_ / "quick.cfg", std::ios::app) << "rectify.delta = 1e9\n";
  ASSERT_EQ(run("gen-data " + cfg() + " --out " + (dir_ / "c").string()).status, 0);
  ASSERT_EQ(run("train " + cfg() + " --out " + (dir_ / "c").string()).status, 0);
  const Outcome r = run("rectify " + cfg() + " --out " + (dir_ / "c").string());
  ASSERT_EQ(r.status, 0) << r.output;
  const auto j = nlohmann::json::parse(slurp(dir_ / "c" / "rectified_report.json"));
  EXPECT_EQ(j.at("termination").get<std::string>(), "gap-met");
  EXPECT_EQ(j.at("rounds").size(), 0u);
  EXPECT_EQ(rkt::load_checkpoint(dir_ / "c" / "rectified.rkt").model, rkt::load_checkpoint(dir_ / "c" / "model.rkt").model);
}
