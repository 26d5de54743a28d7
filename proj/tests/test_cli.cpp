#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "support.hpp"

using namespace glahrr;
using namespace testing_support;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI through the shell; stderr is discarded.
Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + GLA_HRR_BIN + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t line_count(const fs::path& p) {
  const std::string s = file_bytes(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// A 4-pair dataset and a one-step checkpoint, built once through the CLI.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new ScratchDir("cli");
    data_ = dir_->path() / "data";
    run_ = dir_->path() / "run";
    ASSERT_EQ(run("synthesize --n 4 --seed 1 --height 20 --width 30 --out " + q(data_)).code, 0);
    ASSERT_EQ(run("train --data " + q(data_) + " --out " + q(run_) +
                  " --crop-h 16 --crop-w 16 --batch-size 2 --epochs 1 --max-steps 1 --seed 3")
                  .code,
              0);
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path checkpoint() { return run_ / "checkpoints" / "final.ckpt"; }

  static ScratchDir* dir_;
  static fs::path data_, run_;
};
ScratchDir* CliTest::dir_ = nullptr;
fs::path CliTest::data_, CliTest::run_;

}  // namespace

TEST(Cli, ParamsMatchesParameterCount) {
  for (const char* variant : {"full", "sca", "add+mul", "no-ca-sa"}) {
    const Result r = run(std::string("params --variant ") + variant);
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(r.out, std::to_string(GlaHrrModel<float>(variant_by_name(variant)).parameter_count()) + "\n");
  }
  EXPECT_EQ(run("params").out, run("params --variant full").out);
}

TEST(Cli, UsageErrorsExitTwoWithoutSideEffects) {
  ScratchDir dir("cli_usage");
  const fs::path target = dir / "never";
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("synthesize --n 2 --out " + q(target) + " --bogus 1").code, 2);
  EXPECT_EQ(run("synthesize --n 0 --out " + q(target)).code, 2);
  EXPECT_EQ(run("synthesize --n 2 --out " + q(target) + " --model snow").code, 2);
  EXPECT_EQ(run("synthesize --out " + q(target)).code, 2);
  EXPECT_EQ(run("train --out " + q(target) + " --precision 16").code, 2);
  EXPECT_EQ(run("params --variant huge").code, 2);
  EXPECT_FALSE(fs::exists(target));
}

TEST(Cli, MissingDatasetWithoutEnvironmentIsUsageError) {
  ScratchDir dir("cli_env");
  EXPECT_EQ(run("evaluate --identity --out " + q(dir / "m"), "env -u GLA_HRR_DATA_DIR").code, 2);
  EXPECT_FALSE(fs::exists(dir / "m"));
}

TEST_F(CliTest, SynthesizeThenIdentityEvaluateGivesFourRows) {
  const fs::path out = dir_->path() / "eval_identity";
  const Result r = run("evaluate --identity --data " + q(data_) + " --out " + q(out));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("images 4", 0), 0u) << r.out;
  EXPECT_EQ(line_count(out / "metrics.tsv"), 6u);  // header, 4 rows, mean
}

TEST_F(CliTest, DataDirectoryFallsBackToEnvironment) {
  const fs::path out = dir_->path() / "eval_env", explicit_out = dir_->path() / "eval_explicit";
  const Result r = run("evaluate --identity --out " + q(out), "GLA_HRR_DATA_DIR=" + q(data_));
  ASSERT_EQ(r.code, 0);
  ASSERT_EQ(run("evaluate --identity --data " + q(data_) + " --out " + q(explicit_out)).code, 0);
  EXPECT_EQ(line_count(out / "metrics.tsv"), 6u);
  EXPECT_EQ(file_bytes(out / "metrics.tsv"), file_bytes(explicit_out / "metrics.tsv"));
}

TEST_F(CliTest, EvaluateCheckpointReportsParameters) {
  const fs::path out = dir_->path() / "eval_ckpt";
  const Result r = run("evaluate --checkpoint " + q(checkpoint()) + " --data " + q(data_) + " --out " + q(out));
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("params " + std::to_string(GlaHrrModel<float>(VariantConfig{}).parameter_count())),
            std::string::npos);
  EXPECT_EQ(line_count(out / "metrics.tsv"), 6u);
}

TEST_F(CliTest, DomainErrorsExitOne) {
  const fs::path junk = dir_->path() / "junk.ckpt";
  std::ofstream(junk) << "not a checkpoint";
  EXPECT_EQ(run("evaluate --checkpoint " + q(junk) + " --data " + q(data_) + " --out " + q(dir_->path() / "e1")).code,
            1);
  EXPECT_EQ(run("evaluate --identity --data " + q(dir_->path() / "nowhere") + " --out " + q(dir_->path() / "e2")).code,
            1);
}

TEST_F(CliTest, DerainKeepsImageSize) {
  const fs::path in = data_ / "rain" / "0000.png";
  const fs::path out = dir_->path() / "derained" / "clean.png";
  ASSERT_EQ(run("derain --checkpoint " + q(checkpoint()) + " --in " + q(in) + " --out " + q(out)).code, 0);
  const auto a = load_image<float>(in), b = load_image<float>(out);
  EXPECT_EQ(a.shape(), b.shape());
  EXPECT_EQ(b.h(), 20);
  EXPECT_EQ(b.w(), 30);
}

TEST_F(CliTest, DerainDirectoryWithMaps) {
  const fs::path out = dir_->path() / "derained_dir";
  ASSERT_EQ(run("derain --maps --checkpoint " + q(checkpoint()) + " --in " + q(data_ / "rain") + " --out " + q(out)).code,
            0);
  for (const char* id : {"0000", "0001", "0002", "0003"}) {
    EXPECT_TRUE(fs::exists(out / (std::string(id) + ".png")));
    for (const char* suffix : {"_W0", "_W1", "_W2", "_RA", "_RM"})
      EXPECT_TRUE(fs::exists(out / "maps" / (std::string(id) + suffix + ".png"))) << id << suffix;
  }
}

TEST_F(CliTest, InspectWritesChannelsAndRanges) {
  const fs::path out = dir_->path() / "inspect";
  ASSERT_EQ(run("inspect --checkpoint " + q(checkpoint()) + " --in " + q(data_ / "rain" / "0001.png") + " --out " +
                q(out) + " --features sca,mul --channels 0,5")
                .code,
            0);
  for (const char* name : {"sca_c0000.png", "sca_c0005.png", "mul_c0000.png", "mul_c0005.png"})
    EXPECT_TRUE(fs::exists(out / name)) << name;
  EXPECT_FALSE(fs::exists(out / "add_c0000.png"));
  EXPECT_EQ(line_count(out / "ranges.tsv"), 5u);
}

TEST_F(CliTest, ConfigFileMergesWithFlagsWinning) {
  const fs::path cfg = dir_->path() / "cfg.json";
  std::ofstream(cfg) << R"({"epochs": 9, "crop_h": 16, "crop_w": 16, "batch_size": 2, "max_steps": 1,
                           "variant": "add", "loss_weights": [1, 1, 1, 1, 0.5]})";
  const fs::path out = dir_->path() / "cfg_run";
  ASSERT_EQ(run("train --config " + q(cfg) + " --data " + q(data_) + " --out " + q(out) + " --epochs 2").code, 0);
  std::ifstream in(out / "config.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["epochs"], 2);
  EXPECT_EQ(j["crop_h"], 16);
  EXPECT_EQ(j["loss_weights"][4], 0.5);
  EXPECT_EQ(j["variant"]["use_sca"], false);
  EXPECT_EQ(load_checkpoint<float>(out / "checkpoints" / "final.ckpt")->config(), variant_by_name("add"));

  std::ofstream(dir_->path() / "bad.json") << R"({"epochz": 1})";
  EXPECT_EQ(run("train --config " + q(dir_->path() / "bad.json") + " --data " + q(data_) + " --out " +
                q(dir_->path() / "bad_run"))
                .code,
            1);
}

TEST_F(CliTest, RerunsAreIdempotent) {
  const fs::path again = dir_->path() / "data_again";
  ASSERT_EQ(run("synthesize --n 4 --seed 1 --height 20 --width 30 --out " + q(again)).code, 0);
  for (const char* f : {"manifest.tsv", "params.tsv", "rain/0002.png", "clean/0003.png"})
    EXPECT_EQ(file_bytes(again / f), file_bytes(data_ / f)) << f;

  const fs::path run2 = dir_->path() / "run_again";
  ASSERT_EQ(run("train --data " + q(data_) + " --out " + q(run2) +
                " --crop-h 16 --crop-w 16 --batch-size 2 --epochs 1 --max-steps 1 --seed 3")
                .code,
            0);
  EXPECT_EQ(file_bytes(run2 / "checkpoints" / "final.ckpt"), file_bytes(checkpoint()));
  EXPECT_EQ(file_bytes(run2 / "logs" / "train.tsv"), file_bytes(run_ / "logs" / "train.tsv"));
}
