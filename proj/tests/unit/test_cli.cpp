#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(TEXTDEFORM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("textdeform_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& leaf) const { return (dir_ / leaf).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("train --no-such-flag"), 2);
}

TEST_F(Cli, SynthThenGtgen) {
  ASSERT_EQ(run("synth --out " + path("data") + " --train 2 --val 1 --seed 3 --set synth.image_size=64"), 0);
  EXPECT_TRUE(fs::exists(path("data/manifest.json")));
  EXPECT_TRUE(fs::exists(path("data/config.resolved.json")));
  EXPECT_EQ(run("gtgen --out " + path("gt") + " --annotation " + path("data/annotations/train_00000.json")), 0);
  EXPECT_TRUE(fs::exists(path("gt/train_00000.gt.bin")));
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(run("synth --out " + path("d") + " --set train.lr=-1"), 2);
  EXPECT_EQ(run("synth --out " + path("d") + " --set bogus.key=1"), 2);
  EXPECT_EQ(run("synth --out " + path("d") + " --encoder transformer"), 2);
  std::ofstream(path("bad.json")) << "{\"unknown\": 1}";
  EXPECT_EQ(run("synth --out " + path("d") + " --config " + path("bad.json")), 2);
}

TEST_F(Cli, DataErrorsExitThree) {
  EXPECT_EQ(run("train --out " + path("run") + " --data " + path("missing")), 3);
  EXPECT_EQ(run("eval --out " + path("ev") + " --checkpoint " + path("nothing") + " --data " + path("missing")), 3);
  std::ofstream(path("m.json")) << "{\"format\": 1";
  EXPECT_EQ(run("infer --out " + path("inf") + " --checkpoint " + path("m") + " " + path("x.png")), 3);
}

TEST_F(Cli, TrainEvalInferSmoke) {
  ASSERT_EQ(run("synth --out " + path("data") + " --train 2 --val 1 --seed 3 --set synth.image_size=64"), 0);
  const std::string model = " --set model.backbone.base_channels=4 --set model.backbone.shared_dim=8"
                            " --set model.backbone.fusion_levels=3 --set model.head.hidden=4"
                            " --set model.deform.rnn_hidden=4 --set model.deform.gcn_width=4"
                            " --set model.deform.proj_width=4 --set model.deform.decoder_widths=[8]"
                            " --set train.crop_size=64 --set augment.output_size=64"
                            " --set train.batch=2";
  ASSERT_EQ(run("train --out " + path("run") + " --data " + path("data") + " --set train.epochs=1" + model), 0);
  EXPECT_TRUE(fs::exists(path("run/metrics.csv")));
  EXPECT_TRUE(fs::exists(path("run/last.json")));
  EXPECT_EQ(run("eval --out " + path("ev") + " --checkpoint " + path("run/last") + " --data " + path("data")), 0);
  EXPECT_TRUE(fs::exists(path("ev/metrics.json")));
  EXPECT_EQ(run("infer --out " + path("inf") + " --checkpoint " + path("run/last") + " --overlays " +
                path("data/images/val_00000.png")),
            0);
  EXPECT_TRUE(fs::exists(path("inf/val_00000.det.json")));
  EXPECT_EQ(run("infer --out " + path("inf2") + " --checkpoint " + path("run/last") + " " + path("nope.png")), 3);
}
